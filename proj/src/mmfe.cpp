#include "mdmf/mmfe.hpp"

#include <array>
#include <cmath>

#include "mdmf/errors.hpp"

namespace mdmf {

TokenPrefixedSeq concat_token(const PromptEmbedding& token, const ag::Var& frames) {
  if (token.data.rows() != 1) throw ShapeError("concat_token: prompt must be a single row");
  if (token.data.cols() != frames.cols()) {
    throw ShapeError("concat_token: prompt dim " + std::to_string(token.data.cols()) +
                     " vs frame dim " + std::to_string(frames.cols()));
  }
  const std::array<ag::Var, 2> parts{token.data, frames};
  return {ag::concat_rows(parts)};
}

NamedVars CrossAttentionBlock::parameters(const std::string& p) const {
  return {{p + "wq", wq},   {p + "bq", bq},   {p + "wk", wk},
          {p + "bk", bk},   {p + "wv", wv},   {p + "bv", bv},
          {p + "wo", wo},   {p + "bo", bo},   {p + "ln1.gamma", ln1_gamma},
          {p + "ln1.beta", ln1_beta},         {p + "w1", w1},
          {p + "b1", b1},   {p + "w2", w2},   {p + "b2", b2},
          {p + "ln2.gamma", ln2_gamma},       {p + "ln2.beta", ln2_beta}};
}

FusionEncoder::FusionEncoder(Eigen::Index frames, Eigen::Index dim, const MmfeConfig& cfg,
                             std::uint64_t seed)
    : heads_(cfg.heads) {
  if (cfg.heads < 1 || dim % cfg.heads != 0) {
    throw ParamError("mmfe.heads must divide the embedding dim");
  }
  if (cfg.layers < 1) throw ParamError("mmfe.layers must be >= 1");
  if (cfg.ffn_mult < 1) throw ParamError("mmfe.ffn_mult must be >= 1");
  Rng rng(seed);
  pos = ag::parameter(gaussian_matrix(rng, frames + 1, dim, cfg.pos_init_std));
  const Eigen::Index ffn = dim * cfg.ffn_mult;
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  const double sd_ffn = 1.0 / std::sqrt(static_cast<double>(ffn));
  auto zeros = [](Eigen::Index c) { return ag::parameter(ag::Matrix::Zero(1, c)); };
  for (int l = 0; l < cfg.layers; ++l) {
    CrossAttentionBlock b;
    b.wq = ag::parameter(gaussian_matrix(rng, dim, dim, sd));
    b.wk = ag::parameter(gaussian_matrix(rng, dim, dim, sd));
    b.wv = ag::parameter(gaussian_matrix(rng, dim, dim, sd));
    b.wo = ag::parameter(gaussian_matrix(rng, dim, dim, sd));
    b.bq = zeros(dim);
    b.bk = zeros(dim);
    b.bv = zeros(dim);
    b.bo = zeros(dim);
    b.ln1_gamma = ag::parameter(ag::Matrix::Ones(1, dim));
    b.ln1_beta = zeros(dim);
    b.w1 = ag::parameter(gaussian_matrix(rng, dim, ffn, sd));
    b.b1 = zeros(ffn);
    b.w2 = ag::parameter(gaussian_matrix(rng, ffn, dim, sd_ffn));
    b.b2 = zeros(dim);
    b.ln2_gamma = ag::parameter(ag::Matrix::Ones(1, dim));
    b.ln2_beta = zeros(dim);
    blocks.push_back(std::move(b));
  }
}

ag::Var FusionEncoder::block_forward(const CrossAttentionBlock& b, const ag::Var& q,
                                     const ag::Var& kv) const {
  const Eigen::Index dim = q.cols();
  const Eigen::Index head_dim = dim / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  ag::Var qp = ag::add_row(ag::matmul(q, b.wq), b.bq);
  ag::Var kp = ag::add_row(ag::matmul(kv, b.wk), b.bk);
  ag::Var vp = ag::add_row(ag::matmul(kv, b.wv), b.bv);
  std::vector<ag::Var> head_out;
  head_out.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    ag::Var qh = ag::slice_cols(qp, h * head_dim, head_dim);
    ag::Var kh = ag::slice_cols(kp, h * head_dim, head_dim);
    ag::Var vh = ag::slice_cols(vp, h * head_dim, head_dim);
    ag::Var attn = ag::softmax_rows(ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_sqrt));
    head_out.push_back(ag::matmul(attn, vh));
  }
  ag::Var merged = heads_ == 1 ? head_out[0] : ag::concat_cols(head_out);
  ag::Var attended = ag::add_row(ag::matmul(merged, b.wo), b.bo);
  ag::Var h1 = ag::layer_norm_rows(ag::add(q, attended), b.ln1_gamma, b.ln1_beta);
  ag::Var ff = ag::add_row(ag::matmul(ag::relu(ag::add_row(ag::matmul(h1, b.w1), b.b1)), b.w2), b.b2);
  return ag::layer_norm_rows(ag::add(h1, ff), b.ln2_gamma, b.ln2_beta);
}

FusedFeatures FusionEncoder::fuse(const TokenPrefixedSeq& query_stream,
                                  const TokenPrefixedSeq& kv_stream, ViewKind view,
                                  SampleRole role) const {
  const auto& q = query_stream.data;
  const auto& kv = kv_stream.data;
  if (q.rows() != pos.rows() || kv.rows() != pos.rows() || q.cols() != pos.cols() ||
      kv.cols() != pos.cols()) {
    throw ShapeError("fuse: expected " + std::to_string(pos.rows()) + "x" +
                     std::to_string(pos.cols()) + " streams, got " + std::to_string(q.rows()) +
                     "x" + std::to_string(q.cols()) + " and " + std::to_string(kv.rows()) + "x" +
                     std::to_string(kv.cols()));
  }
  ag::Var kv_in = ag::add(kv, pos);
  ag::Var h = ag::add(q, pos);
  for (const auto& b : blocks) h = block_forward(b, h, kv_in);
  return {h, view, role};
}

NamedVars FusionEncoder::parameters() const {
  NamedVars out{{"pos", pos}};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    append_prefixed(out, "block" + std::to_string(i) + ".", blocks[i].parameters(""));
  }
  return out;
}

}  // namespace mdmf
