#pragma once

#include <cstdint>
#include <vector>

#include "mdmf/autograd.hpp"
#include "mdmf/encoders.hpp"
#include "mdmf/params.hpp"
#include "mdmf/temporal_views.hpp"

namespace mdmf {

// (T+1) x D: row 0 is the prompt embedding, rows 1..T the frame features.
struct TokenPrefixedSeq {
  ag::Var data;
};

enum class SampleRole { support, query };

struct FusedFeatures {
  ag::Var data;  // (T+1) x D
  ViewKind view = ViewKind::none;
  SampleRole role = SampleRole::support;

  ag::Var prompt_row() const { return ag::slice_rows(data, 0, 1); }
  ag::Var visual_rows() const { return ag::slice_rows(data, 1, data.rows() - 1); }
};

TokenPrefixedSeq concat_token(const PromptEmbedding& token, const ag::Var& frames);

struct MmfeConfig {
  int heads = 8;
  int layers = 1;
  int ffn_mult = 4;
  double pos_init_std = 0.02;
};

// One post-norm cross-attention block.
struct CrossAttentionBlock {
  ag::Var wq, wk, wv, wo;  // D x D
  ag::Var bq, bk, bv, bo;  // 1 x D
  ag::Var ln1_gamma, ln1_beta;
  ag::Var w1, b1;  // D x ffn, 1 x ffn
  ag::Var w2, b2;  // ffn x D, 1 x D
  ag::Var ln2_gamma, ln2_beta;

  NamedVars parameters(const std::string& prefix) const;
};

// Cross transformer: queries come from the context stream, keys and values
// from the raw visual stream; both get the learned positional embedding.
class FusionEncoder {
 public:
  FusionEncoder() = default;
  FusionEncoder(Eigen::Index frames, Eigen::Index dim, const MmfeConfig& cfg, std::uint64_t seed);

  FusedFeatures fuse(const TokenPrefixedSeq& query_stream, const TokenPrefixedSeq& kv_stream,
                     ViewKind view = ViewKind::none, SampleRole role = SampleRole::support) const;

  ag::Var pos;  // (T+1) x D
  std::vector<CrossAttentionBlock> blocks;

  int heads() const { return heads_; }
  NamedVars parameters() const;

 private:
  ag::Var block_forward(const CrossAttentionBlock& b, const ag::Var& q, const ag::Var& kv) const;

  int heads_ = 8;
};

}  // namespace mdmf
