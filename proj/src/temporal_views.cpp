#include "mdmf/temporal_views.hpp"

#include <cmath>

#include "mdmf/errors.hpp"

namespace mdmf {

ag::Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  ag::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

ViewKind parse_view_kind(const std::string& s) {
  if (s == "local") return ViewKind::local;
  if (s == "global") return ViewKind::global;
  if (s == "none") return ViewKind::none;
  throw ParamError("unknown view '" + s + "' (expected local, global or none)");
}

const char* to_string(ViewKind v) {
  switch (v) {
    case ViewKind::local: return "local";
    case ViewKind::global: return "global";
    case ViewKind::none: return "none";
  }
  return "?";
}

ag::Var TemporalConv::forward(const ag::Var& x, Eigen::Index frames) const {
  ag::Var out;
  for (std::size_t k = 0; k < taps.size(); ++k) {
    ag::Var shifted = offsets[k] == 0 ? x : ag::shift_rows(x, offsets[k], frames);
    ag::Var term = ag::matmul(shifted, taps[k]);
    out = out.defined() ? ag::add(out, term) : term;
  }
  return ag::add_row(out, bias);
}

NamedVars TemporalConv::parameters(const std::string& prefix) const {
  NamedVars out;
  for (std::size_t k = 0; k < taps.size(); ++k) out.emplace_back(prefix + "tap" + std::to_string(k), taps[k]);
  out.emplace_back(prefix + "bias", bias);
  return out;
}

BatchNorm::BatchNorm(Eigen::Index dim, double momentum, double eps)
    : gamma(ag::parameter(ag::Matrix::Ones(1, dim))),
      beta(ag::parameter(ag::Matrix::Zero(1, dim))),
      running_mean(ag::constant(ag::Matrix::Zero(1, dim))),
      running_var(ag::constant(ag::Matrix::Ones(1, dim))),
      momentum_(momentum),
      eps_(eps) {}

ag::Var BatchNorm::forward(const ag::Var& x, bool training) {
  if (!training) {
    return ag::affine_normalize_cols(x, running_mean.value().row(0), running_var.value().row(0),
                                     gamma, beta, eps_);
  }
  ag::RowVector mu, var;
  ag::Var y = ag::batch_norm_cols(x, gamma, beta, eps_, &mu, &var);
  const double n = static_cast<double>(x.rows());
  const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
  running_mean.mutable_value() = (1.0 - momentum_) * running_mean.value() + momentum_ * mu;
  running_var.mutable_value() = (1.0 - momentum_) * running_var.value() + momentum_ * unbias * var;
  return y;
}

NamedVars BatchNorm::parameters(const std::string& prefix) const {
  return {{prefix + "gamma", gamma}, {prefix + "beta", beta}};
}

NamedVars BatchNorm::buffers(const std::string& prefix) const {
  return {{prefix + "running_mean", running_mean}, {prefix + "running_var", running_var}};
}

namespace {

TemporalConv make_conv(Rng& rng, Eigen::Index dim, std::vector<int> offsets, double stddev) {
  TemporalConv c;
  c.offsets = std::move(offsets);
  for (std::size_t k = 0; k < c.offsets.size(); ++k) {
    c.taps.push_back(ag::parameter(gaussian_matrix(rng, dim, dim, stddev)));
  }
  c.bias = ag::parameter(ag::Matrix::Zero(1, dim));
  return c;
}

}  // namespace

LocalContextExtractor::LocalContextExtractor(Eigen::Index dim, int kernel, std::uint64_t seed) {
  if (kernel < 1 || kernel % 2 == 0) throw ParamError("views.ltce.kernel must be odd and >= 1");
  Rng rng(seed);
  std::vector<int> offsets;
  for (int k = 0; k < kernel; ++k) offsets.push_back(kernel / 2 - k);
  const double stddev = std::sqrt(2.0 / (kernel * static_cast<double>(dim)));
  conv1 = make_conv(rng, dim, offsets, stddev);
  conv2 = make_conv(rng, dim, offsets, stddev);
  bn1 = BatchNorm(dim);
  bn2 = BatchNorm(dim);
}

ag::Var LocalContextExtractor::forward(const ag::Var& x, Eigen::Index frames, bool training) {
  const int reach = static_cast<int>(conv1.taps.size()) / 2 * 2 + 1;
  if (frames < reach) {
    throw ShapeError("LTCE needs at least " + std::to_string(reach) + " frames, got " +
                     std::to_string(frames));
  }
  ag::Var h = bn1.forward(ag::relu(conv1.forward(x, frames)), training);
  return bn2.forward(ag::relu(conv2.forward(h, frames)), training);
}

ContextFeatures LocalContextExtractor::operator()(const FrameEmbeddingSeq& f, bool training) {
  return {forward(f.data, f.frames(), training), ViewKind::local};
}

NamedVars LocalContextExtractor::parameters() const {
  NamedVars out;
  append_prefixed(out, "conv1.", conv1.parameters(""));
  append_prefixed(out, "bn1.", bn1.parameters(""));
  append_prefixed(out, "conv2.", conv2.parameters(""));
  append_prefixed(out, "bn2.", bn2.parameters(""));
  return out;
}

NamedVars LocalContextExtractor::buffers() const {
  NamedVars out;
  append_prefixed(out, "bn1.", bn1.buffers(""));
  append_prefixed(out, "bn2.", bn2.buffers(""));
  return out;
}

int tcn_receptive_field(const std::vector<int>& dilations, int kernel) {
  int rf = 1;
  for (int d : dilations) rf += (kernel - 1) * d;
  return rf;
}

std::optional<std::string> tcn_coverage_warning(const std::vector<int>& dilations, int kernel,
                                                int frames) {
  const int rf = tcn_receptive_field(dilations, kernel);
  if (rf >= frames) return std::nullopt;
  return "GTCE receptive field " + std::to_string(rf) + " is shorter than " +
         std::to_string(frames) + " frames; the broadcast frame will not see the whole clip";
}

GlobalContextExtractor::GlobalContextExtractor(Eigen::Index dim, std::vector<int> dilations,
                                               std::uint64_t seed, int kernel)
    : kernel_(kernel) {
  if (dilations.empty()) throw ParamError("views.tcn.dilations must not be empty");
  if (kernel < 1) throw ParamError("TCN kernel must be >= 1");
  Rng rng(seed);
  const double stddev = std::sqrt(1.0 / (kernel * static_cast<double>(dim)));
  for (int d : dilations) {
    if (d < 1) throw ParamError("TCN dilations must be >= 1");
    std::vector<int> offsets;
    for (int k = kernel - 1; k >= 0; --k) offsets.push_back(k * d);
    layers.push_back(make_conv(rng, dim, offsets, stddev));
  }
}

ag::Var GlobalContextExtractor::tcn(const ag::Var& x, Eigen::Index frames) const {
  ag::Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h, frames);
    if (i + 1 < layers.size()) h = ag::relu(h);
  }
  return h;
}

ag::Var GlobalContextExtractor::forward(const ag::Var& x, Eigen::Index frames) const {
  if (frames < 1 || x.rows() % frames != 0) throw ShapeError("GTCE: rows not a multiple of frames");
  ag::Var h = tcn(x, frames);
  const Eigen::Index clips = x.rows() / frames;
  std::vector<ag::Var> parts;
  parts.reserve(static_cast<std::size_t>(clips));
  for (Eigen::Index c = 0; c < clips; ++c) {
    parts.push_back(ag::repeat_row(ag::slice_rows(h, c * frames + frames - 1, 1), frames));
  }
  ag::Var broadcast = clips == 1 ? parts[0] : ag::concat_rows(parts);
  return ag::add(broadcast, x);
}

ContextFeatures GlobalContextExtractor::operator()(const FrameEmbeddingSeq& f) const {
  return {forward(f.data, f.frames()), ViewKind::global};
}

int GlobalContextExtractor::receptive_field() const {
  int rf = 1;
  for (const auto& l : layers) rf += l.offsets.front();
  return rf;
}

NamedVars GlobalContextExtractor::parameters() const {
  NamedVars out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    append_prefixed(out, "layer" + std::to_string(i) + ".", layers[i].parameters(""));
  }
  return out;
}

ContextFeatures ntce(const FrameEmbeddingSeq& f) { return {f.data, ViewKind::none}; }

}  // namespace mdmf
