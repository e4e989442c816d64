#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mdmf/autograd.hpp"
#include "mdmf/encoders.hpp"
#include "mdmf/params.hpp"

namespace mdmf {

enum class ViewKind { local, global, none };

ViewKind parse_view_kind(const std::string& s);
const char* to_string(ViewKind v);

struct ContextFeatures {
  ag::Var data;  // T x D, or B*T x D when several clips are stacked
  ViewKind view = ViewKind::none;
};

// 1-D convolution along time. Tap k reads input frame t - offsets[k];
// out-of-clip frames are zero.
struct TemporalConv {
  std::vector<ag::Var> taps;  // D x D each
  std::vector<int> offsets;
  ag::Var bias;  // 1 x D

  ag::Var forward(const ag::Var& x, Eigen::Index frames) const;
  NamedVars parameters(const std::string& prefix) const;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(Eigen::Index dim, double momentum = 0.1, double eps = 1e-5);

  // Training mode normalises with batch statistics over all rows and updates
  // the running averages; inference mode uses the running averages.
  ag::Var forward(const ag::Var& x, bool training);

  ag::Var gamma, beta;
  ag::Var running_mean, running_var;  // 1 x D constants

  NamedVars parameters(const std::string& prefix) const;
  NamedVars buffers(const std::string& prefix) const;

 private:
  double momentum_ = 0.1;
  double eps_ = 1e-5;
};

// Conv -> ReLU -> BN, twice, with same-padded kernels.
class LocalContextExtractor {
 public:
  LocalContextExtractor() = default;
  LocalContextExtractor(Eigen::Index dim, int kernel, std::uint64_t seed);

  // `x` stacks clips of `frames` rows each.
  ag::Var forward(const ag::Var& x, Eigen::Index frames, bool training);
  ContextFeatures operator()(const FrameEmbeddingSeq& f, bool training = false);

  TemporalConv conv1, conv2;
  BatchNorm bn1, bn2;

  NamedVars parameters() const;
  NamedVars buffers() const;
};

// Causal dilated TCN; the last frame's output is broadcast over time and added
// to the input.
class GlobalContextExtractor {
 public:
  GlobalContextExtractor() = default;
  GlobalContextExtractor(Eigen::Index dim, std::vector<int> dilations, std::uint64_t seed,
                         int kernel = 2);

  ag::Var tcn(const ag::Var& x, Eigen::Index frames) const;
  ag::Var forward(const ag::Var& x, Eigen::Index frames) const;
  ContextFeatures operator()(const FrameEmbeddingSeq& f) const;

  std::vector<TemporalConv> layers;

  int receptive_field() const;
  NamedVars parameters() const;

 private:
  int kernel_ = 2;
};

ContextFeatures ntce(const FrameEmbeddingSeq& f);

int tcn_receptive_field(const std::vector<int>& dilations, int kernel);
// Message when the last output frame cannot see all `frames` inputs.
std::optional<std::string> tcn_coverage_warning(const std::vector<int>& dilations, int kernel,
                                                int frames);

}  // namespace mdmf
