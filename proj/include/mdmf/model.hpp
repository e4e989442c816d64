#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mdmf/config.hpp"

namespace mdmf {

struct SampleEmbedding {
  std::string id;
  std::string label;
  ViewKind view = ViewKind::none;
  SampleRole role = SampleRole::support;
  ag::RowVector pooled;  // mean of the fused visual rows
};

struct EpisodeOutput {
  DistanceTable distances;  // P x N per view and fused
  ag::Var probs;            // P x N
  std::vector<int> predictions;
  double accuracy = 0.0;

  // Present only when both views run with distillation enabled.
  std::vector<mvmd::ViewPosteriors> posteriors;
  std::vector<mvmd::QueryScores> scores;
  mvmd::ReliabilityPartition partition;

  ag::Var main_loss;
  ag::Var loss_g2l;
  ag::Var loss_l2g;
  ag::Var total_loss;

  std::vector<SampleEmbedding> embeddings;  // filled when requested
};

struct ForwardOptions {
  bool training = false;
  bool collect_embeddings = false;
};

class MdmfModel {
 public:
  explicit MdmfModel(const RunConfig& cfg);

  EpisodeOutput forward_episode(const Episode& ep, const ForwardOptions& opts = {});

  // Learnable tensors in a stable order; names are checkpoint keys.
  NamedVars parameters() const;
  NamedVars buffers() const;

  const RunConfig& config() const { return cfg_; }
  const std::optional<std::string>& warning() const { return warning_; }

  EncoderPair encoders;
  LocalContextExtractor ltce;
  GlobalContextExtractor gtce;
  std::map<ViewKind, FusionEncoder> mmfe;
  ag::Var null_token;  // 1 x D, stands in for the query prompt without PPS

 private:
  std::vector<ag::Var> context(ViewKind view, const std::vector<ag::Var>& clips, bool training);

  RunConfig cfg_;
  std::optional<std::string> warning_;
};

}  // namespace mdmf
