#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mdmf/config.hpp"
#include "mdmf/model.hpp"

namespace mdmf {

class Adam {
 public:
  Adam() = default;
  Adam(NamedVars params, double lr, double beta1, double beta2, double eps);

  // Scales the accumulated gradients by `grad_scale`, applies one update and
  // clears the gradients.
  void step(double grad_scale = 1.0);
  void zero_grad();

  const NamedVars& params() const { return params_; }
  std::vector<ag::Matrix> m, v;
  std::uint64_t t = 0;

 private:
  NamedVars params_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

struct MetricsRecord {
  int episode = 0;
  double loss_main = 0.0;
  double loss_g2l = 0.0;
  double loss_l2g = 0.0;
  double loss_total = 0.0;
  double accuracy = 0.0;
  int omega_g = 0;
  int omega_l = 0;
  bool optimizer_step = false;
  double wall_ms = 0.0;

  std::string to_json(bool with_timing = true) const;
};

using MetricsSink = std::function<void(const std::string& json_line)>;
MetricsSink stream_sink(std::ostream& os);

struct TrainState {
  std::uint64_t episodes_done = 0;
  std::uint64_t optimizer_steps = 0;
};

struct EvalResult {
  double mean_accuracy = 0.0;
  double ci95 = 0.0;
  int episodes = 0;
};

class Trainer {
 public:
  explicit Trainer(RunConfig cfg);
  Trainer(RunConfig cfg, DatasetSplit data);

  // Runs the remaining training episodes up to cfg.train_episodes.
  TrainState train(const MetricsSink& sink = {});
  // Runs `episodes` more training episodes.
  TrainState train_episodes(int episodes, const MetricsSink& sink = {});

  EvalResult evaluate(int episodes, const MetricsSink& sink = {});
  EvalResult evaluate() { return evaluate(cfg_.eval_episodes); }

  // One CSV row per sample and view over `episodes` evaluation episodes.
  std::size_t export_embeddings(int episodes, const std::filesystem::path& out);

  void save(const std::filesystem::path& path) const;
  static Trainer load(const std::filesystem::path& path);
  static Trainer load(const std::filesystem::path& path, DatasetSplit data);

  Episode train_episode(std::uint64_t index) const;
  Episode eval_episode(std::uint64_t index) const;

  MdmfModel& model() { return model_; }
  Adam& optimizer() { return adam_; }
  const RunConfig& config() const { return cfg_; }
  const DatasetSplit& data() const { return data_; }
  const TrainState& state() const { return state_; }

 private:
  RunConfig cfg_;
  DatasetSplit data_;
  MdmfModel model_;
  Adam adam_;
  TrainState state_;
};

// Binary checkpoint: parameters and buffers by name with exact doubles, Adam
// moments, gradients accumulated since the last step, progress counters and
// the full config text.
struct CheckpointData {
  std::string config_text;
  std::uint64_t config_hash = 0;
  TrainState state;
  std::uint64_t adam_t = 0;
  struct Tensor {
    std::string name;
    bool buffer = false;
    ag::Matrix value, m, v;
    ag::Matrix grad;  // 0x0 when nothing is pending
  };
  std::vector<Tensor> tensors;
};

void write_checkpoint(const CheckpointData& ck, const std::filesystem::path& path);
CheckpointData read_checkpoint(const std::filesystem::path& path);

struct AblationRow {
  std::string name;
  KeyValues delta;
  std::string views;
  bool pps = false;
  bool mvmd = false;
  std::string direction;
  std::string conditions;
  double lambda = 0.0;
  EvalResult result;

  std::string to_json() const;
};

// Each delta is applied on top of `base`, trained from scratch and evaluated.
std::vector<AblationRow> ablate(const RunConfig& base,
                                const std::vector<std::pair<std::string, KeyValues>>& grid,
                                const MetricsSink& sink = {});
// One JSON object per line: string-valued config keys plus an optional "name".
std::vector<std::pair<std::string, KeyValues>> read_grid(const std::filesystem::path& path);
std::vector<std::pair<std::string, KeyValues>> preset_grid(const std::string& name);

}  // namespace mdmf
