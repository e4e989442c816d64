#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mdmf/encoders.hpp"
#include "mdmf/episodes.hpp"
#include "mdmf/matching.hpp"
#include "mdmf/mmfe.hpp"
#include "mdmf/mvmd.hpp"
#include "mdmf/pps.hpp"
#include "mdmf/temporal_views.hpp"

namespace mdmf {

using KeyValues = std::map<std::string, std::string>;

struct RunConfig {
  // episodes
  int way = 5;
  int shot = 1;
  int queries = 5;
  int frames = 8;

  // optimisation
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int accumulation_steps = 16;
  int train_episodes = 1000;
  int eval_episodes = 2000;
  std::uint64_t seed = 0;

  EncoderConfig encoder;

  bool pps_enabled = true;
  double pps_temperature = 0.1;
  pps::SelectMode pps_mode = pps::SelectMode::sample;

  std::vector<ViewKind> views{ViewKind::local, ViewKind::global};
  std::vector<int> tcn_dilations{1, 2, 4};
  int ltce_kernel = 3;

  MmfeConfig mmfe;
  OtamOptions otam;

  bool mvmd_enabled = true;
  double mvmd_lambda = 1.0;
  mvmd::Direction mvmd_direction = mvmd::Direction::bidirectional;
  mvmd::GatingOptions mvmd_gating;

  // data: a manifest path, or the synthetic generator when empty
  std::string manifest;
  SynthOptions synth;
  SplitPart train_part = SplitPart::train;
  SplitPart eval_part = SplitPart::test;

  std::string checkpoint_path;
  int checkpoint_every = 0;
  bool metrics_timing = true;

  void validate() const;
  bool has_view(ViewKind v) const;
  bool multi_view() const { return has_view(ViewKind::local) && has_view(ViewKind::global); }
};

// Applies one dotted key. Throws ParamError on unknown keys or bad values.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);
KeyValues to_key_values(const RunConfig& cfg);
RunConfig from_key_values(const KeyValues& kv);

// Flat `key = value` text; '#' starts a comment.
KeyValues parse_key_values(const std::string& text);
KeyValues read_config_file(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

std::uint64_t config_hash(const RunConfig& cfg);

// MDMF_SEED, when set, replaces cfg.seed.
void apply_env_overrides(RunConfig& cfg);

DatasetSplit load_data(const RunConfig& cfg);

}  // namespace mdmf
