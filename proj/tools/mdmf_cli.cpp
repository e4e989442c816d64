#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mdmf/config.hpp"
#include "mdmf/errors.hpp"
#include "mdmf/harness.hpp"

namespace {

struct MetricsOut {
  std::unique_ptr<std::ofstream> file;
  mdmf::MetricsSink sink;

  explicit MetricsOut(const std::string& path) {
    if (path.empty() || path == "-") {
      sink = mdmf::stream_sink(std::cout);
      return;
    }
    file = std::make_unique<std::ofstream>(path);
    if (!*file) throw mdmf::IoError("cannot open metrics file " + path);
    sink = mdmf::stream_sink(*file);
  }
};

mdmf::RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  mdmf::KeyValues kv;
  if (!path.empty()) kv = mdmf::read_config_file(path);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw mdmf::ParamError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  mdmf::RunConfig cfg = mdmf::from_key_values(kv);
  mdmf::apply_env_overrides(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MDMF few-shot action recognition: training, evaluation and ablations"};
  app.require_subcommand(1);

  std::string config_path, metrics_path, ckpt_path, out_path, grid_path, preset;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  int episodes = 0;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "flat key = value config")->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "overrides the config and MDMF_SEED");
  train->add_option("--set", sets, "extra key=value overrides");
  train->add_option("--metrics", metrics_path, "JSON-lines metrics file (default stdout)");
  train->add_option("--out", ckpt_path, "final checkpoint path (default checkpoint.path)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "evaluation episodes (default eval.episodes)");
  eval->add_option("--metrics", metrics_path);

  auto* abl = app.add_subcommand("ablate", "train and evaluate a grid of config deltas");
  auto* grid_opt = abl->add_option("--grid", grid_path, "JSON-lines grid of config deltas")->check(CLI::ExistingFile);
  abl->add_option("--preset", preset, "views, fusion, gating or lambda")->excludes(grid_opt);
  abl->add_option("--config", config_path, "base config")->check(CLI::ExistingFile);
  abl->add_option("--set", sets);
  abl->add_option("--metrics", metrics_path);

  auto* exp = app.add_subcommand("export-embeddings", "write pooled fused features as CSV");
  exp->add_option("--ckpt", ckpt_path)->required()->check(CLI::ExistingFile);
  exp->add_option("--out", out_path)->required();
  int export_episodes = 10;
  exp->add_option("--episodes", export_episodes);

  auto* syn = app.add_subcommand("synth", "write a synthetic dataset as a manifest");
  mdmf::SynthOptions so;
  syn->add_option("--out", out_path)->required();
  syn->add_option("--classes", so.num_classes)->required();
  syn->add_option("--per-class", so.per_class)->required();
  syn->add_option("--d-raw", so.d_raw);
  syn->add_option("--frames", so.frames);
  syn->add_option("--motif-len", so.motif_len);
  syn->add_option("--noise", so.noise_sigma);
  syn->add_option("--seed", so.seed);
  syn->add_option("--signal-dims", so.signal_dims, "signal subspace width, below d_raw");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      mdmf::RunConfig cfg = load_config(config_path, sets);
      if (seed) cfg.seed = *seed;
      if (!ckpt_path.empty()) cfg.checkpoint_path = ckpt_path;
      MetricsOut m(metrics_path);
      mdmf::Trainer tr(cfg);
      if (const auto& w = tr.model().warning()) std::cerr << "warning: " << *w << '\n';
      const auto st = tr.train(m.sink);
      if (!cfg.checkpoint_path.empty()) tr.save(cfg.checkpoint_path);
      std::cerr << "trained " << st.episodes_done << " episodes, " << st.optimizer_steps
                << " optimizer steps\n";
    } else if (*eval) {
      MetricsOut m(metrics_path);
      mdmf::Trainer tr = mdmf::Trainer::load(ckpt_path);
      const auto r = tr.evaluate(episodes > 0 ? episodes : tr.config().eval_episodes, m.sink);
      std::cerr << "accuracy " << r.mean_accuracy << " +- " << r.ci95 << '\n';
    } else if (*abl) {
      if (grid_path.empty() && preset.empty()) throw mdmf::ParamError("ablate needs --grid or --preset");
      const auto grid = grid_path.empty() ? mdmf::preset_grid(preset) : mdmf::read_grid(grid_path);
      mdmf::RunConfig base = load_config(config_path, sets);
      MetricsOut m(metrics_path);
      const auto rows = mdmf::ablate(base, grid, m.sink);
      std::cerr << rows.size() << " ablation rows\n";
    } else if (*exp) {
      mdmf::Trainer tr = mdmf::Trainer::load(ckpt_path);
      const auto rows = tr.export_embeddings(export_episodes, out_path);
      std::cerr << "wrote " << rows << " rows to " << out_path << '\n';
    } else if (*syn) {
      const auto split = mdmf::synth_generate(so);
      mdmf::write_manifest(split, out_path);
      std::cerr << "wrote " << split.sample_count() << " samples to " << out_path << '\n';
    }
  } catch (const mdmf::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const mdmf::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
