#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mdmf/errors.hpp"
#include "mdmf/harness.hpp"

using namespace mdmf;
using ag::Matrix;
namespace fs = std::filesystem;

namespace {

RunConfig small_config() {
  RunConfig cfg = from_key_values({
      {"encoder.dim", "16"},
      {"encoder.raw_dim", "16"},
      {"mmfe.heads", "2"},
      {"synth.d_raw", "16"},
      {"synth.signal_dims", "4"},
      {"synth.frames", "12"},
      {"synth.motif_len", "4"},
      {"synth.per_class", "6"},
      {"optim.lr", "1e-2"},
      {"optim.accumulation_steps", "16"},
      {"train.episodes", "32"},
      {"eval.part", "train"},
      {"metrics.timing", "false"},
      {"seed", "5"},
  });
  return cfg;
}

std::vector<std::string> run_metrics(const RunConfig& cfg, int episodes) {
  Trainer tr(cfg);
  std::vector<std::string> lines;
  tr.train_episodes(episodes, [&](const std::string& l) { lines.push_back(l); });
  return lines;
}

Matrix snapshot(const Trainer& tr) {
  const auto params = const_cast<Trainer&>(tr).model().parameters();
  Eigen::Index n = 0;
  for (const auto& [name, v] : params) n += v.value().size();
  Matrix flat(1, n);
  Eigen::Index at = 0;
  for (const auto& [name, v] : params) {
    flat.block(0, at, 1, v.value().size()) = v.value().reshaped<Eigen::RowMajor>().transpose();
    at += v.value().size();
  }
  return flat;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mdmf_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("adam matches the closed-form first step") {
  ag::Var w = ag::parameter(Matrix{{1.0, -2.0}});
  Adam opt({{"w", w}}, 0.1, 0.9, 0.999, 1e-8);
  w.mutable_grad() = Matrix{{0.5, -4.0}};
  opt.step(0.5);
  // Bias-corrected first step moves each coordinate by lr * sign(g).
  CHECK(w.value()(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w.value()(0, 1) == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK_FALSE(w.has_grad());
  CHECK(opt.t == 1);
  CHECK(opt.m[0](0, 0) == doctest::Approx(0.1 * 0.25));
  CHECK(opt.v[0](0, 1) == doctest::Approx(0.001 * 4.0));
  opt.step();  // no gradient: moments decay, parameter still moves by momentum
  CHECK(opt.t == 2);
}

TEST_CASE("gradient accumulation") {
  RunConfig cfg = small_config();
  Trainer tr(cfg);
  const Matrix before = snapshot(tr);
  tr.train_episodes(15);
  CHECK(tr.state().optimizer_steps == 0);
  CHECK(snapshot(tr) == before);
  tr.train_episodes(1);
  CHECK(tr.state().optimizer_steps == 1);
  CHECK(snapshot(tr) != before);
  tr.train_episodes(16);
  CHECK(tr.state().episodes_done == 32);
  CHECK(tr.state().optimizer_steps == 2);
  for (const auto& [name, v] : tr.model().parameters()) CHECK_FALSE(v.has_grad());
}

TEST_CASE("metrics stream") {
  RunConfig cfg = small_config();
  cfg.accumulation_steps = 4;
  const auto a = run_metrics(cfg, 12);
  REQUIRE(a.size() == 12);
  const auto first = nlohmann::json::parse(a.front());
  for (const char* key : {"episode", "loss_main", "loss_g2l", "loss_l2g", "loss_total", "accuracy", "omega_g",
                          "omega_l", "optimizer_step"}) {
    CHECK(first.contains(key));
  }
  CHECK_FALSE(first.contains("wall_ms"));
  CHECK(nlohmann::json::parse(a[3])["optimizer_step"] == true);
  CHECK(nlohmann::json::parse(a[2])["optimizer_step"] == false);

  SUBCASE("bitwise reproducible") {
    CHECK(run_metrics(cfg, 12) == a);
  }
  SUBCASE("seed changes the stream") {
    cfg.seed = 6;
    CHECK(run_metrics(cfg, 12) != a);
  }
}

TEST_CASE("lambda zero equals disabled distillation") {
  RunConfig off = small_config();
  off.accumulation_steps = 4;
  off.mvmd_enabled = false;
  RunConfig zero = small_config();
  zero.accumulation_steps = 4;
  zero.mvmd_lambda = 0.0;
  Trainer a(off), b(zero);
  std::vector<double> la, lb;
  a.train_episodes(32, [&](const std::string& l) { la.push_back(nlohmann::json::parse(l)["loss_main"]); });
  b.train_episodes(32, [&](const std::string& l) { lb.push_back(nlohmann::json::parse(l)["loss_main"]); });
  CHECK(la == lb);
  CHECK(snapshot(a) == snapshot(b));
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = scratch("ckpt");
  RunConfig cfg = small_config();
  cfg.accumulation_steps = 4;
  Trainer tr(cfg);
  tr.train_episodes(10);
  tr.save(dir / "run.ckpt");
  CHECK(fs::exists(dir / "run.ckpt"));
  CHECK_FALSE(fs::exists(dir / "run.ckpt.tmp"));

  Trainer back = Trainer::load(dir / "run.ckpt");
  CHECK(back.state().episodes_done == 10);
  CHECK(back.state().optimizer_steps == 2);
  CHECK(back.optimizer().t == tr.optimizer().t);
  CHECK(snapshot(back) == snapshot(tr));
  {
    ag::NoGradGuard g;
    for (int e = 0; e < 3; ++e) {
      const auto x = tr.model().forward_episode(tr.eval_episode(e));
      const auto y = back.model().forward_episode(back.eval_episode(e));
      CHECK(x.probs.value() == y.probs.value());
      CHECK(x.total_loss.item() == y.total_loss.item());
    }
  }

  SUBCASE("training resumes identically") {
    std::vector<std::string> la, lb;
    tr.train_episodes(6, [&](const std::string& l) { la.push_back(l); });
    back.train_episodes(6, [&](const std::string& l) { lb.push_back(l); });
    CHECK(la == lb);
    CHECK(snapshot(back) == snapshot(tr));
  }
  SUBCASE("corrupt files") {
    std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(Trainer::load(dir / "bad.ckpt"), IoError);
    CHECK_THROWS_AS(Trainer::load(dir / "missing.ckpt"), IoError);
  }
}

TEST_CASE("non-finite loss names the episode and seed") {
  RunConfig cfg = small_config();
  Trainer tr(cfg);
  tr.model().mmfe.begin()->second.pos.mutable_value()(0, 0) = std::nan("");
  try {
    tr.train_episodes(1);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CAPTURE(msg);
    CHECK(msg.find("episode 0") != std::string::npos);
    CHECK(msg.find(std::to_string(tr.train_episode(0).seed)) != std::string::npos);
  }
}

TEST_CASE("model wiring") {
  SUBCASE("a single view's fused distance is its view distance") {
    RunConfig cfg = small_config();
    cfg.views = {ViewKind::global};
    cfg.mvmd_enabled = false;
    Trainer tr(cfg);
    ag::NoGradGuard g;
    const auto out = tr.model().forward_episode(tr.eval_episode(0));
    REQUIRE(out.distances.per_view.size() == 1);
    CHECK(out.distances.fused.value() == out.distances.per_view.begin()->second.value());
    CHECK(out.loss_g2l.item() == 0.0);
    CHECK(out.posteriors.empty());
  }
  SUBCASE("without PPS a learned null token is a parameter") {
    RunConfig cfg = small_config();
    cfg.pps_enabled = false;
    bool found = false;
    for (const auto& [name, v] : MdmfModel(cfg).parameters()) found = found || name == "null_token";
    CHECK(found);
    cfg.pps_enabled = true;
    for (const auto& [name, v] : MdmfModel(cfg).parameters()) CHECK(name != "null_token");
  }
  SUBCASE("probabilities and predictions") {
    Trainer tr(small_config());
    ag::NoGradGuard g;
    const auto out = tr.model().forward_episode(tr.eval_episode(1));
    CHECK(out.probs.rows() == 5);
    CHECK(out.probs.cols() == 5);
    for (Eigen::Index r = 0; r < 5; ++r) CHECK(out.probs.value().row(r).sum() == doctest::Approx(1.0));
    CHECK(out.predictions.size() == 5);
    CHECK(out.total_loss.item() == doctest::Approx(out.main_loss.item() + out.loss_g2l.item() + out.loss_l2g.item()));
  }
  SUBCASE("short gtce schedules warn") {
    RunConfig cfg = small_config();
    cfg.tcn_dilations = {1, 2};
    CHECK(MdmfModel(cfg).warning().has_value());
    CHECK_FALSE(MdmfModel(small_config()).warning().has_value());
  }
}

TEST_CASE("evaluation and export") {
  Trainer tr(small_config());
  std::vector<std::string> lines;
  const auto r = tr.evaluate(20, [&](const std::string& l) { lines.push_back(l); });
  CHECK(r.episodes == 20);
  CHECK(r.mean_accuracy >= 0.0);
  CHECK(r.mean_accuracy <= 1.0);
  CHECK(r.ci95 >= 0.0);
  CHECK_FALSE(lines.empty());
  CHECK(tr.evaluate(20).mean_accuracy == r.mean_accuracy);

  const fs::path dir = scratch("export");
  const std::size_t rows = tr.export_embeddings(2, dir / "emb.csv");
  // (5 supports + 5 queries) x 2 views x 2 episodes
  CHECK(rows == 40);
  std::ifstream in(dir / "emb.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("episode,id,label,view,role,d0,", 0) == 0);
  CHECK(header.find(",d15") != std::string::npos);
  std::size_t count = 0;
  for (std::string line; std::getline(in, line);) ++count;
  CHECK(count == rows);
}

TEST_CASE("ablation grids") {
  const fs::path dir = scratch("grid");
  SUBCASE("presets") {
    CHECK(preset_grid("views").size() == 6);
    CHECK(preset_grid("fusion").size() == 4);
    CHECK(preset_grid("gating").size() == 12);
    CHECK(preset_grid("lambda").size() == 4);
    CHECK_THROWS_AS(preset_grid("nonexistent"), ParamError);
  }
  SUBCASE("grid files") {
    std::ofstream(dir / "g.jsonl") << R"({"name":"a","mvmd.lambda":"0.5"})" << "\n\n"
                                   << R"({"views.enabled":"global"})" << "\n";
    const auto g = read_grid(dir / "g.jsonl");
    REQUIRE(g.size() == 2);
    CHECK(g[0].first == "a");
    CHECK(g[0].second.at("mvmd.lambda") == "0.5");
    CHECK(g[1].second.at("views.enabled") == "global");
    std::ofstream(dir / "bad.jsonl") << R"({"a":"1"})" << "\n" << "{oops\n";
    try {
      read_grid(dir / "bad.jsonl");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    std::ofstream(dir / "empty.jsonl") << "";
    CHECK(read_grid(dir / "empty.jsonl").empty());
    CHECK(ablate(small_config(), {}).empty());
  }
  SUBCASE("rows carry their settings") {
    RunConfig cfg = small_config();
    cfg.train_episodes = 4;
    cfg.eval_episodes = 4;
    std::vector<std::string> lines;
    const auto rows = ablate(cfg, {{"g", {{"views.enabled", "global"}, {"pps.enabled", "false"}}}},
                             [&](const std::string& l) { lines.push_back(l); });
    REQUIRE(rows.size() == 1);
    const auto j = nlohmann::json::parse(rows[0].to_json());
    CHECK(j["name"] == "g");
    CHECK(j["views"] == "global");
    CHECK(j["pps"] == false);
    CHECK(j["eval_episodes"] == 4);
    CHECK(j.contains("mean_accuracy"));
    CHECK(j.contains("ci95"));
  }
}
