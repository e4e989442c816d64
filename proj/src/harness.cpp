#include "mdmf/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mdmf/errors.hpp"
#include "mdmf/rng.hpp"

namespace mdmf {

using json = nlohmann::json;

// ---- optimiser -------------------------------------------------------------

Adam::Adam(NamedVars params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    m.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
    v.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(double grad_scale) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Var& p = params_[i].second;
    if (!p.has_grad()) continue;
    const ag::Matrix g = p.grad() * grad_scale;
    m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
    v[i] = beta2_ * v[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const ag::Matrix mhat = m[i] / bc1;
    const ag::Matrix vhat = v[i] / bc2;
    p.mutable_value() -= lr_ * mhat.cwiseQuotient((vhat.array().sqrt() + eps_).matrix());
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

// ---- metrics ---------------------------------------------------------------

std::string MetricsRecord::to_json(bool with_timing) const {
  json j{{"episode", episode},       {"loss_main", loss_main}, {"loss_g2l", loss_g2l},
         {"loss_l2g", loss_l2g},     {"loss_total", loss_total}, {"accuracy", accuracy},
         {"omega_g", omega_g},       {"omega_l", omega_l},     {"optimizer_step", optimizer_step}};
  if (with_timing) j["wall_ms"] = wall_ms;
  return j.dump();
}

MetricsSink stream_sink(std::ostream& os) {
  return [&os](const std::string& line) { os << line << '\n' << std::flush; };
}

// ---- trainer ---------------------------------------------------------------

Trainer::Trainer(RunConfig cfg) : Trainer(cfg, load_data(cfg)) {}

Trainer::Trainer(RunConfig cfg, DatasetSplit data)
    : cfg_(std::move(cfg)), data_(std::move(data)), model_(cfg_),
      adam_(model_.parameters(), cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps) {}

Episode Trainer::train_episode(std::uint64_t index) const {
  return sample_episode(data_, cfg_.train_part, cfg_.way, cfg_.shot, cfg_.queries,
                        derive_seed(cfg_.seed, "train-episode", index));
}

Episode Trainer::eval_episode(std::uint64_t index) const {
  return sample_episode(data_, cfg_.eval_part, cfg_.way, cfg_.shot, cfg_.queries,
                        derive_seed(cfg_.seed, "eval-episode", index));
}

TrainState Trainer::train(const MetricsSink& sink) {
  const auto target = static_cast<std::uint64_t>(cfg_.train_episodes);
  if (state_.episodes_done >= target) return state_;
  return train_episodes(static_cast<int>(target - state_.episodes_done), sink);
}

TrainState Trainer::train_episodes(int episodes, const MetricsSink& sink) {
  const auto steps = static_cast<std::uint64_t>(cfg_.accumulation_steps);
  for (int e = 0; e < episodes; ++e) {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t index = state_.episodes_done;
    const Episode ep = train_episode(index);
    const std::string where = "training episode " + std::to_string(index) + " (episode seed " +
                              std::to_string(ep.seed) + ")";
    EpisodeOutput out;
    try {
      out = model_.forward_episode(ep, {.training = true});
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at " + where);
    }
    const double total = out.total_loss.item();
    if (!std::isfinite(total)) throw NumericError("non-finite loss at " + where);
    ag::backward(out.total_loss);
    ++state_.episodes_done;

    MetricsRecord rec;
    rec.episode = static_cast<int>(index);
    rec.loss_main = out.main_loss.item();
    rec.loss_g2l = out.loss_g2l.item();
    rec.loss_l2g = out.loss_l2g.item();
    rec.loss_total = total;
    rec.accuracy = out.accuracy;
    rec.omega_g = static_cast<int>(out.partition.omega_g.size());
    rec.omega_l = static_cast<int>(out.partition.omega_l.size());
    if (state_.episodes_done % steps == 0) {
      adam_.step(1.0 / static_cast<double>(steps));
      ++state_.optimizer_steps;
      rec.optimizer_step = true;
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (sink) sink(rec.to_json(cfg_.metrics_timing));

    if (cfg_.checkpoint_every > 0 && !cfg_.checkpoint_path.empty() &&
        state_.episodes_done % static_cast<std::uint64_t>(cfg_.checkpoint_every) == 0) {
      save(cfg_.checkpoint_path);
    }
  }
  return state_;
}

EvalResult Trainer::evaluate(int episodes, const MetricsSink& sink) {
  if (episodes < 1) throw ParamError("evaluation needs at least one episode");
  ag::NoGradGuard guard;
  std::vector<double> acc;
  acc.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    acc.push_back(model_.forward_episode(eval_episode(static_cast<std::uint64_t>(e))).accuracy);
  }
  EvalResult r;
  r.episodes = episodes;
  double sum = 0.0;
  for (double a : acc) sum += a;
  r.mean_accuracy = sum / episodes;
  if (episodes > 1) {
    double ss = 0.0;
    for (double a : acc) ss += (a - r.mean_accuracy) * (a - r.mean_accuracy);
    r.ci95 = 1.96 * std::sqrt(ss / (episodes - 1)) / std::sqrt(static_cast<double>(episodes));
  }
  if (sink) {
    sink(json{{"eval_episodes", episodes}, {"mean_accuracy", r.mean_accuracy}, {"ci95", r.ci95}}.dump());
  }
  return r;
}

std::size_t Trainer::export_embeddings(int episodes, const std::filesystem::path& out) {
  if (episodes < 1) throw ParamError("export needs at least one episode");
  std::ofstream os(out);
  if (!os) throw IoError("cannot write embeddings to " + out.string());
  ag::NoGradGuard guard;
  os << "episode,id,label,view,role";
  for (int d = 0; d < cfg_.encoder.dim; ++d) os << ",d" << d;
  os << '\n';
  os << std::setprecision(9);
  std::size_t rows = 0;
  for (int e = 0; e < episodes; ++e) {
    const auto o = model_.forward_episode(eval_episode(static_cast<std::uint64_t>(e)),
                                          {.training = false, .collect_embeddings = true});
    for (const auto& s : o.embeddings) {
      os << e << ',' << s.id << ',' << s.label << ',' << to_string(s.view) << ','
         << (s.role == SampleRole::support ? "support" : "query");
      for (Eigen::Index d = 0; d < s.pooled.size(); ++d) os << ',' << s.pooled(d);
      os << '\n';
      ++rows;
    }
  }
  if (!os) throw IoError("write failed for " + out.string());
  return rows;
}

void Trainer::save(const std::filesystem::path& path) const {
  CheckpointData ck;
  ck.config_text = format_key_values(to_key_values(cfg_));
  ck.config_hash = config_hash(cfg_);
  ck.state = state_;
  ck.adam_t = adam_.t;
  const auto& params = adam_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ck.tensors.push_back({params[i].first, false, params[i].second.value(), adam_.m[i], adam_.v[i],
                          params[i].second.grad()});
  }
  for (const auto& [name, b] : model_.buffers()) {
    ck.tensors.push_back({name, true, b.value(), {}, {}});
  }
  write_checkpoint(ck, path);
}

Trainer Trainer::load(const std::filesystem::path& path) {
  const CheckpointData ck = read_checkpoint(path);
  RunConfig cfg = from_key_values(parse_key_values(ck.config_text));
  return load(path, load_data(cfg));
}

Trainer Trainer::load(const std::filesystem::path& path, DatasetSplit data) {
  const CheckpointData ck = read_checkpoint(path);
  RunConfig cfg = from_key_values(parse_key_values(ck.config_text));
  if (config_hash(cfg) != ck.config_hash) throw IoError("checkpoint config hash mismatch: " + path.string());
  Trainer tr(cfg, std::move(data));
  tr.state_ = ck.state;
  tr.adam_.t = ck.adam_t;

  std::map<std::string, const CheckpointData::Tensor*> by_name;
  for (const auto& t : ck.tensors) by_name[t.name] = &t;
  auto restore = [&](const std::string& name, ag::Var& v, bool buffer) -> const CheckpointData::Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->buffer != buffer) {
      throw IoError("checkpoint is missing tensor '" + name + "'");
    }
    const auto& t = *it->second;
    if (t.value.rows() != v.rows() || t.value.cols() != v.cols()) {
      throw ShapeError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    v.mutable_value() = t.value;
    return t;
  };
  auto params = tr.adam_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = restore(params[i].first, params[i].second, false);
    tr.adam_.m[i] = t.m;
    tr.adam_.v[i] = t.v;
    if (t.grad.size() > 0) {
      if (t.grad.rows() != t.value.rows() || t.grad.cols() != t.value.cols()) {
        throw ShapeError("checkpoint gradient for '" + t.name + "' has the wrong shape");
      }
      params[i].second.mutable_grad() = t.grad;
    }
  }
  for (auto& [name, b] : tr.model_.buffers()) restore(name, b, true);
  return tr;
}

// ---- checkpoint file -------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'D', 'M', 'F', 'C', 'K', 'P', '1'};

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <typename T>
  void pod(const T& v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void mat(const ag::Matrix& m) {
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    os_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string where) : is_(is), where_(std::move(where)) {}
  template <typename T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1u << 30)) throw IoError("corrupt checkpoint: " + where_);
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }
  ag::Matrix mat() {
    const auto r = pod<std::uint64_t>();
    const auto c = pod<std::uint64_t>();
    if (r > (1u << 24) || c > (1u << 24)) throw IoError("corrupt checkpoint: " + where_);
    ag::Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    is_.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    check();
    return m;
  }

 private:
  void check() {
    if (!is_) throw IoError("truncated checkpoint: " + where_);
  }
  std::istream& is_;
  std::string where_;
};

}  // namespace

void write_checkpoint(const CheckpointData& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof(kMagic));
    Writer w(os);
    w.str(ck.config_text);
    w.pod(ck.config_hash);
    w.pod(ck.state.episodes_done);
    w.pod(ck.state.optimizer_steps);
    w.pod(ck.adam_t);
    w.pod<std::uint64_t>(ck.tensors.size());
    for (const auto& t : ck.tensors) {
      w.str(t.name);
      w.pod<std::uint8_t>(t.buffer ? 1 : 0);
      w.mat(t.value);
      if (!t.buffer) {
        w.mat(t.m);
        w.mat(t.v);
        w.mat(t.grad);
      }
    }
    if (!os) throw IoError("write failed for checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  Reader r(is, path.string());
  CheckpointData ck;
  ck.config_text = r.str();
  ck.config_hash = r.pod<std::uint64_t>();
  ck.state.episodes_done = r.pod<std::uint64_t>();
  ck.state.optimizer_steps = r.pod<std::uint64_t>();
  ck.adam_t = r.pod<std::uint64_t>();
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    CheckpointData::Tensor t;
    t.name = r.str();
    t.buffer = r.pod<std::uint8_t>() != 0;
    t.value = r.mat();
    if (!t.buffer) {
      t.m = r.mat();
      t.v = r.mat();
      t.grad = r.mat();
    }
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

// ---- ablation --------------------------------------------------------------

std::string AblationRow::to_json() const {
  json d = json::object();
  for (const auto& [k, v] : delta) d[k] = v;
  return json{{"name", name},
              {"delta", d},
              {"views", views},
              {"pps", pps},
              {"mvmd", mvmd},
              {"direction", direction},
              {"conditions", conditions},
              {"lambda", lambda},
              {"mean_accuracy", result.mean_accuracy},
              {"ci95", result.ci95},
              {"eval_episodes", result.episodes}}
      .dump();
}

std::vector<AblationRow> ablate(const RunConfig& base,
                                const std::vector<std::pair<std::string, KeyValues>>& grid,
                                const MetricsSink& sink) {
  std::vector<AblationRow> rows;
  for (const auto& [name, delta] : grid) {
    RunConfig cfg = base;
    for (const auto& [k, v] : delta) set_key(cfg, k, v);
    cfg.validate();
    Trainer tr(cfg);
    tr.train();
    const auto kv = to_key_values(cfg);
    AblationRow row;
    row.name = name;
    row.delta = delta;
    row.views = kv.at("views.enabled");
    row.pps = cfg.pps_enabled;
    row.mvmd = cfg.mvmd_enabled && cfg.multi_view();
    row.direction = kv.at("mvmd.direction");
    row.conditions = kv.at("mvmd.conditions");
    row.lambda = cfg.mvmd_lambda;
    row.result = tr.evaluate();
    if (sink) sink(row.to_json());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::pair<std::string, KeyValues>> read_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grid " + path.string());
  std::vector<std::pair<std::string, KeyValues>> grid;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("grid: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("grid: expected a JSON object", line_no);
    std::string name = "row" + std::to_string(grid.size() + 1);
    KeyValues kv;
    for (const auto& [k, v] : j.items()) {
      const std::string s = v.is_string() ? v.get<std::string>() : v.dump();
      if (k == "name") name = s;
      else kv[k] = s;
    }
    grid.emplace_back(std::move(name), std::move(kv));
  }
  return grid;
}

std::vector<std::pair<std::string, KeyValues>> preset_grid(const std::string& name) {
  using Grid = std::vector<std::pair<std::string, KeyValues>>;
  if (name == "views") {
    Grid g;
    for (const char* view : {"global", "local", "none"}) {
      for (const char* pps : {"false", "true"}) {
        g.push_back({std::string(view) + (pps[0] == 't' ? "+pps" : ""),
                     {{"views.enabled", view}, {"pps.enabled", pps}, {"mvmd.enabled", "false"}}});
      }
    }
    return g;
  }
  if (name == "fusion") {
    return {{"distill", {{"views.enabled", "local,global"}, {"mvmd.enabled", "true"}, {"pps.enabled", "false"}}},
            {"distill+pps", {{"views.enabled", "local,global"}, {"mvmd.enabled", "true"}, {"pps.enabled", "true"}}},
            {"fusion", {{"views.enabled", "local,global"}, {"mvmd.enabled", "false"}, {"pps.enabled", "false"}}},
            {"fusion+pps", {{"views.enabled", "local,global"}, {"mvmd.enabled", "false"}, {"pps.enabled", "true"}}}};
  }
  if (name == "gating") {
    Grid g;
    for (const char* dir : {"bidirectional", "up_down", "down_up"}) {
      for (const char* cond : {"t_compare,v_compare", "t_compare", "v_compare", "none"}) {
        g.push_back({std::string(dir) + ":" + cond, {{"mvmd.direction", dir}, {"mvmd.conditions", cond}}});
      }
    }
    return g;
  }
  if (name == "lambda") {
    Grid g;
    for (const char* l : {"0.1", "0.5", "1", "2"}) g.push_back({std::string("lambda=") + l, {{"mvmd.lambda", l}}});
    return g;
  }
  throw ParamError("unknown ablation preset '" + name + "' (views, fusion, gating, lambda)");
}

}  // namespace mdmf
