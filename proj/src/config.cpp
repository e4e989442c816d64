#include "mdmf/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "mdmf/errors.hpp"
#include "mdmf/rng.hpp"

namespace mdmf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParamError(key + ": expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ParamError(key + ": expected an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long i = std::stoull(v, &used);
    if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ParamError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ParamError(key + ": expected a boolean, got '" + v + "'");
}

std::string fmt(double d) {
  std::ostringstream o;
  o << std::setprecision(17) << d;
  return o.str();
}

std::string fmt(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

struct Entry {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MDMF_INT(field) \
  Entry{[](RunConfig& c, const std::string& k, const std::string& v) { c.field = static_cast<decltype(c.field)>(to_int(k, v)); }, \
        [](const RunConfig& c) { return fmt_int(c.field); }}
#define MDMF_U64(field) \
  Entry{[](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_u64(k, v); }, \
        [](const RunConfig& c) { return fmt_int(c.field); }}
#define MDMF_DBL(field) \
  Entry{[](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }}
#define MDMF_BOOL(field) \
  Entry{[](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }}
#define MDMF_STR(field) \
  Entry{[](RunConfig& c, const std::string&, const std::string& v) { c.field = v; }, \
        [](const RunConfig& c) { return c.field; }}

const std::map<std::string, Entry>& entries() {
  static const std::map<std::string, Entry> table{
      {"episode.way", MDMF_INT(way)},
      {"episode.shot", MDMF_INT(shot)},
      {"episode.queries", MDMF_INT(queries)},
      {"episode.frames", MDMF_INT(frames)},
      {"optim.lr", MDMF_DBL(lr)},
      {"optim.beta1", MDMF_DBL(beta1)},
      {"optim.beta2", MDMF_DBL(beta2)},
      {"optim.eps", MDMF_DBL(adam_eps)},
      {"optim.accumulation_steps", MDMF_INT(accumulation_steps)},
      {"train.episodes", MDMF_INT(train_episodes)},
      {"eval.episodes", MDMF_INT(eval_episodes)},
      {"seed", MDMF_U64(seed)},
      {"encoder.kind", MDMF_STR(encoder.kind)},
      {"encoder.dim", MDMF_INT(encoder.dim)},
      {"encoder.raw_dim", MDMF_INT(encoder.raw_dim)},
      {"encoder.prompt_template", MDMF_STR(encoder.prompt_template)},
      {"encoder.trainable", MDMF_BOOL(encoder.trainable)},
      {"encoder.seed", MDMF_U64(encoder.seed)},
      {"pps.enabled", MDMF_BOOL(pps_enabled)},
      {"pps.temperature", MDMF_DBL(pps_temperature)},
      {"pps.mode",
       Entry{[](RunConfig& c, const std::string&, const std::string& v) { c.pps_mode = pps::parse_select_mode(v); },
             [](const RunConfig& c) {
               return std::string(c.pps_mode == pps::SelectMode::sample ? "sample" : "argmax");
             }}},
      {"views.enabled",
       Entry{[](RunConfig& c, const std::string& k, const std::string& v) {
               c.views.clear();
               for (const auto& item : split_list(v)) {
                 const ViewKind vk = parse_view_kind(item);
                 if (std::find(c.views.begin(), c.views.end(), vk) == c.views.end()) c.views.push_back(vk);
               }
               if (c.views.empty()) throw ParamError(k + ": at least one view required");
             },
             [](const RunConfig& c) {
               std::string s;
               for (ViewKind v : c.views) s += (s.empty() ? "" : ",") + std::string(to_string(v));
               return s;
             }}},
      {"views.tcn.dilations",
       Entry{[](RunConfig& c, const std::string& k, const std::string& v) {
               c.tcn_dilations.clear();
               for (const auto& item : split_list(v)) c.tcn_dilations.push_back(static_cast<int>(to_int(k, item)));
             },
             [](const RunConfig& c) {
               std::string s;
               for (int d : c.tcn_dilations) s += (s.empty() ? "" : ",") + std::to_string(d);
               return s;
             }}},
      {"views.ltce.kernel", MDMF_INT(ltce_kernel)},
      {"mmfe.heads", MDMF_INT(mmfe.heads)},
      {"mmfe.layers", MDMF_INT(mmfe.layers)},
      {"mmfe.ffn_mult", MDMF_INT(mmfe.ffn_mult)},
      {"otam.gamma", MDMF_DBL(otam.gamma)},
      {"otam.bidirectional", MDMF_BOOL(otam.bidirectional)},
      {"mvmd.enabled", MDMF_BOOL(mvmd_enabled)},
      {"mvmd.lambda", MDMF_DBL(mvmd_lambda)},
      {"mvmd.direction",
       Entry{[](RunConfig& c, const std::string&, const std::string& v) { c.mvmd_direction = mvmd::parse_direction(v); },
             [](const RunConfig& c) { return std::string(mvmd::to_string(c.mvmd_direction)); }}},
      {"mvmd.conditions",
       Entry{[](RunConfig& c, const std::string& k, const std::string& v) {
               c.mvmd_gating.t_compare = false;
               c.mvmd_gating.v_compare = false;
               for (const auto& item : split_list(v)) {
                 if (item == "t_compare") c.mvmd_gating.t_compare = true;
                 else if (item == "v_compare") c.mvmd_gating.v_compare = true;
                 else if (item != "none") throw ParamError(k + ": unknown condition '" + item + "'");
               }
             },
             [](const RunConfig& c) {
               std::string s;
               if (c.mvmd_gating.t_compare) s = "t_compare";
               if (c.mvmd_gating.v_compare) s += (s.empty() ? "" : ",") + std::string("v_compare");
               return s.empty() ? std::string("none") : s;
             }}},
      {"mvmd.margin", MDMF_DBL(mvmd_gating.margin)},
      {"data.manifest", MDMF_STR(manifest)},
      {"synth.classes", MDMF_INT(synth.num_classes)},
      {"synth.per_class", MDMF_INT(synth.per_class)},
      {"synth.d_raw", MDMF_INT(synth.d_raw)},
      {"synth.motif_len", MDMF_INT(synth.motif_len)},
      {"synth.noise_sigma", MDMF_DBL(synth.noise_sigma)},
      {"synth.seed", MDMF_U64(synth.seed)},
      {"synth.frames", MDMF_INT(synth.frames)},
      {"synth.signal_dims", MDMF_INT(synth.signal_dims)},
      {"synth.motif_scale", MDMF_DBL(synth.motif_scale)},
      {"synth.background_scale", MDMF_DBL(synth.background_scale)},
      {"synth.train_classes", MDMF_INT(synth.train_classes)},
      {"synth.val_classes", MDMF_INT(synth.val_classes)},
      {"synth.test_classes", MDMF_INT(synth.test_classes)},
      {"train.part",
       Entry{[](RunConfig& c, const std::string&, const std::string& v) { c.train_part = parse_split_part(v); },
             [](const RunConfig& c) { return std::string(to_string(c.train_part)); }}},
      {"eval.part",
       Entry{[](RunConfig& c, const std::string&, const std::string& v) { c.eval_part = parse_split_part(v); },
             [](const RunConfig& c) { return std::string(to_string(c.eval_part)); }}},
      {"checkpoint.path", MDMF_STR(checkpoint_path)},
      {"checkpoint.every", MDMF_INT(checkpoint_every)},
      {"metrics.timing", MDMF_BOOL(metrics_timing)},
  };
  return table;
}

#undef MDMF_INT
#undef MDMF_U64
#undef MDMF_DBL
#undef MDMF_BOOL
#undef MDMF_STR

}  // namespace

bool RunConfig::has_view(ViewKind v) const {
  return std::find(views.begin(), views.end(), v) != views.end();
}

void RunConfig::validate() const {
  if (way < 2) throw ParamError("episode.way must be >= 2");
  if (shot < 1) throw ParamError("episode.shot must be >= 1");
  if (queries < 1) throw ParamError("episode.queries must be >= 1");
  if (frames < 1) throw ParamError("episode.frames must be >= 1");
  if (!(lr > 0.0)) throw ParamError("optim.lr must be > 0");
  if (accumulation_steps < 1) throw ParamError("optim.accumulation_steps must be >= 1");
  if (train_episodes < 0 || eval_episodes < 0) throw ParamError("episode counts must be >= 0");
  if (encoder.dim < 8) throw ParamError("encoder.dim must be >= 8");
  if (!(pps_temperature > 0.0)) throw ParamError("pps.temperature must be > 0");
  if (views.empty()) throw ParamError("views.enabled must name at least one view");
  if (!(otam.gamma > 0.0)) throw ParamError("otam.gamma must be > 0");
  if (mvmd_lambda < 0.0) throw ParamError("mvmd.lambda must be >= 0");
  if (mvmd_gating.margin < 0.0) throw ParamError("mvmd.margin must be >= 0");
  if (checkpoint_every < 0) throw ParamError("checkpoint.every must be >= 0");
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = entries();
  auto it = table.find(key);
  if (it == table.end()) throw ParamError("unknown config key '" + key + "'");
  it->second.set(cfg, key, trim(value));
}

KeyValues to_key_values(const RunConfig& cfg) {
  KeyValues kv;
  for (const auto& [key, entry] : entries()) kv[key] = entry.get(cfg);
  return kv;
}

RunConfig from_key_values(const KeyValues& kv) {
  RunConfig cfg;
  for (const auto& [k, v] : kv) set_key(cfg, k, v);
  cfg.validate();
  return cfg;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", line_no);
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  return fnv1a64(format_key_values(to_key_values(cfg)));
}

void apply_env_overrides(RunConfig& cfg) {
  if (const char* s = std::getenv("MDMF_SEED"); s && *s) cfg.seed = to_u64("MDMF_SEED", s);
}

DatasetSplit load_data(const RunConfig& cfg) {
  if (!cfg.manifest.empty()) return load_manifest(cfg.manifest);
  return synth_generate(cfg.synth);
}

}  // namespace mdmf
