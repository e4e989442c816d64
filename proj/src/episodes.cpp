#include "mdmf/episodes.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mdmf/errors.hpp"
#include "mdmf/rng.hpp"

namespace mdmf {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::size_t VideoSample::length() const {
  return std::visit(
      [](const auto& f) -> std::size_t {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, FramePaths>) {
          return f.size();
        } else {
          return f.rows;
        }
      },
      frames);
}

SplitPart parse_split_part(const std::string& s) {
  if (s == "train") return SplitPart::train;
  if (s == "val") return SplitPart::val;
  if (s == "test") return SplitPart::test;
  throw InputError("unknown split part '" + s + "'");
}

const char* to_string(SplitPart p) {
  switch (p) {
    case SplitPart::train: return "train";
    case SplitPart::val: return "val";
    case SplitPart::test: return "test";
  }
  return "?";
}

const ClassIndex& DatasetSplit::part(SplitPart p) const {
  switch (p) {
    case SplitPart::train: return train;
    case SplitPart::val: return val;
    case SplitPart::test: return test;
  }
  return train;
}

ClassIndex& DatasetSplit::part(SplitPart p) {
  return const_cast<ClassIndex&>(std::as_const(*this).part(p));
}

std::size_t DatasetSplit::sample_count() const {
  std::size_t n = 0;
  for (const ClassIndex* ci : {&train, &val, &test}) {
    for (const auto& [_, v] : *ci) n += v.size();
  }
  return n;
}

void DatasetSplit::verify_disjoint() const {
  const std::pair<const ClassIndex*, const char*> parts[] = {
      {&train, "train"}, {&val, "val"}, {&test, "test"}};
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) {
      for (const auto& [name, _] : *parts[a].first) {
        if (parts[b].first->count(name)) {
          throw SplitViolation("class '" + name + "' appears in both " + parts[a].second +
                               " and " + parts[b].second);
        }
      }
    }
  }
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "feature files are little-endian; big-endian hosts need byte swapping");

template <typename T>
void read_exact(std::ifstream& in, T* out, std::size_t count, const fs::path& path) {
  in.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(sizeof(T) * count));
  if (!in) throw IoError("truncated feature file " + path.string());
}

}  // namespace

FeatureMatrix read_feature_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  std::uint32_t dims[2];
  read_exact(in, dims, 2, path);
  FeatureMatrix m;
  m.rows = dims[0];
  m.cols = dims[1];
  m.data.resize(static_cast<std::size_t>(m.rows) * m.cols);
  read_exact(in, m.data.data(), m.data.size(), path);
  return m;
}

void write_feature_file(const FeatureMatrix& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file " + path.string());
  const std::uint32_t dims[2] = {m.rows, m.cols};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

DatasetSplit load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  DatasetSplit split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!rec.is_object()) throw ParseError("record is not an object", line_no);
    for (const char* key : {"id", "label", "split"}) {
      if (!rec.contains(key) || !rec[key].is_string() || rec[key].get<std::string>().empty()) {
        throw ParseError(std::string("record missing '") + key + "'", line_no);
      }
    }
    VideoSample v;
    v.id = rec["id"].get<std::string>();
    v.label = rec["label"].get<std::string>();
    SplitPart part;
    try {
      part = parse_split_part(rec["split"].get<std::string>());
    } catch (const InputError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (rec.contains("frames")) {
      if (!rec["frames"].is_array()) throw ParseError("'frames' must be an array", line_no);
      FramePaths paths;
      for (const auto& f : rec["frames"]) {
        if (!f.is_string()) throw ParseError("frame references must be strings", line_no);
        paths.push_back(f.get<std::string>());
      }
      v.frames = std::move(paths);
    } else if (rec.contains("feature_file") && rec["feature_file"].is_string()) {
      fs::path fp = rec["feature_file"].get<std::string>();
      if (fp.is_relative()) fp = base / fp;
      v.frames = read_feature_file(fp);
    } else {
      throw ParseError("record needs 'frames' or 'feature_file'", line_no);
    }
    if (v.length() == 0) throw ParseError("record has no frames", line_no);
    split.part(part)[v.label].push_back(std::move(v));
  }
  split.verify_disjoint();
  return split;
}

void write_manifest(const DatasetSplit& split, const fs::path& dir) {
  fs::create_directories(dir / "features");
  std::ofstream out(dir / "manifest.jsonl");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  for (SplitPart p : {SplitPart::train, SplitPart::val, SplitPart::test}) {
    for (const auto& [label, samples] : split.part(p)) {
      for (const auto& v : samples) {
        json rec{{"id", v.id}, {"label", v.label}, {"split", to_string(p)}};
        if (const auto* paths = std::get_if<FramePaths>(&v.frames)) {
          rec["frames"] = *paths;
        } else {
          const std::string rel = "features/" + v.id + ".bin";
          write_feature_file(std::get<FeatureMatrix>(v.frames), dir / rel);
          rec["feature_file"] = rel;
        }
        out << rec.dump() << '\n';
      }
    }
  }
}

Episode sample_episode(const DatasetSplit& split, SplitPart part, int way, int shot, int queries,
                       std::uint64_t seed) {
  if (way < 2 || shot < 1 || queries < 1) {
    throw ParamError("episode needs way >= 2, shot >= 1, queries >= 1");
  }
  const ClassIndex& classes = split.part(part);
  std::vector<const std::string*> eligible;
  for (const auto& [name, samples] : classes) {
    if (static_cast<int>(samples.size()) >= shot + 1) eligible.push_back(&name);
  }
  if (static_cast<int>(eligible.size()) < way) {
    throw CapacityError(std::string(to_string(part)) + " has " + std::to_string(eligible.size()) +
                        " classes with >= " + std::to_string(shot + 1) + " samples; need " +
                        std::to_string(way));
  }

  Rng rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(static_cast<std::size_t>(way));

  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.query_count = queries;
  ep.seed = seed;
  std::vector<std::pair<int, const VideoSample*>> pool;
  for (int c = 0; c < way; ++c) {
    const std::string& name = *eligible[static_cast<std::size_t>(c)];
    ep.class_set.push_back(name);
    const auto& samples = classes.at(name);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < shot; ++k) ep.support.push_back(samples[order[static_cast<std::size_t>(k)]]);
    for (std::size_t i = static_cast<std::size_t>(shot); i < order.size(); ++i) {
      pool.emplace_back(c, &samples[order[i]]);
    }
  }
  if (static_cast<int>(pool.size()) < queries) {
    throw CapacityError("only " + std::to_string(pool.size()) + " query candidates for " +
                        std::to_string(queries) + " queries");
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  for (int q = 0; q < queries; ++q) {
    ep.queries.push_back(*pool[static_cast<std::size_t>(q)].second);
    ep.query_truth.push_back(pool[static_cast<std::size_t>(q)].first);
  }
  return ep;
}

std::vector<std::size_t> sample_frame_indices(std::size_t length, int m, bool deterministic,
                                              std::uint64_t seed) {
  if (m < 1) throw ParamError("sample_frames: m must be >= 1");
  if (length == 0) throw InputError("sample_frames: empty video");
  const std::size_t segs = static_cast<std::size_t>(m);
  std::vector<std::size_t> idx(segs);
  Rng rng(seed);
  for (std::size_t i = 0; i < segs; ++i) {
    if (deterministic) {
      idx[i] = ((2 * i + 1) * length) / (2 * segs);
    } else {
      const std::size_t lo = (i * length) / segs;
      const std::size_t hi = ((i + 1) * length) / segs;
      if (hi <= lo) {
        idx[i] = std::min(lo, length - 1);
      } else {
        std::uniform_int_distribution<std::size_t> pick(lo, hi - 1);
        idx[i] = pick(rng);
      }
    }
  }
  return idx;
}

std::vector<std::size_t> sample_frames(const VideoSample& v, int m, bool deterministic,
                                       std::uint64_t seed) {
  return sample_frame_indices(v.length(), m, deterministic, seed);
}

namespace {

ag::RowVector random_direction(Rng& rng, int begin, int count, int total) {
  std::normal_distribution<double> n01(0.0, 1.0);
  ag::RowVector v = ag::RowVector::Zero(total);
  for (int i = 0; i < count; ++i) v(begin + i) = n01(rng);
  const double norm = v.norm();
  return norm > 0.0 ? ag::RowVector(v / norm) : v;
}

}  // namespace

DatasetSplit synth_generate(const SynthOptions& o) {
  if (o.num_classes < 3) throw CapacityError("synth_generate needs at least 3 classes");
  if (o.per_class < 1 || o.d_raw < 2 || o.motif_len < 1 || o.frames < o.motif_len) {
    throw ParamError("synth_generate: invalid sizes");
  }
  if (o.signal_dims < 1 || o.signal_dims >= o.d_raw) {
    throw ParamError("synth_generate: signal_dims must be in [1, d_raw)");
  }
  int val = o.val_classes, test = o.test_classes, train = o.train_classes;
  if (val == 0 && test == 0 && train == 0) {
    val = std::max(1, static_cast<int>(std::lround(0.12 * o.num_classes)));
    test = std::max(1, static_cast<int>(std::lround(0.24 * o.num_classes)));
    train = o.num_classes - val - test;
  }
  if (train < 1 || val < 1 || test < 1 || train + val + test != o.num_classes) {
    throw CapacityError("synth_generate: each split part needs at least one class");
  }

  Rng rng(o.seed);
  const int d = o.d_raw;
  const int k = o.signal_dims;

  // One nuisance clip per motif offset, outside the signal subspace and shared
  // by all classes, so agreement on it carries no label information.
  std::vector<std::vector<ag::RowVector>> backgrounds(static_cast<std::size_t>(o.frames - o.motif_len + 1));
  for (auto& clip : backgrounds) {
    for (int t = 0; t < o.frames; ++t) clip.push_back(random_direction(rng, k, d - k, d) * o.background_scale);
  }

  DatasetSplit split;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> offset_dist(0, o.frames - o.motif_len);
  for (int c = 0; c < o.num_classes; ++c) {
    std::ostringstream name;
    name << "action_" << (c < 10 ? "0" : "") << c;
    std::vector<ag::RowVector> motif;
    for (int i = 0; i < o.motif_len; ++i) {
      motif.push_back(random_direction(rng, 0, k, d) * o.motif_scale);
    }
    const SplitPart part = c < train ? SplitPart::train
                           : c < train + val ? SplitPart::val
                                             : SplitPart::test;
    auto& bucket = split.part(part)[name.str()];
    for (int s = 0; s < o.per_class; ++s) {
      const int offset = offset_dist(rng);
      const auto& background = backgrounds[static_cast<std::size_t>(offset)];
      FeatureMatrix fm;
      fm.rows = static_cast<std::uint32_t>(o.frames);
      fm.cols = static_cast<std::uint32_t>(d);
      fm.data.resize(static_cast<std::size_t>(o.frames) * d);
      for (int t = 0; t < o.frames; ++t) {
        ag::RowVector frame = background[static_cast<std::size_t>(t)];
        if (t >= offset && t < offset + o.motif_len) frame += motif[static_cast<std::size_t>(t - offset)];
        for (int j = 0; j < d; ++j) {
          const double eps = o.noise_sigma > 0.0 ? o.noise_sigma * noise(rng) : 0.0;
          fm.data[static_cast<std::size_t>(t) * d + j] = static_cast<float>(frame(j) + eps);
        }
      }
      VideoSample v;
      v.id = name.str() + "_" + std::to_string(s);
      v.label = name.str();
      v.frames = std::move(fm);
      bucket.push_back(std::move(v));
    }
  }
  return split;
}

DatasetSplit synth_generate(int num_classes, int per_class, int d_raw, int motif_len,
                            double noise_sigma, std::uint64_t seed) {
  SynthOptions o;
  o.num_classes = num_classes;
  o.per_class = per_class;
  o.d_raw = d_raw;
  o.motif_len = motif_len;
  o.noise_sigma = noise_sigma;
  o.seed = seed;
  o.signal_dims = std::max(1, std::min(o.signal_dims, d_raw / 4));
  o.frames = std::max(o.frames, motif_len);
  return synth_generate(o);
}

}  // namespace mdmf
