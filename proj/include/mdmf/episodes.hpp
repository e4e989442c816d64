#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "mdmf/autograd.hpp"

namespace mdmf {

// T_raw x d_raw frame features, stored as f32 like the on-disk format.
struct FeatureMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;  // row-major

  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool operator==(const FeatureMatrix&) const = default;
};

using FramePaths = std::vector<std::string>;

struct VideoSample {
  std::string id;
  std::string label;
  std::variant<FramePaths, FeatureMatrix> frames;

  std::size_t length() const;
  bool operator==(const VideoSample&) const = default;
};

enum class SplitPart { train, val, test };

SplitPart parse_split_part(const std::string& s);
const char* to_string(SplitPart p);

// Samples grouped by class name, per split part. std::map keeps class order
// stable so sampling is reproducible.
using ClassIndex = std::map<std::string, std::vector<VideoSample>>;

struct DatasetSplit {
  ClassIndex train;
  ClassIndex val;
  ClassIndex test;

  const ClassIndex& part(SplitPart p) const;
  ClassIndex& part(SplitPart p);
  std::size_t sample_count() const;
  // Throws SplitViolation if a class name appears in more than one part.
  void verify_disjoint() const;
};

struct Episode {
  int way = 0;
  int shot = 0;
  int query_count = 0;
  std::vector<std::string> class_set;
  std::vector<VideoSample> support;  // class-major: support[c * shot + k]
  std::vector<VideoSample> queries;
  std::vector<int> query_truth;  // index into class_set
  std::uint64_t seed = 0;
};

// Newline-delimited JSON records. Feature files are resolved relative to the
// manifest's directory.
DatasetSplit load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetSplit& split, const std::filesystem::path& dir);

FeatureMatrix read_feature_file(const std::filesystem::path& path);
void write_feature_file(const FeatureMatrix& m, const std::filesystem::path& path);

Episode sample_episode(const DatasetSplit& split, SplitPart part, int way, int shot, int queries,
                       std::uint64_t seed);

// TSN-style segment sampling. Deterministic mode takes each segment's centre
// frame; otherwise one uniform draw per segment. Clips shorter than m repeat
// frames and the result stays non-decreasing.
std::vector<std::size_t> sample_frames(const VideoSample& v, int m, bool deterministic,
                                       std::uint64_t seed);
std::vector<std::size_t> sample_frame_indices(std::size_t length, int m, bool deterministic,
                                              std::uint64_t seed);

struct SynthOptions {
  int num_classes = 10;
  int per_class = 20;
  int d_raw = 64;
  int motif_len = 8;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
  int frames = 32;                 // T_raw
  int signal_dims = 8;             // motif directions live in the first signal_dims coordinates
  double motif_scale = 1.0;
  double background_scale = 1.0;  // per-frame nuisance outside the signal subspace, one clip per offset
  // Class counts per part; zero means derived from num_classes.
  int train_classes = 0;
  int val_classes = 0;
  int test_classes = 0;
};

DatasetSplit synth_generate(const SynthOptions& opts);
DatasetSplit synth_generate(int num_classes, int per_class, int d_raw, int motif_len,
                            double noise_sigma, std::uint64_t seed);

}  // namespace mdmf
