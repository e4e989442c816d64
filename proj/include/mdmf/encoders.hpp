#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mdmf/autograd.hpp"
#include "mdmf/episodes.hpp"

namespace mdmf {

// T x D per-frame visual embeddings.
struct FrameEmbeddingSeq {
  ag::Var data;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }
};

enum class PromptOrigin { text_encoder, pps_sampled, null_token };

struct PromptEmbedding {
  ag::Var data;  // 1 x D
  std::string source_class;
  PromptOrigin origin = PromptOrigin::text_encoder;
};

struct EncoderConfig {
  std::string kind = "stub";
  int dim = 64;
  int raw_dim = 64;  // input feature width expected by the stub
  std::string prompt_template = "a video of {label}";
  bool trainable = false;
  std::uint64_t seed = 7;
};

std::string apply_template(const std::string& tmpl, const std::string& label);

class VisualEncoder {
 public:
  virtual ~VisualEncoder() = default;
  virtual FrameEmbeddingSeq encode_video(const VideoSample& video,
                                         std::span<const std::size_t> frame_indices) const = 0;
  virtual int dim() const = 0;
  // Learnable tensors, empty for frozen encoders.
  virtual std::vector<std::pair<std::string, ag::Var>> parameters() { return {}; }
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual PromptEmbedding encode_label(const std::string& class_name) const = 0;
  virtual int dim() const = 0;
};

// Seeded random projection d_raw -> D followed by a per-frame layer norm.
// Path-referenced frames are mapped to a pseudo-feature seeded by the path.
class StubVisualEncoder final : public VisualEncoder {
 public:
  explicit StubVisualEncoder(const EncoderConfig& cfg);
  FrameEmbeddingSeq encode_video(const VideoSample& video,
                                 std::span<const std::size_t> frame_indices) const override;
  int dim() const override { return dim_; }
  std::vector<std::pair<std::string, ag::Var>> parameters() override;

  ag::Matrix raw_frames(const VideoSample& video, std::span<const std::size_t> frame_indices) const;
  const ag::Var& projection() const { return projection_; }

 private:
  int dim_;
  int raw_dim_;
  bool trainable_;
  ag::Var projection_;  // d_raw x D
};

// Hash of the templated label seeds a Gaussian draw, normalised to unit norm.
class StubTextEncoder final : public TextEncoder {
 public:
  explicit StubTextEncoder(const EncoderConfig& cfg);
  PromptEmbedding encode_label(const std::string& class_name) const override;
  int dim() const override { return dim_; }

 private:
  int dim_;
  std::string template_;
  std::uint64_t seed_;
};

struct EncoderPair {
  std::unique_ptr<VisualEncoder> visual;
  std::unique_ptr<TextEncoder> text;
};

using EncoderFactory = std::function<EncoderPair(const EncoderConfig&)>;

// `encoder.kind` selects a factory; "stub" is always registered.
void register_encoder(const std::string& kind, EncoderFactory factory);
EncoderPair make_encoders(const EncoderConfig& cfg);

}  // namespace mdmf
