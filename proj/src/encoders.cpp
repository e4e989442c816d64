#include "mdmf/encoders.hpp"

#include <map>
#include <mutex>
#include <random>

#include "mdmf/errors.hpp"
#include "mdmf/rng.hpp"

namespace mdmf {

std::string apply_template(const std::string& tmpl, const std::string& label) {
  static const std::string placeholder = "{label}";
  std::string out = tmpl;
  const auto pos = out.find(placeholder);
  if (pos == std::string::npos) return out + label;
  out.replace(pos, placeholder.size(), label);
  return out;
}

StubVisualEncoder::StubVisualEncoder(const EncoderConfig& cfg)
    : dim_(cfg.dim), raw_dim_(cfg.raw_dim), trainable_(cfg.trainable) {
  if (cfg.dim < 8) throw ParamError("encoder dim must be >= 8");
  if (cfg.raw_dim < 1) throw ParamError("encoder raw_dim must be >= 1");
  Rng rng(derive_seed(cfg.seed, "visual-projection"));
  std::normal_distribution<double> n01(0.0, 1.0 / std::sqrt(static_cast<double>(raw_dim_)));
  ag::Matrix w(raw_dim_, dim_);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n01(rng);
  projection_ = trainable_ ? ag::parameter(std::move(w)) : ag::constant(std::move(w));
}

ag::Matrix StubVisualEncoder::raw_frames(const VideoSample& video,
                                         std::span<const std::size_t> frame_indices) const {
  ag::Matrix raw(static_cast<Eigen::Index>(frame_indices.size()), raw_dim_);
  if (const auto* fm = std::get_if<FeatureMatrix>(&video.frames)) {
    if (static_cast<int>(fm->cols) != raw_dim_) {
      throw ShapeError("video '" + video.id + "' has feature width " + std::to_string(fm->cols) +
                       ", encoder expects " + std::to_string(raw_dim_));
    }
    for (std::size_t i = 0; i < frame_indices.size(); ++i) {
      const std::size_t t = frame_indices[i];
      if (t >= fm->rows) throw ShapeError("frame index out of range for '" + video.id + "'");
      for (int j = 0; j < raw_dim_; ++j) raw(static_cast<Eigen::Index>(i), j) = fm->at(t, static_cast<std::size_t>(j));
    }
  } else {
    const auto& paths = std::get<FramePaths>(video.frames);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t i = 0; i < frame_indices.size(); ++i) {
      if (frame_indices[i] >= paths.size()) throw ShapeError("frame index out of range for '" + video.id + "'");
      Rng rng(fnv1a64(paths[frame_indices[i]]));
      for (int j = 0; j < raw_dim_; ++j) raw(static_cast<Eigen::Index>(i), j) = n01(rng);
    }
  }
  return raw;
}

FrameEmbeddingSeq StubVisualEncoder::encode_video(const VideoSample& video,
                                                  std::span<const std::size_t> frame_indices) const {
  if (frame_indices.empty()) throw InputError("encode_video: no frames");
  ag::Var raw = ag::constant(raw_frames(video, frame_indices));
  ag::Var projected = ag::matmul(raw, projection_);
  return {ag::layer_norm_rows(projected, ag::Var(), ag::Var())};
}

std::vector<std::pair<std::string, ag::Var>> StubVisualEncoder::parameters() {
  if (!trainable_) return {};
  return {{"encoder.projection", projection_}};
}

StubTextEncoder::StubTextEncoder(const EncoderConfig& cfg)
    : dim_(cfg.dim), template_(cfg.prompt_template), seed_(cfg.seed) {
  if (cfg.dim < 8) throw ParamError("encoder dim must be >= 8");
}

PromptEmbedding StubTextEncoder::encode_label(const std::string& class_name) const {
  if (class_name.empty()) throw InputError("encode_label: empty class name");
  const std::string text = apply_template(template_, class_name);
  Rng rng(derive_seed(seed_, fnv1a64(text)));
  std::normal_distribution<double> n01(0.0, 1.0);
  ag::Matrix v(1, dim_);
  for (int j = 0; j < dim_; ++j) v(0, j) = n01(rng);
  v /= v.norm();
  return {ag::constant(std::move(v)), class_name, PromptOrigin::text_encoder};
}

namespace {

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, EncoderFactory>& registry() {
  static std::map<std::string, EncoderFactory> r{
      {"stub", [](const EncoderConfig& cfg) {
         return EncoderPair{std::make_unique<StubVisualEncoder>(cfg),
                            std::make_unique<StubTextEncoder>(cfg)};
       }}};
  return r;
}

}  // namespace

void register_encoder(const std::string& kind, EncoderFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry()[kind] = std::move(factory);
}

EncoderPair make_encoders(const EncoderConfig& cfg) {
  EncoderFactory f;
  {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(cfg.kind);
    if (it == registry().end()) throw ParamError("unknown encoder.kind '" + cfg.kind + "'");
    f = it->second;
  }
  EncoderPair p = f(cfg);
  if (!p.visual || !p.text) throw ParamError("encoder factory '" + cfg.kind + "' returned null");
  if (p.visual->dim() != p.text->dim()) {
    throw ShapeError("visual and text encoders disagree on embedding dimension");
  }
  return p;
}

}  // namespace mdmf
