#include "mdmf/pps.hpp"

#include <algorithm>
#include <cmath>

#include "mdmf/errors.hpp"
#include "mdmf/rng.hpp"

namespace mdmf::pps {

SelectMode parse_select_mode(const std::string& s) {
  if (s == "sample") return SelectMode::sample;
  if (s == "argmax") return SelectMode::argmax;
  throw ParamError("pps.mode must be 'sample' or 'argmax', got '" + s + "'");
}

ag::RowVector query_video_vector(const ag::Matrix& frames) {
  if (frames.rows() < 1) throw InputError("query_video_vector: empty sequence");
  return frames.colwise().mean();
}

double similarity(const ag::RowVector& a, const ag::RowVector& b) {
  if (a.size() != b.size()) throw ShapeError("similarity: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("similarity: zero-norm input");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

PromptDistribution prompt_distribution(const std::vector<double>& sims, double temperature,
                                       std::vector<std::string> class_set) {
  if (!(temperature > 0.0)) throw ParamError("pps temperature must be > 0");
  if (sims.empty()) throw InputError("prompt_distribution: no similarities");
  const double mx = *std::max_element(sims.begin(), sims.end());
  PromptDistribution d;
  d.temperature = temperature;
  d.class_set = std::move(class_set);
  d.probs.resize(sims.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    if (!std::isfinite(sims[i])) throw NumericError("prompt_distribution: non-finite similarity");
    d.probs[i] = std::exp((sims[i] - mx) / temperature);
    z += d.probs[i];
  }
  for (double& p : d.probs) p /= z;
  return d;
}

std::size_t sample_index(const std::vector<double>& probs, double u) {
  double cdf = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cdf += probs[i];
    if (u < cdf) return i;
  }
  // Rounding can leave the total just under 1; fall back to the last class
  // with mass.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return 0;
}

std::size_t argmax_index(const std::vector<double>& probs) {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

PromptEmbedding select_prompt(const PromptDistribution& dist,
                              const std::vector<PromptEmbedding>& support_tokens, SelectMode mode,
                              std::uint64_t seed) {
  if (dist.probs.size() != support_tokens.size()) {
    throw ShapeError("select_prompt: distribution and support tokens differ in length");
  }
  std::size_t idx;
  if (mode == SelectMode::argmax) {
    idx = argmax_index(dist.probs);
  } else {
    Rng rng(seed);
    idx = sample_index(dist.probs, std::generate_canonical<double, 53>(rng));
  }
  PromptEmbedding out = support_tokens[idx];
  out.origin = PromptOrigin::pps_sampled;
  return out;
}

}  // namespace mdmf::pps
