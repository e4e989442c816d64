#pragma once

// Probability prompt selector: gives each query a label prompt drawn from the
// support classes, weighted by a temperature softmax over cosine similarity
// between the query's pooled visual embedding and each class prompt.

#include <cstdint>
#include <string>
#include <vector>

#include "mdmf/autograd.hpp"
#include "mdmf/encoders.hpp"

namespace mdmf::pps {

enum class SelectMode { sample, argmax };

SelectMode parse_select_mode(const std::string& s);

struct PromptDistribution {
  std::vector<double> probs;
  std::vector<std::string> class_set;
  double temperature = 1.0;
};

// Temporal mean of a T x D sequence.
ag::RowVector query_video_vector(const ag::Matrix& frames);

double similarity(const ag::RowVector& a, const ag::RowVector& b);

PromptDistribution prompt_distribution(const std::vector<double>& sims, double temperature,
                                       std::vector<std::string> class_set = {});

// Inverse-CDF pick with a single uniform variate u in [0, 1).
std::size_t sample_index(const std::vector<double>& probs, double u);
std::size_t argmax_index(const std::vector<double>& probs);

PromptEmbedding select_prompt(const PromptDistribution& dist,
                              const std::vector<PromptEmbedding>& support_tokens, SelectMode mode,
                              std::uint64_t seed);

}  // namespace mdmf::pps
