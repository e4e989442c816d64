#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdmf/autograd.hpp"
#include "mdmf/rng.hpp"

namespace mdmf {

// Named tensors. Parameters are learnable; buffers (running statistics) are
// saved with checkpoints but never see gradients.
using NamedVars = std::vector<std::pair<std::string, ag::Var>>;

inline void append_prefixed(NamedVars& out, const std::string& prefix, const NamedVars& in) {
  for (const auto& [name, v] : in) out.emplace_back(prefix + name, v);
}

ag::Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

}  // namespace mdmf
