#include "mdmf/matching.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>

#include "mdmf/errors.hpp"

namespace mdmf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Softmin {
  double value = kInf;
  // weights[k] aligned with the candidate list passed in
  std::array<double, 4> weights{};
};

// Candidates may be +inf (unreachable); those get zero weight.
Softmin softmin(std::span<const double> xs, double gamma) {
  Softmin out;
  double m = kInf;
  for (double x : xs) m = std::min(m, x);
  if (m == kInf) return out;
  double z = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    out.weights[k] = xs[k] == kInf ? 0.0 : std::exp(-(xs[k] - m) / gamma);
    z += out.weights[k];
  }
  for (std::size_t k = 0; k < xs.size(); ++k) out.weights[k] /= z;
  out.value = m - gamma * std::log(z);
  return out;
}

struct Pred {
  Eigen::Index i, j;  // i < 0 marks the zero-cost entry
};

// Predecessors of cell (i, j) in a rows x cols grid.
int predecessors(Eigen::Index i, Eigen::Index j, Eigen::Index cols, std::array<Pred, 4>& out) {
  int n = 0;
  if (j == 0) {
    out[n++] = {-1, -1};
    if (i > 0) out[n++] = {i - 1, 0};
    return n;
  }
  if (i > 0) {
    out[n++] = {i - 1, j - 1};
    out[n++] = {i - 1, j};
  }
  if (j == cols - 1) out[n++] = {i, j - 1};
  return n;
}

ag::Matrix forward_table(const ag::Matrix& c, double gamma) {
  const Eigen::Index rows = c.rows(), cols = c.cols();
  ag::Matrix r(rows, cols);
  std::array<Pred, 4> preds;
  std::array<double, 4> vals;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const int n = predecessors(i, j, cols, preds);
      for (int k = 0; k < n; ++k) vals[k] = preds[k].i < 0 ? 0.0 : r(preds[k].i, preds[k].j);
      const double s = n == 0 ? kInf : softmin(std::span<const double>(vals.data(), n), gamma).value;
      r(i, j) = s == kInf ? kInf : c(i, j) + s;
    }
  }
  return r;
}

void check_otam_args(const ag::Matrix& cost, double gamma) {
  if (!(gamma > 0.0)) throw ParamError("otam: gamma must be > 0");
  if (cost.rows() < 1 || cost.cols() < 1) throw ShapeError("otam: empty cost matrix");
  if (!cost.allFinite()) throw NumericError("otam: non-finite cost");
}

std::vector<double> last_column(const ag::Matrix& r) {
  std::vector<double> v(static_cast<std::size_t>(r.rows()));
  for (Eigen::Index i = 0; i < r.rows(); ++i) v[static_cast<std::size_t>(i)] = r(i, r.cols() - 1);
  return v;
}

double softmin_all(const std::vector<double>& xs, double gamma, std::vector<double>* weights) {
  double m = kInf;
  for (double x : xs) m = std::min(m, x);
  if (m == kInf) throw NumericError("otam: no admissible alignment path");
  double z = 0.0;
  std::vector<double> w(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    w[k] = xs[k] == kInf ? 0.0 : std::exp(-(xs[k] - m) / gamma);
    z += w[k];
  }
  if (weights) {
    for (double& x : w) x /= z;
    *weights = std::move(w);
  }
  return m - gamma * std::log(z);
}

}  // namespace

double otam_alignment(const ag::Matrix& cost, double gamma) {
  check_otam_args(cost, gamma);
  return softmin_all(last_column(forward_table(cost, gamma)), gamma, nullptr);
}

ag::Matrix otam_alignment_grad(const ag::Matrix& cost, double gamma) {
  check_otam_args(cost, gamma);
  const Eigen::Index rows = cost.rows(), cols = cost.cols();
  const ag::Matrix r = forward_table(cost, gamma);
  std::vector<double> exit_w;
  softmin_all(last_column(r), gamma, &exit_w);

  ag::Matrix adj = ag::Matrix::Zero(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) adj(i, cols - 1) = exit_w[static_cast<std::size_t>(i)];

  std::array<Pred, 4> preds;
  std::array<double, 4> vals;
  for (Eigen::Index i = rows - 1; i >= 0; --i) {
    for (Eigen::Index j = cols - 1; j >= 0; --j) {
      const double g = adj(i, j);
      if (g == 0.0) continue;
      const int n = predecessors(i, j, cols, preds);
      for (int k = 0; k < n; ++k) vals[k] = preds[k].i < 0 ? 0.0 : r(preds[k].i, preds[k].j);
      const Softmin s = softmin(std::span<const double>(vals.data(), n), gamma);
      for (int k = 0; k < n; ++k) {
        if (preds[k].i >= 0) adj(preds[k].i, preds[k].j) += g * s.weights[k];
      }
    }
  }
  return adj;
}

double otam_value(const ag::Matrix& cost, const OtamOptions& opts) {
  const double fwd = otam_alignment(cost, opts.gamma);
  if (!opts.bidirectional) return fwd;
  return 0.5 * (fwd + otam_alignment(cost.transpose(), opts.gamma));
}

ag::Var otam(const ag::Var& cost, const OtamOptions& opts) {
  ag::Matrix v(1, 1);
  v(0, 0) = otam_value(cost.value(), opts);
  return ag::make_result(std::move(v), {cost}, [opts](ag::Node& n) {
    ag::Node& p = *n.parents[0];
    const double g = n.grad(0, 0);
    ag::Matrix grad = otam_alignment_grad(p.value, opts.gamma);
    if (opts.bidirectional) {
      ag::Matrix back = otam_alignment_grad(p.value.transpose(), opts.gamma).transpose();
      grad = 0.5 * (grad + back);
    }
    p.accumulate(grad * g);
  });
}

Prototype prototype(std::span<const FusedFeatures> samples, std::string class_name) {
  if (samples.empty()) throw InputError("prototype: no support samples");
  const ViewKind view = samples.front().view;
  ag::Var acc = samples.front().data;
  for (std::size_t k = 1; k < samples.size(); ++k) {
    if (samples[k].view != view) throw InputError("prototype: samples from different views");
    acc = ag::add(acc, samples[k].data);
  }
  if (samples.size() > 1) acc = ag::scale(acc, 1.0 / static_cast<double>(samples.size()));
  return {acc, std::move(class_name), view};
}

ag::Var frame_cost(const ag::Var& a, const ag::Var& b) {
  if (a.cols() != b.cols()) throw ShapeError("frame_cost: dimension mismatch");
  ag::Var cos = ag::matmul(ag::normalize_rows(a), ag::transpose(ag::normalize_rows(b)));
  return ag::add_scalar(ag::scale(cos, -1.0), 1.0);
}

ag::Var view_distance(const FusedFeatures& query, const Prototype& proto, const OtamOptions& opts) {
  if (query.view != proto.view) throw InputError("view_distance: view mismatch");
  return otam(frame_cost(query.visual_rows(), proto.visual_rows()), opts);
}

double fuse_distance(double d_global, double d_local) { return d_global + d_local; }

ag::Var fuse_distance(std::span<const ag::Var> view_distances) {
  if (view_distances.empty()) throw InputError("fuse_distance: no views");
  ag::Var acc = view_distances[0];
  for (std::size_t i = 1; i < view_distances.size(); ++i) acc = ag::add(acc, view_distances[i]);
  return acc;
}

ag::Var classify(const ag::Var& distances) { return ag::softmax_rows(ag::scale(distances, -1.0)); }

std::vector<double> classify(const std::vector<double>& distances) {
  ag::Matrix d(1, static_cast<Eigen::Index>(distances.size()));
  for (std::size_t i = 0; i < distances.size(); ++i) d(0, static_cast<Eigen::Index>(i)) = distances[i];
  ag::NoGradGuard guard;
  const ag::Matrix p = classify(ag::constant(d)).value();
  return {p.data(), p.data() + p.size()};
}

namespace {

void check_truth(Eigen::Index rows, Eigen::Index cols, std::span<const int> truth) {
  if (static_cast<Eigen::Index>(truth.size()) != rows) throw ShapeError("main_loss: truth size");
  for (int t : truth) {
    if (t < 0 || t >= cols) throw InputError("main_loss: truth index out of range");
  }
}

ag::Var nll_rows(const ag::Var& logp, std::span<const int> truth) {
  std::vector<ag::Var> picked;
  for (std::size_t r = 0; r < truth.size(); ++r) {
    picked.push_back(ag::element(logp, static_cast<Eigen::Index>(r), truth[r]));
  }
  return ag::scale(ag::mean(ag::concat_cols(picked)), -1.0);
}

}  // namespace

ag::Var main_loss(const ag::Var& probs, std::span<const int> truth) {
  check_truth(probs.rows(), probs.cols(), truth);
  return nll_rows(ag::log(ag::clamp_min(probs, 1e-300)), truth);
}

double main_loss(const std::vector<std::vector<double>>& probs, std::span<const int> truth) {
  if (probs.size() != truth.size()) throw ShapeError("main_loss: truth size");
  double acc = 0.0;
  for (std::size_t r = 0; r < probs.size(); ++r) {
    acc -= std::log(std::max(probs[r].at(static_cast<std::size_t>(truth[r])), 1e-300));
  }
  return acc / static_cast<double>(probs.size());
}

ag::Var cross_entropy_from_distances(const ag::Var& distances, std::span<const int> truth) {
  check_truth(distances.rows(), distances.cols(), truth);
  return nll_rows(ag::log_softmax_rows(ag::scale(distances, -1.0)), truth);
}

}  // namespace mdmf
