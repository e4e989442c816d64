#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major f64
// matrices. Every value is two-dimensional; scalars are 1x1 and vectors are
// 1xN rows. Graphs are built eagerly and released when the last Var handle
// goes away.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace mdmf::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  // Direct write access, for parameter updates and tests. Not tracked.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

Var constant(Matrix value);
Var constant_scalar(double v);
Var parameter(Matrix value);

// Builds an interior node. If gradient recording is off or no parent requires
// grad, the backward closure is dropped and the result is a constant.
Var make_result(Matrix value, std::initializer_list<Var> parents, BackwardFn fn);
Var make_result(Matrix value, std::span<const Var> parents, BackwardFn fn);

// Runs backpropagation from a 1x1 loss. Leaf gradients accumulate across
// calls; interior gradients are released afterwards.
void backward(const Var& loss);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise and linear algebra.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// a (RxC) + row (1xC) broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var clamp_min(const Var& a, double lo);
Var detach(const Var& a);

// Reductions and reshaping.
Var sum(const Var& a);
Var mean(const Var& a);
Var mean_rows(const Var& a);  // 1xC column means
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count);
Var element(const Var& a, Eigen::Index r, Eigen::Index c);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var repeat_row(const Var& row, Eigen::Index n);

// Row r of the output is row r - offset of the input within each block of
// `segment` rows; rows shifted in from outside the block are zero.
Var shift_rows(const Var& a, Eigen::Index offset, Eigen::Index segment);

// Normalisation and probability.
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
// Per-row layer normalisation; gamma/beta may be undefined for no affine.
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);
// Per-column normalisation with externally supplied statistics (inference).
Var affine_normalize_cols(const Var& a, const RowVector& mean, const RowVector& var,
                          const Var& gamma, const Var& beta, double eps);
// Per-column batch normalisation using the batch statistics. Biased batch
// mean/variance are written to the out parameters.
Var batch_norm_cols(const Var& a, const Var& gamma, const Var& beta, double eps,
                    RowVector* batch_mean, RowVector* batch_var);
// Unit L2-norm rows. Throws NumericError on a zero row.
Var normalize_rows(const Var& a);

}  // namespace mdmf::ag
