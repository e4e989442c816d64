#include "mdmf/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "mdmf/errors.hpp"

namespace mdmf::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on non-scalar");
  return node_->value(0, 0);
}

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var constant_scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var make_result(Matrix value, std::span<const Var> parents, BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->is_leaf = false;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (const auto& p : parents) n->parents.push_back(p.node());
      n->backward = std::move(fn);
    }
  }
  return Var(std::move(n));
}

Var make_result(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
  return make_result(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                     std::move(fn));
}

void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward() needs a 1x1 loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() > 0) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->is_leaf) n->grad.resize(0, 0);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& n) {
    parent(n, 0).accumulate(n.grad);
    parent(n, 1).accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& n) {
    parent(n, 0).accumulate(n.grad);
    parent(n, 1).accumulate(-n.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(n.grad.cwiseProduct(pa.value));
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& n) { parent(n, 0).accumulate(n.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  return make_result(a.value().array() + s, {a},
                     [](Node& n) { parent(n, 0).accumulate(n.grad); });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()));
  }
  return make_result(a.value() * b.value(), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * n.grad);
  });
}

Var transpose(const Var& a) {
  Matrix t = a.value().transpose();
  return make_result(std::move(t), {a}, [](Node& n) {
    Matrix g = n.grad.transpose();
    parent(n, 0).accumulate(g);
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: bad row shape");
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  return make_result(std::move(v), {a, row}, [](Node& n) {
    parent(n, 0).accumulate(n.grad);
    Node& pr = parent(n, 1);
    if (pr.requires_grad) pr.accumulate(n.grad.colwise().sum());
  });
}

Var relu(const Var& a) {
  Matrix v = a.value().cwiseMax(0.0);
  return make_result(std::move(v), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    Matrix g = (p.value.array() > 0.0).select(n.grad, 0.0);
    p.accumulate(g);
  });
}

Var exp(const Var& a) {
  Matrix v = a.value().array().exp();
  return make_result(v, {a}, [](Node& n) {
    parent(n, 0).accumulate(n.grad.cwiseProduct(n.value));
  });
}

Var log(const Var& a) {
  Matrix v = a.value().array().log();
  return make_result(std::move(v), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    p.accumulate(n.grad.cwiseQuotient(p.value));
  });
}

Var clamp_min(const Var& a, double lo) {
  Matrix v = a.value().cwiseMax(lo);
  return make_result(std::move(v), {a}, [lo](Node& n) {
    Node& p = parent(n, 0);
    Matrix g = (p.value.array() >= lo).select(n.grad, 0.0);
    p.accumulate(g);
  });
}

Var detach(const Var& a) { return constant(a.value()); }

Var sum(const Var& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return make_result(std::move(v), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    p.accumulate(Matrix::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  Matrix v(1, 1);
  v(0, 0) = a.value().sum() / count;
  return make_result(std::move(v), {a}, [count](Node& n) {
    Node& p = parent(n, 0);
    p.accumulate(Matrix::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0) / count));
  });
}

Var mean_rows(const Var& a) {
  const double count = static_cast<double>(a.rows());
  Matrix v = a.value().colwise().sum() / count;
  return make_result(std::move(v), {a}, [count](Node& n) {
    Node& p = parent(n, 0);
    Matrix g = n.grad.replicate(p.value.rows(), 1) / count;
    p.accumulate(g);
  });
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw ShapeError("slice_rows: out of range");
  Matrix v = a.value().middleRows(begin, count);
  return make_result(std::move(v), {a}, [begin, count](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g.middleRows(begin, count) = n.grad;
    p.accumulate(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw ShapeError("slice_cols: out of range");
  Matrix v = a.value().middleCols(begin, count);
  return make_result(std::move(v), {a}, [begin, count](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g.middleCols(begin, count) = n.grad;
    p.accumulate(g);
  });
}

Var element(const Var& a, Eigen::Index r, Eigen::Index c) {
  if (r < 0 || c < 0 || r >= a.rows() || c >= a.cols()) throw ShapeError("element: out of range");
  Matrix v(1, 1);
  v(0, 0) = a.value()(r, c);
  return make_result(std::move(v), {a}, [r, c](Node& n) {
    Node& p = parent(n, 0);
    if (!p.requires_grad) return;
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g(r, c) = n.grad(0, 0);
    p.accumulate(g);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(v), parts, [](Node& n) {
    Eigen::Index off = 0;
    for (auto& p : n.parents) {
      const Eigen::Index r = p->value.rows();
      if (p->requires_grad) p->accumulate(n.grad.middleRows(off, r));
      off += r;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(v), parts, [](Node& n) {
    Eigen::Index off = 0;
    for (auto& p : n.parents) {
      const Eigen::Index c = p->value.cols();
      if (p->requires_grad) p->accumulate(n.grad.middleCols(off, c));
      off += c;
    }
  });
}

Var repeat_row(const Var& row, Eigen::Index n_rows) {
  if (row.rows() != 1) throw ShapeError("repeat_row: expected a single row");
  Matrix v = row.value().replicate(n_rows, 1);
  return make_result(std::move(v), {row}, [](Node& n) {
    parent(n, 0).accumulate(n.grad.colwise().sum());
  });
}

Var shift_rows(const Var& a, Eigen::Index offset, Eigen::Index segment) {
  if (segment <= 0 || a.rows() % segment != 0) throw ShapeError("shift_rows: bad segment");
  const Eigen::Index blocks = a.rows() / segment;
  Matrix v = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    for (Eigen::Index t = 0; t < segment; ++t) {
      const Eigen::Index src = t - offset;
      if (src >= 0 && src < segment) v.row(b * segment + t) = a.value().row(b * segment + src);
    }
  }
  return make_result(std::move(v), {a}, [offset, segment, blocks](Node& n) {
    Node& p = parent(n, 0);
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) {
      for (Eigen::Index t = 0; t < segment; ++t) {
        const Eigen::Index src = t - offset;
        if (src >= 0 && src < segment) g.row(b * segment + src) += n.grad.row(b * segment + t);
      }
    }
    p.accumulate(g);
  });
}

Var softmax_rows(const Var& a) {
  Matrix v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  return make_result(std::move(v), {a}, [](Node& n) {
    const Matrix& y = n.value;
    Matrix g(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = n.grad.row(r).dot(y.row(r));
      g.row(r) = y.row(r).cwiseProduct((n.grad.row(r).array() - dot).matrix());
    }
    parent(n, 0).accumulate(g);
  });
}

Var log_softmax_rows(const Var& a) {
  Matrix v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    const double lse = m + std::log((v.row(r).array() - m).exp().sum());
    v.row(r).array() -= lse;
  }
  return make_result(std::move(v), {a}, [](Node& n) {
    Matrix g(n.value.rows(), n.value.cols());
    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
      const double gs = n.grad.row(r).sum();
      g.row(r) = n.grad.row(r) - (n.value.row(r).array().exp() * gs).matrix();
    }
    parent(n, 0).accumulate(g);
  });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index cols = a.cols();
  const bool affine = gamma.defined();
  if (affine && (gamma.cols() != cols || beta.cols() != cols)) {
    throw ShapeError("layer_norm_rows: affine shape mismatch");
  }
  Matrix xhat(a.rows(), cols);
  Eigen::VectorXd inv_std(a.rows());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mu = a.value().row(r).mean();
    const double var = (a.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (a.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix y = xhat;
  if (affine) {
    y = y.array().rowwise() * gamma.value().row(0).array();
    y.rowwise() += beta.value().row(0);
  }
  auto backward = [xhat, inv_std, affine](Node& n) {
    Node& px = parent(n, 0);
    Matrix dxhat = n.grad;
    if (affine) {
      Node& pg = parent(n, 1);
      Node& pb = parent(n, 2);
      if (pg.requires_grad) pg.accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
      if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
      dxhat = dxhat.array().rowwise() * pg.value.row(0).array();
    }
    if (!px.requires_grad) return;
    Matrix dx(dxhat.rows(), dxhat.cols());
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
      const double m1 = dxhat.row(r).mean();
      const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(dxhat.cols());
      dx.row(r) = ((dxhat.row(r).array() - m1) - xhat.row(r).array() * m2) * inv_std(r);
    }
    px.accumulate(dx);
  };
  if (affine) return make_result(std::move(y), {a, gamma, beta}, std::move(backward));
  return make_result(std::move(y), {a}, std::move(backward));
}

Var affine_normalize_cols(const Var& a, const RowVector& mean, const RowVector& var,
                          const Var& gamma, const Var& beta, double eps) {
  RowVector inv = (var.array() + eps).rsqrt();
  Matrix xhat = (a.value().rowwise() - mean).array().rowwise() * inv.array();
  Matrix y = xhat.array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  return make_result(std::move(y), {a, gamma, beta}, [xhat, inv](Node& n) {
    Node& px = parent(n, 0);
    Node& pg = parent(n, 1);
    Node& pb = parent(n, 2);
    if (pg.requires_grad) pg.accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
    if (px.requires_grad) {
      Matrix dx = n.grad.array().rowwise() * (pg.value.row(0).array() * inv.array());
      px.accumulate(dx);
    }
  });
}

Var batch_norm_cols(const Var& a, const Var& gamma, const Var& beta, double eps,
                    RowVector* batch_mean, RowVector* batch_var) {
  const double count = static_cast<double>(a.rows());
  RowVector mu = a.value().colwise().mean();
  Matrix centered = a.value().rowwise() - mu;
  RowVector var = centered.array().square().colwise().sum() / count;
  RowVector inv = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv.array();
  Matrix y = xhat.array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  return make_result(std::move(y), {a, gamma, beta}, [xhat, inv, count](Node& n) {
    Node& px = parent(n, 0);
    Node& pg = parent(n, 1);
    Node& pb = parent(n, 2);
    if (pg.requires_grad) pg.accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
    if (!px.requires_grad) return;
    Matrix dxhat = n.grad.array().rowwise() * pg.value.row(0).array();
    RowVector m1 = dxhat.colwise().sum() / count;
    RowVector m2 = dxhat.cwiseProduct(xhat).colwise().sum() / count;
    Matrix dx = ((dxhat.rowwise() - m1).array() - xhat.array().rowwise() * m2.array()).rowwise() *
                inv.array();
    px.accumulate(dx);
  });
}

Var normalize_rows(const Var& a) {
  Eigen::VectorXd norms = a.value().rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) > 0.0)) throw NumericError("normalize_rows: zero-norm row " + std::to_string(r));
  }
  Matrix y = a.value().array().colwise() / norms.array();
  return make_result(y, {a}, [norms](Node& n) {
    const Matrix& y = n.value;
    Matrix g(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double d = n.grad.row(r).dot(y.row(r));
      g.row(r) = (n.grad.row(r) - y.row(r) * d) / norms(r);
    }
    parent(n, 0).accumulate(g);
  });
}

}  // namespace mdmf::ag
