#include <doctest.h>

#include <functional>
#include <random>

#include "mdmf/autograd.hpp"
#include "mdmf/errors.hpp"
#include "oracles.hpp"

using namespace mdmf;
using ag::Matrix;
using ag::Var;

namespace {

using UnaryOp = std::function<Var(const Var&)>;

// Gradient of sum(op(x) .* w) against central differences.
double check_unary(const UnaryOp& op, const Matrix& x, std::mt19937_64& rng) {
  Var probe = op(ag::constant(x));
  const Matrix w = oracle::random_matrix(rng, probe.rows(), probe.cols());
  Var xv = ag::parameter(x);
  ag::backward(ag::sum(ag::mul(op(xv), ag::constant(w))));
  auto f = [&](const Matrix& m) {
    ag::NoGradGuard g;
    return ag::sum(ag::mul(op(ag::constant(m)), ag::constant(w))).item();
  };
  return oracle::relative_error(xv.grad(), oracle::numeric_grad(f, x));
}

}  // namespace

TEST_CASE("elementwise and linear ops match finite differences") {
  std::mt19937_64 rng(11);
  const Matrix x = oracle::random_matrix(rng, 4, 5, 0.2, 2.0);  // positive for log
  const Matrix b = oracle::random_matrix(rng, 4, 5);
  const Matrix r = oracle::random_matrix(rng, 1, 5);
  const Matrix m = oracle::random_matrix(rng, 5, 3);
  const Matrix g = oracle::random_matrix(rng, 1, 5, 0.5, 1.5);

  const std::vector<std::pair<const char*, UnaryOp>> ops{
      {"add", [&](const Var& a) { return ag::add(a, ag::constant(b)); }},
      {"sub", [&](const Var& a) { return ag::sub(ag::constant(b), a); }},
      {"mul", [&](const Var& a) { return ag::mul(a, a); }},
      {"scale", [](const Var& a) { return ag::scale(a, -2.5); }},
      {"add_scalar", [](const Var& a) { return ag::add_scalar(a, 3.0); }},
      {"matmul", [&](const Var& a) { return ag::matmul(a, ag::constant(m)); }},
      {"transpose", [](const Var& a) { return ag::transpose(a); }},
      {"add_row", [&](const Var& a) { return ag::add_row(a, ag::constant(r)); }},
      {"add_row (row grad)", [&](const Var& a) { return ag::add_row(ag::constant(b), ag::slice_rows(a, 1, 1)); }},
      {"relu", [](const Var& a) { return ag::relu(ag::add_scalar(a, -1.0)); }},
      {"exp", [](const Var& a) { return ag::exp(a); }},
      {"log", [](const Var& a) { return ag::log(a); }},
      {"clamp_min", [](const Var& a) { return ag::clamp_min(a, 1.0); }},
      {"mean", [](const Var& a) { return ag::mean(a); }},
      {"mean_rows", [](const Var& a) { return ag::mean_rows(a); }},
      {"slice_cols", [](const Var& a) { return ag::slice_cols(a, 1, 3); }},
      {"element", [](const Var& a) { return ag::element(a, 2, 3); }},
      {"concat_rows", [](const Var& a) {
         const std::vector<Var> parts{a, ag::scale(a, 2.0)};
         return ag::concat_rows(parts);
       }},
      {"concat_cols", [](const Var& a) {
         const std::vector<Var> parts{ag::exp(a), a};
         return ag::concat_cols(parts);
       }},
      {"repeat_row", [](const Var& a) { return ag::repeat_row(ag::slice_rows(a, 0, 1), 3); }},
      {"shift_rows", [](const Var& a) { return ag::shift_rows(a, 1, 2); }},
      {"softmax_rows", [](const Var& a) { return ag::softmax_rows(a); }},
      {"log_softmax_rows", [](const Var& a) { return ag::log_softmax_rows(a); }},
      {"layer_norm_rows", [&](const Var& a) { return ag::layer_norm_rows(a, ag::constant(g), ag::constant(r)); }},
      {"layer_norm_rows (no affine)", [](const Var& a) { return ag::layer_norm_rows(a, Var(), Var()); }},
      {"batch_norm_cols", [&](const Var& a) {
         return ag::batch_norm_cols(a, ag::constant(g), ag::constant(r), 1e-5, nullptr, nullptr);
       }},
      {"affine_normalize_cols", [&](const Var& a) {
         return ag::affine_normalize_cols(a, r, g, ag::constant(g), ag::constant(r), 1e-5);
       }},
      {"normalize_rows", [](const Var& a) { return ag::normalize_rows(a); }},
  };
  for (const auto& [name, op] : ops) {
    CAPTURE(name);
    CHECK(check_unary(op, x, rng) < 1e-6);
  }
}

TEST_CASE("forward values") {
  const Matrix x{{1.0, 2.0, 3.0}};
  const Matrix sm = ag::softmax_rows(ag::constant(x)).value();
  const auto expect = oracle::softmax({1.0, 2.0, 3.0});
  for (int i = 0; i < 3; ++i) CHECK(sm(0, i) == doctest::Approx(expect[static_cast<std::size_t>(i)]).epsilon(1e-14));
  CHECK(ag::shift_rows(ag::constant(Matrix{{1.0}, {2.0}, {3.0}, {4.0}}), 1, 2).value() == Matrix{{0.0}, {1.0}, {0.0}, {3.0}});
  CHECK(ag::normalize_rows(ag::constant(Matrix{{3.0, 4.0}})).value().isApprox(Matrix{{0.6, 0.8}}));
  CHECK_THROWS_AS(ag::normalize_rows(ag::constant(Matrix::Zero(1, 2))), NumericError);
  CHECK_THROWS_AS(ag::matmul(ag::constant(Matrix::Zero(2, 3)), ag::constant(Matrix::Zero(2, 3))), ShapeError);
}

TEST_CASE("leaf gradients accumulate and can be cleared") {
  Var w = ag::parameter(Matrix{{2.0, -1.0}});
  ag::backward(ag::sum(ag::scale(w, 3.0)));
  CHECK(w.grad() == Matrix{{3.0, 3.0}});
  ag::backward(ag::sum(ag::mul(w, w)));
  CHECK(w.grad() == Matrix{{7.0, 1.0}});
  w.zero_grad();
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("no-grad mode records nothing") {
  Var w = ag::parameter(Matrix{{1.0}});
  {
    ag::NoGradGuard g;
    CHECK_FALSE(ag::grad_enabled());
    const Var y = ag::scale(w, 2.0);
    CHECK_FALSE(y.requires_grad());
    {
      ag::NoGradGuard inner;
    }
    CHECK_FALSE(ag::grad_enabled());
  }
  CHECK(ag::grad_enabled());
  CHECK(ag::scale(w, 2.0).requires_grad());
  CHECK_FALSE(ag::detach(ag::scale(w, 2.0)).requires_grad());
  CHECK_FALSE(ag::scale(ag::constant(Matrix{{1.0}}), 2.0).requires_grad());
}

TEST_CASE("shared subexpressions sum their gradients") {
  Var x = ag::parameter(Matrix{{1.5}});
  const Var y = ag::exp(x);
  ag::backward(ag::add(y, ag::mul(y, y)));  // e^x + e^2x
  CHECK(x.grad()(0, 0) == doctest::Approx(std::exp(1.5) + 2.0 * std::exp(3.0)).epsilon(1e-12));
}
