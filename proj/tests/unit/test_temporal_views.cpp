#include <doctest.h>

#include <cmath>
#include <random>

#include "mdmf/errors.hpp"
#include "mdmf/temporal_views.hpp"
#include "oracles.hpp"

using namespace mdmf;
using ag::Matrix;

namespace {

constexpr Eigen::Index kDim = 6;
constexpr Eigen::Index kT = 8;

void set_identity_center(LocalContextExtractor& l) {
  for (TemporalConv* c : {&l.conv1, &l.conv2}) {
    for (std::size_t k = 0; k < c->taps.size(); ++k) {
      c->taps[k].mutable_value() = c->offsets[k] == 0 ? Matrix(Matrix::Identity(kDim, kDim)) : Matrix(Matrix::Zero(kDim, kDim));
    }
    c->bias.mutable_value().setZero();
  }
}

}  // namespace

TEST_CASE("view names") {
  CHECK(parse_view_kind("local") == ViewKind::local);
  CHECK(parse_view_kind("none") == ViewKind::none);
  CHECK(std::string(to_string(ViewKind::global)) == "global");
  CHECK_THROWS_AS(parse_view_kind("both"), ParamError);
}

TEST_CASE("local context extractor") {
  std::mt19937_64 rng(1);
  LocalContextExtractor l(kDim, 3, 17);
  const Matrix x = oracle::random_matrix(rng, kT, kDim);

  SUBCASE("shape is preserved") {
    const auto out = l(FrameEmbeddingSeq{ag::constant(x)}, true);
    CHECK(out.data.rows() == kT);
    CHECK(out.data.cols() == kDim);
    CHECK(out.view == ViewKind::local);
  }
  SUBCASE("identity centre taps reduce to relu") {
    set_identity_center(l);
    const Matrix out = l.forward(ag::constant(x), kT, false).value();
    const Matrix expect = x.cwiseMax(0.0) / std::sqrt(1.0 + 1e-5) / std::sqrt(1.0 + 1e-5);
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);
    // Up to the normalisation epsilon, this is relu(F).
    CHECK((out - x.cwiseMax(0.0)).cwiseAbs().maxCoeff() < 1e-4);
  }
  SUBCASE("locality: frames more than two apart do not interact") {
    for (int draw = 0; draw < 3; ++draw) {
      LocalContextExtractor ld(kDim, 3, 100 + draw);
      const Matrix base = ld.forward(ag::constant(x), kT, false).value();
      for (Eigen::Index s = 0; s < kT; ++s) {
        Matrix xp = x;
        xp.row(s).array() += 0.5;
        const Matrix moved = ld.forward(ag::constant(xp), kT, false).value();
        for (Eigen::Index t = 0; t < kT; ++t) {
          const double delta = (moved.row(t) - base.row(t)).cwiseAbs().maxCoeff();
          if (std::abs(t - s) > 2) CHECK(delta == 0.0);
        }
      }
    }
  }
  SUBCASE("too few frames") {
    CHECK_THROWS_AS(l.forward(ag::constant(Matrix::Zero(2, kDim)), 2, false), ShapeError);
  }
  SUBCASE("even kernels are rejected") {
    CHECK_THROWS_AS(LocalContextExtractor(kDim, 2, 1), ParamError);
  }
}

TEST_CASE("batch norm statistics") {
  std::mt19937_64 rng(4);
  BatchNorm bn(3);
  const Matrix x = oracle::random_matrix(rng, 10, 3, -2.0, 5.0);
  const Matrix y = bn.forward(ag::constant(x), true).value();
  for (Eigen::Index c = 0; c < 3; ++c) {
    const double mean = y.col(c).mean();
    const double var = (y.col(c).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
  const ag::RowVector mu = x.colwise().mean();
  const ag::RowVector unbiased = ((x.rowwise() - mu).array().square().colwise().sum() / 9.0).matrix();
  CHECK(bn.running_mean.value().isApprox(0.1 * Matrix(mu)));
  CHECK(bn.running_var.value().isApprox(Matrix((0.9 + 0.1 * unbiased.array()).matrix())));

  SUBCASE("inference uses the running statistics") {
    const Matrix z = bn.forward(ag::constant(x), false).value();
    const Matrix expect = ((x.rowwise() - bn.running_mean.value().row(0)).array().rowwise() /
                           (bn.running_var.value().row(0).array() + 1e-5).sqrt()).matrix();
    CHECK((z - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("global context extractor") {
  std::mt19937_64 rng(2);
  const Matrix x = oracle::random_matrix(rng, kT, kDim);

  SUBCASE("zero TCN weights leave the input unchanged") {
    GlobalContextExtractor g(kDim, {1, 2, 4}, 5);
    for (auto& layer : g.layers) {
      for (auto& t : layer.taps) t.mutable_value().setZero();
      layer.bias.mutable_value().setZero();
    }
    const auto out = g(FrameEmbeddingSeq{ag::constant(x)});
    CHECK(out.data.value() == x);
    CHECK(out.view == ViewKind::global);
  }
  SUBCASE("the last frame sees every input frame") {
    const Matrix wide = oracle::random_matrix(rng, kT, 64);
    for (int draw = 0; draw < 10; ++draw) {
      GlobalContextExtractor g(64, {1, 2, 4}, 1000 + draw);
      CHECK(g.receptive_field() == 8);
      for (Eigen::Index s = 0; s < kT; ++s) {
        ag::Var xv = ag::parameter(wide);
        const ag::Var last = ag::slice_rows(g.tcn(xv, kT), kT - 1, 1);
        ag::backward(ag::sum(last));
        CHECK(xv.grad().row(s).cwiseAbs().maxCoeff() > 1e-8);
      }
    }
  }
  SUBCASE("broadcast is identical across frames") {
    GlobalContextExtractor g(kDim, {1, 2, 4}, 9);
    const Matrix diff = g.forward(ag::constant(x), kT).value() - x;
    for (Eigen::Index t = 1; t < kT; ++t) CHECK((diff.row(t) - diff.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("causal layers: output frame t depends only on frames <= t") {
    GlobalContextExtractor g(kDim, {1, 2, 4}, 3);
    const Matrix base = g.tcn(ag::constant(x), kT).value();
    Matrix xp = x;
    xp.row(5).array() += 1.0;
    const Matrix moved = g.tcn(ag::constant(xp), kT).value();
    for (Eigen::Index t = 0; t < 5; ++t) CHECK(moved.row(t) == base.row(t));
  }
  SUBCASE("stacked clips do not leak into each other") {
    GlobalContextExtractor g(kDim, {1, 2, 4}, 3);
    const Matrix y = oracle::random_matrix(rng, kT, kDim);
    Matrix both(2 * kT, kDim);
    both << x, y;
    const Matrix out = g.forward(ag::constant(both), kT).value();
    CHECK((out.bottomRows(kT) - g.forward(ag::constant(y), kT).value()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("coverage warning") {
    CHECK(tcn_receptive_field({1, 2, 4}, 2) == 8);
    CHECK_FALSE(tcn_coverage_warning({1, 2, 4}, 2, 8).has_value());
    CHECK(tcn_coverage_warning({1, 2}, 2, 8).has_value());
  }
}

TEST_CASE("ntce is the identity") {
  const Matrix x = Matrix::Random(4, 3);
  const auto out = ntce(FrameEmbeddingSeq{ag::constant(x)});
  CHECK(out.data.value() == x);
  CHECK(out.view == ViewKind::none);
}

TEST_CASE("temporal extractor gradients") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 2; ++trial) {
    const Matrix x = oracle::random_matrix(rng, kT, kDim);
    const Matrix w = oracle::random_matrix(rng, kT, kDim);
    LocalContextExtractor l(kDim, 3, 50 + trial);
    auto fl = [&](const Matrix& in) {
      ag::NoGradGuard g;
      return ag::sum(ag::mul(l.forward(ag::constant(in), kT, false), ag::constant(w))).item();
    };
    ag::Var xv = ag::parameter(x);
    ag::backward(ag::sum(ag::mul(l.forward(xv, kT, false), ag::constant(w))));
    CHECK(oracle::relative_error(xv.grad(), oracle::numeric_grad(fl, x)) < 1e-6);

    GlobalContextExtractor g(kDim, {1, 2, 4}, 60 + trial);
    auto fg = [&](const Matrix& in) {
      ag::NoGradGuard guard;
      return ag::sum(ag::mul(g.forward(ag::constant(in), kT), ag::constant(w))).item();
    };
    ag::Var xg = ag::parameter(x);
    ag::backward(ag::sum(ag::mul(g.forward(xg, kT), ag::constant(w))));
    CHECK(oracle::relative_error(xg.grad(), oracle::numeric_grad(fg, x)) < 1e-6);
  }
}
