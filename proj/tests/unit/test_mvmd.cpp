#include <doctest.h>

#include <cmath>
#include <random>

#include "mdmf/errors.hpp"
#include "mdmf/mvmd.hpp"
#include "oracles.hpp"

using namespace mdmf;
using namespace mdmf::mvmd;
using ag::Matrix;

namespace {

ag::Var row(std::initializer_list<double> xs) {
  Matrix m(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) m(0, i++) = x;
  return ag::constant(m);
}

QueryScores scores(int q, double lv, double lt, double gv, double gt) {
  return {q, {lv, lt, ViewKind::local}, {gv, gt, ViewKind::global}};
}

}  // namespace

TEST_CASE("visual posterior") {
  SUBCASE("equal distances") {
    for (double p : posterior_visual(std::vector<double>(5, 1.3))) CHECK(p == doctest::Approx(0.2));
  }
  SUBCASE("distances (0,1)") {
    const auto p = posterior_visual(std::vector<double>{0.0, 1.0});
    const auto expect = oracle::softmax({0.0, -1.0});
    CHECK(p[0] == doctest::Approx(expect[0]).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(p[1] == doctest::Approx(0.26894).epsilon(1e-5));
  }
  SUBCASE("sums to one") {
    const Matrix p = posterior_visual(row({3.0, 0.1, 7.0, 2.2})).value();
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("text posterior") {
  SUBCASE("matching token against an orthogonal one") {
    Matrix classes(2, 3);
    classes << 1, 0, 0, 0, 1, 0;
    const Matrix p = posterior_text(row({1, 0, 0}), ag::constant(classes)).value();
    const double e = std::exp(1.0);
    CHECK(p(0, 0) == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
    CHECK(p(0, 1) == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
  }
  SUBCASE("equal cosines are uniform") {
    Matrix classes(3, 2);
    classes << 1, 1, 1, 1, 1, 1;
    const Matrix p = posterior_text(row({0.3, -2}), ag::constant(classes)).value();
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(p(0, i) == doctest::Approx(1.0 / 3));
  }
  SUBCASE("scale invariant") {
    std::mt19937_64 rng(1);
    const Matrix classes = oracle::random_matrix(rng, 4, 6);
    const Matrix q = oracle::random_matrix(rng, 1, 6);
    const Matrix a = posterior_text(ag::constant(q), ag::constant(classes)).value();
    const Matrix b = posterior_text(ag::constant(Matrix(3.0 * q)), ag::constant(classes)).value();
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("zero token") {
    CHECK_THROWS_AS(posterior_text(row({0, 0}), ag::constant(Matrix::Ones(2, 2))), NumericError);
  }
}

TEST_CASE("discriminant scores") {
  const std::vector<double> v{0.7633, 0.1, 0.05, 0.05, 0.0367};
  const std::vector<double> u(5, 0.2);
  const auto s = discriminants(v, u, ViewKind::local);
  CHECK(s.c_hat == 0.7633);
  CHECK(s.c_tilde == 0.2);
  const std::vector<double> onehot{0, 1, 0};
  CHECK(discriminants(onehot, onehot, ViewKind::global).c_hat == 1.0);
}

TEST_CASE("reliability partition") {
  SUBCASE("local view dominant in both modes") {
    const std::vector<QueryScores> s{scores(0, 0.7633, 0.24, 0.6299, 0.2254)};
    const auto p = partition(s);
    CHECK(p.omega_l == std::vector<int>{0});
    CHECK(p.omega_g.empty());
  }
  SUBCASE("mixed dominance joins neither") {
    const std::vector<QueryScores> s{scores(0, 0.8, 0.2, 0.6, 0.3)};
    const auto p = partition(s);
    CHECK(p.omega_l.empty());
    CHECK(p.omega_g.empty());
  }
  SUBCASE("ties join neither") {
    const std::vector<QueryScores> s{scores(0, 0.5, 0.3, 0.5, 0.3), scores(1, 0.6, 0.3, 0.5, 0.3)};
    const auto p = partition(s);
    CHECK(p.omega_l.empty());
    CHECK(p.omega_g.empty());
  }
  SUBCASE("global dominance") {
    const std::vector<QueryScores> s{scores(3, 0.4, 0.2, 0.9, 0.6)};
    CHECK(partition(s).omega_g == std::vector<int>{3});
  }
  SUBCASE("single conditions") {
    const std::vector<QueryScores> s{scores(0, 0.8, 0.2, 0.6, 0.3)};
    CHECK(partition(s, {false, true, 0.0}).omega_l == std::vector<int>{0});
    CHECK(partition(s, {true, false, 0.0}).omega_g == std::vector<int>{0});
    // No conditions: visual comparison decides.
    CHECK(partition(s, {false, false, 0.0}).omega_l == std::vector<int>{0});
  }
  SUBCASE("margin") {
    const std::vector<QueryScores> s{scores(0, 0.7633, 0.24, 0.6299, 0.2254)};
    CHECK(partition(s, {true, true, 0.01}).omega_l == std::vector<int>{0});
    CHECK(partition(s, {true, true, 0.05}).omega_l.empty());
  }
  SUBCASE("disjoint on random scores") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.2, 1.0);
    std::vector<QueryScores> s;
    for (int q = 0; q < 500; ++q) s.push_back(scores(q, u(rng), u(rng), u(rng), u(rng)));
    const auto p = partition(s);
    for (int a : p.omega_g) CHECK(std::find(p.omega_l.begin(), p.omega_l.end(), a) == p.omega_l.end());
  }
}

TEST_CASE("kl divergence") {
  const std::vector<double> p{0.8, 0.2}, q{0.5, 0.5};
  const double expect = 0.8 * std::log(0.8 / 0.5) + 0.2 * std::log(0.2 / 0.5);
  CHECK(kl_divergence(p, q) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(kl_divergence(p, q) == doctest::Approx(0.19274).epsilon(1e-4));
  CHECK(kl_divergence(row({0.8, 0.2}), row({0.5, 0.5})).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(kl_divergence(p, p) == 0.0);

  SUBCASE("non-negative and bounded on random inputs") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-8.0, 8.0);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> a(5), b(5);
      for (auto& x : a) x = u(rng);
      for (auto& x : b) x = u(rng);
      const auto pa = oracle::softmax(a), pb = oracle::softmax(b);
      const double d = kl_divergence(pa, pb);
      CHECK(d >= 0.0);
      CHECK(d == doctest::Approx(oracle::kl(pa, pb)).epsilon(1e-9));
    }
  }
}

TEST_CASE("distillation losses") {
  DistillInputs in;
  in.global_visual = {row({0.8, 0.2})};
  in.local_visual = {row({0.5, 0.5})};
  in.scores = {scores(0, 0.5, 0.5, 0.8, 0.6)};

  SUBCASE("single global-reliable query") {
    const auto l = distill_losses(partition(in.scores), in);
    CHECK(l.global_to_local.item() == doctest::Approx(oracle::kl({0.8, 0.2}, {0.5, 0.5})).epsilon(1e-12));
    CHECK(l.local_to_global.item() == 0.0);
  }
  SUBCASE("identical posteriors") {
    in.local_visual = in.global_visual;
    const auto l = distill_losses(partition(in.scores), in);
    CHECK(l.global_to_local.item() == 0.0);
    CHECK(l.local_to_global.item() == 0.0);
  }
  SUBCASE("empty sets") {
    const auto l = distill_losses(ReliabilityPartition{}, in);
    CHECK(l.global_to_local.item() == 0.0);
    CHECK(l.local_to_global.item() == 0.0);
  }
  SUBCASE("confidence weighting") {
    in.global_visual.push_back(row({0.6, 0.4}));
    in.local_visual.push_back(row({0.1, 0.9}));
    in.scores.push_back(scores(1, 0.5, 0.5, 0.9, 0.9));
    const auto l = distill_losses(partition(in.scores), in);
    const double w0 = 0.8 + 0.6, w1 = 0.9 + 0.9;
    const double expect = (w0 * oracle::kl({0.8, 0.2}, {0.5, 0.5}) + w1 * oracle::kl({0.6, 0.4}, {0.1, 0.9})) /
                          (w0 + w1);
    CHECK(l.global_to_local.item() == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("teacher receives no gradient") {
  ag::Var dg = ag::parameter(Matrix{{0.1, 1.2, 0.7}});
  ag::Var dl = ag::parameter(Matrix{{0.9, 0.3, 0.5}});
  DistillInputs in;
  in.global_visual = {posterior_visual(dg)};
  in.local_visual = {posterior_visual(dl)};
  in.scores = {scores(0, 0.4, 0.4, 0.6, 0.6)};
  const auto part = partition(in.scores);
  REQUIRE(part.omega_g.size() == 1);

  ag::backward(distill_losses(part, in).global_to_local);
  CHECK_FALSE(dg.has_grad());
  REQUIRE(dl.has_grad());
  CHECK(dl.grad().cwiseAbs().maxCoeff() > 0.0);

  SUBCASE("without detachment the teacher does get gradient") {
    dl.zero_grad();
    ag::backward(distill_losses(part, in, false).global_to_local);
    REQUIRE(dg.has_grad());
    CHECK(dg.grad().cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("teacher-side changes move the value") {
    const double before = distill_losses(part, in).global_to_local.item();
    in.global_visual = {posterior_visual(ag::constant(Matrix{{0.1, 2.0, 0.7}}))};
    CHECK(distill_losses(part, in).global_to_local.item() != before);
  }
}

TEST_CASE("total loss") {
  CHECK(total_loss(1.0, 0.2, 0.3, 1.0) == doctest::Approx(1.5));
  CHECK(total_loss(1.25, 0.2, 0.3, 0.0) == 1.25);
  CHECK_THROWS_AS(total_loss(1.0, 0.2, 0.3, -1.0), ParamError);
  const ag::Var t = total_loss(ag::constant_scalar(1.0), ag::constant_scalar(0.2), ag::constant_scalar(0.3), 1.0);
  CHECK(t.item() == doctest::Approx(1.5));
}

TEST_CASE("direction names") {
  CHECK(parse_direction("up_down") == Direction::up_down);
  CHECK(std::string(to_string(Direction::down_up)) == "down_up");
  CHECK_THROWS_AS(parse_direction("sideways"), ParamError);
}
