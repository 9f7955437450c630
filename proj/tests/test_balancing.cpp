#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "ltsrepr/balancing.hpp"
#include "oracles.hpp"

using namespace ltsrepr;

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

double plain_ce(const Vector& z, int y) { return -std::log(oracle::loop_softmax(z)(y)); }

}  // namespace

TEST_CASE("grw weights") {
  const auto w0 = grw_weights({0.5, 0.3, 0.15, 0.05}, 0.0);
  for (double w : w0) CHECK(w == doctest::Approx(0.25).epsilon(1e-15));
  const auto w1 = grw_weights({0.75, 0.25}, 1.0);
  CHECK(w1[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(w1[1] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(grw_weight({0.75, 0.25}, 1.0, 1) == doctest::Approx(0.75).epsilon(1e-14));
  for (double rho : {0.0, 0.5, 1.0, 3.0}) {
    for (double w : grw_weights({0.2, 0.2, 0.2, 0.2, 0.2}, rho)) CHECK(w == doctest::Approx(0.2).epsilon(1e-14));
  }
  CHECK_THROWS_AS(grw_weights({1.0, 0.0}, 1.0), Error);
  CHECK_THROWS_AS(grw_weight({0.5, 0.5}, 1.0, 2), Error);
}

TEST_CASE("grw weights form a probability vector and favour rare classes") {
  oracle::Gen g(10);
  for (int t = 0; t < 500; ++t) {
    const int k = g.integer(2, 12);
    const auto pi = to_std(g.simplex(k));
    const double rho = g.uniform(0.0, 3.0);
    const auto w = grw_weights(pi, rho);
    double s = 0.0;
    for (double v : w) {
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    if (rho > 0.0) {
      for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b)
          if (pi[a] < pi[b]) CHECK(w[a] > w[b]);
    }
  }
}

TEST_CASE("logit adjustment") {
  const Vector z = (Vector(2) << 0.0, 0.0).finished();
  const Vector a = logit_adjust(z, {0.9, 0.1}, 1.0);
  CHECK(a(0) == doctest::Approx(std::log(0.9)).epsilon(1e-14));
  CHECK(a(1) == doctest::Approx(std::log(0.1)).epsilon(1e-14));
  CHECK(a(0) == doctest::Approx(-0.1054).epsilon(1e-3));
  CHECK(a(1) == doctest::Approx(-2.3026).epsilon(1e-4));
  const Vector p = oracle::loop_softmax(a);
  CHECK(p(0) == doctest::Approx(0.9).epsilon(1e-12));

  oracle::Gen g(11);
  for (int t = 0; t < 200; ++t) {
    const int k = g.integer(2, 8);
    const Vector l = g.vec(k, -5, 5);
    const auto pi = to_std(g.simplex(k));
    CHECK(logit_adjust(l, pi, 0.0) == l);
    const std::vector<double> uni(static_cast<std::size_t>(k), 1.0 / k);
    const Vector s = logit_adjust(l, uni, g.uniform(0.1, 3.0));
    const Vector ps = oracle::loop_softmax(s), pl = oracle::loop_softmax(l);
    CHECK((ps - pl).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::Index i1, i2;
    s.maxCoeff(&i1);
    l.maxCoeff(&i2);
    CHECK(i1 == i2);
  }
  CHECK_THROWS_AS(logit_adjust(z, {1.0, 0.0}, 1.0), Error);

  Matrix rows = g.mat(4, 3, 1.0);
  const Matrix ar = logit_adjust_rows(rows, {0.5, 0.3, 0.2}, 1.0);
  for (int i = 0; i < 4; ++i)
    CHECK((ar.row(i).transpose() - logit_adjust(rows.row(i).transpose(), {0.5, 0.3, 0.2}, 1.0))
              .cwiseAbs()
              .maxCoeff() == 0.0);
}

TEST_CASE("balanced cross-entropy") {
  oracle::Gen g(12);
  for (int t = 0; t < 200; ++t) {
    const int k = g.integer(2, 8);
    const Vector z = g.vec(k, -4, 4);
    const int y = g.integer(0, k - 1);
    const auto pi = to_std(g.simplex(k));
    const double ce = plain_ce(z, y);
    BalancingSpec none{BalanceKind::kNone, 1.0, pi};
    BalancingSpec cbs{BalanceKind::kCbs, 1.0, pi};
    CHECK(balanced_ce_loss(z, y, none) == balanced_ce_loss(z, y, cbs));
    CHECK(balanced_ce_loss(z, y, none) == doctest::Approx(ce).epsilon(1e-12));
    BalancingSpec grw0{BalanceKind::kGrw, 0.0, pi};
    CHECK(balanced_ce_loss(z, y, grw0) == doctest::Approx(ce / k).epsilon(1e-12));
    const std::vector<double> uni(static_cast<std::size_t>(k), 1.0 / k);
    BalancingSpec la{BalanceKind::kLa, g.uniform(0.0, 3.0), uni};
    CHECK(std::abs(balanced_ce_loss(z, y, la) - ce) < 1e-12);
    BalancingSpec grw{BalanceKind::kGrw, 1.0, pi};
    CHECK(balanced_ce_loss(z, y, grw) ==
          doctest::Approx(grw_weights(pi, 1.0)[y] * ce).epsilon(1e-12));
    BalancingSpec la1{BalanceKind::kLa, 1.0, pi};
    Vector za = z;
    for (int j = 0; j < k; ++j) za(j) += std::log(pi[j]);
    CHECK(balanced_ce_loss(z, y, la1) == doctest::Approx(plain_ce(za, y)).epsilon(1e-12));
  }
}

TEST_CASE("balanced cross-entropy batch gradients match finite differences") {
  oracle::Gen g(13);
  for (int t = 0; t < 100; ++t) {
    const int k = 3, b = 5;
    Matrix z = g.mat(b, k, 2.0);
    const auto y = g.labels(b, k);
    const auto pi = to_std(g.simplex(k));
    for (auto kind : {BalanceKind::kNone, BalanceKind::kCbs, BalanceKind::kGrw, BalanceKind::kLa}) {
      BalancingSpec spec{kind, g.uniform(0.0, 2.0), pi};
      const LossGrad lg = balanced_ce_batch(z, y, spec);
      double direct = 0.0;
      for (int i = 0; i < b; ++i) direct += balanced_ce_loss(z.row(i).transpose(), y[i], spec);
      CHECK(lg.loss == doctest::Approx(direct / b).epsilon(1e-12));
      const auto f = [&](const Vector& flat) {
        const Matrix zz = Eigen::Map<const Matrix>(flat.data(), b, k);
        return balanced_ce_batch(zz, y, spec).loss;
      };
      const Vector flat = Eigen::Map<const Vector>(z.data(), z.size());
      const Vector num = oracle::numeric_grad(f, flat);
      const Vector ana = Eigen::Map<const Vector>(lg.dlogits.data(), lg.dlogits.size());
      CHECK(oracle::grad_violation(ana, num) <= 1.0);
    }
  }
}

TEST_CASE("spec validation and names") {
  BalancingSpec bad{BalanceKind::kGrw, -1.0, {0.5, 0.5}};
  CHECK_THROWS_AS(bad.validate(), Error);
  BalancingSpec bad_pi{BalanceKind::kLa, 1.0, {0.7, 0.7}};
  CHECK_THROWS_AS(bad_pi.validate(), Error);
  CHECK(BalancingSpec{BalanceKind::kCbs, 1.0, {}}.sampler_mode() == Sampler::Mode::kClassBalanced);
  CHECK(BalancingSpec{BalanceKind::kGrw, 1.0, {}}.sampler_mode() == Sampler::Mode::kInstanceBalanced);
  for (auto k : {BalanceKind::kNone, BalanceKind::kCbs, BalanceKind::kGrw, BalanceKind::kLa})
    CHECK(parse_balance(balance_name(k)) == k);
  CHECK_THROWS_AS(parse_balance("focal"), Error);
}

TEST_CASE("class-balanced sampling has uniform class marginals") {
  DatasetConfig cfg;
  const DatasetPair pair = make_longtail_dataset(cfg);
  Sampler s(pair.train, BalancingSpec{BalanceKind::kCbs, 1.0, pair.train.frequencies}.sampler_mode(),
            Rng(99));
  const int k = pair.train.num_classes();
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (int i = 0; i < 200; ++i)
    for (int y : s.next_batch(100).labels) counts[static_cast<std::size_t>(y)] += 1.0;
  const std::vector<double> probs(static_cast<std::size_t>(k), 1.0 / k);
  const double stat = oracle::chi_square(counts, probs);
  const boost::math::chi_squared dist(k - 1);
  CHECK(stat < boost::math::quantile(dist, 0.999));
}
