#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ltsrepr/metrics.hpp"
#include "oracles.hpp"

using namespace ltsrepr;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

double entropy_oracle(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0) h -= p(i) * std::log(p(i));
  return h;
}

}  // namespace

TEST_CASE("accuracy") {
  const std::vector<Split> splits = {Split::kMany, Split::kMedium, Split::kFew};
  const Matrix p = rows({{0.7, 0.2, 0.1}, {0.1, 0.8, 0.1}, {0.2, 0.2, 0.6}, {0.5, 0.3, 0.2}});
  const SplitAccuracy all = accuracy(p, {0, 1, 2, 0}, splits);
  CHECK(all.all == 1.0);
  const SplitAccuracy half = accuracy(p, {0, 0, 2, 1}, splits);
  CHECK(half.all == 0.5);
  REQUIRE(half.many.has_value());
  CHECK(*half.many == 0.5);
  CHECK(*half.medium == 0.0);
  CHECK(*half.few == 1.0);

  const Matrix uni = Matrix::Constant(3, 3, 1.0 / 3.0);
  CHECK(accuracy(uni, {0, 0, 0}, splits).all == 1.0);
  CHECK(accuracy(uni, {1, 2, 1}, splits).all == 0.0);
  CHECK(argmax_lowest(RowVector::Constant(4, 0.25)) == 0);

  const SplitAccuracy absent = accuracy(p.topRows(2), {0, 0}, splits);
  CHECK(absent.many.has_value());
  CHECK_FALSE(absent.few.has_value());
}

TEST_CASE("nll") {
  CHECK(nll(Matrix::Identity(3, 3), {0, 1, 2}) == 0.0);
  const Matrix uni = Matrix::Constant(5, 10, 0.1);
  CHECK(std::abs(nll(uni, {0, 3, 9, 2, 2}) - std::log(10.0)) < 1e-12);
  const Matrix p = rows({{1.0, 0.0}, {1.0 - std::exp(-2.0), std::exp(-2.0)}});
  CHECK(nll(p, {0, 1}) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(nll(rows({{1.0, 0.0}}), {1}) == doctest::Approx(-std::log(1e-30)));
  const auto per = nll_per_instance(p, {0, 1});
  CHECK(per[1] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("ece") {
  const Matrix p = rows({{0.6, 0.4}, {0.2, 0.8}});
  const EceResult r = ece(p, {0, 0}, 15);
  CHECK(std::abs(r.ece - 0.6) < 1e-12);
  REQUIRE(r.bins.size() == 15);
  CHECK(r.bins[8].count == 1);   // (0.533, 0.6]
  CHECK(r.bins[11].count == 1);  // (0.733, 0.8]
  CHECK(r.bins[8].upper == doctest::Approx(0.6));

  CHECK(ece(Matrix::Identity(4, 4), {0, 1, 2, 3}).ece == 0.0);

  const Matrix same = Matrix::Constant(10, 2, 0.5).rowwise() + RowVector(v2(0.2, -0.2).transpose());
  const std::vector<int> y = {0, 0, 0, 1, 1, 1, 1, 0, 0, 0};
  const EceResult s = ece(same, y, 15);
  int occupied = 0;
  for (const auto& b : s.bins) occupied += b.count > 0;
  CHECK(occupied == 1);
  CHECK(s.ece == doctest::Approx(std::abs(0.6 - 0.7)).epsilon(1e-12));

  const Matrix zero = Matrix::Zero(1, 2);
  CHECK(ece(zero, {0}, 5).bins[0].count == 1);
}

TEST_CASE("ece properties") {
  oracle::Gen g(1);
  for (int t = 0; t < 100; ++t) {
    const int n = g.integer(1, 50), k = g.integer(2, 6);
    Matrix p(n, k);
    for (int i = 0; i < n; ++i) p.row(i) = g.simplex(k).transpose();
    const double e = ece(p, g.labels(n, k), g.integer(1, 20)).ece;
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
  }
  // Calibrated by construction: a confidence drawn per example, correct
  // with that probability.
  const int n = 200000, bins = 15;
  Matrix p(n, 2);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    const double c = g.uniform(0.5, 1.0);
    p(i, 0) = c;
    p(i, 1) = 1.0 - c;
    y[i] = g.uniform(0, 1) < c ? 0 : 1;
  }
  CHECK(ece(p, y, bins).ece <= 1.0 / (2.0 * bins) + 0.01);
}

TEST_CASE("dispersion in representation space") {
  CHECK(dispersion_repr({v2(1, 2), v2(1, 2), v2(1, 2)}) == 0.0);
  CHECK(dispersion_repr({v2(1, 0), v2(0, 1)}) == doctest::Approx(1.0 - std::sqrt(0.5)).epsilon(1e-14));
  CHECK(dispersion_repr({v2(0, 0), v2(1, 0)}) == doctest::Approx(0.5).epsilon(1e-14));
  oracle::Gen g(2);
  for (int t = 0; t < 200; ++t) {
    const int m = g.integer(2, 8), l = g.integer(2, 6);
    std::vector<Vector> reps;
    for (int i = 0; i < m; ++i) reps.push_back(g.vec(l, -1, 1));
    const double d = dispersion_repr(reps);
    CHECK(d >= 0.0);
    CHECK(d <= 2.0);
    // Centroid direction changes with per-member scales; a common scale
    // keeps it.
    std::vector<Vector> common;
    const double c = g.uniform(0.1, 10);
    for (const auto& r : reps) common.push_back(r * c);
    CHECK(dispersion_repr(common) == doctest::Approx(d).epsilon(1e-10));
  }
}

TEST_CASE("dispersion in probability space") {
  CHECK(std::abs(dispersion_prob({v2(1, 0), v2(0, 1)}) - std::numbers::ln2) < 1e-12);
  CHECK(dispersion_prob({v2(0.3, 0.7), v2(0.3, 0.7)}) == 0.0);
  oracle::Gen g(3);
  for (int t = 0; t < 500; ++t) {
    const int m = g.integer(2, 8), k = g.integer(2, 6);
    std::vector<Vector> ps;
    Vector mean = Vector::Zero(k);
    double mh = 0.0;
    for (int i = 0; i < m; ++i) {
      ps.push_back(g.simplex(k));
      mean += ps.back() / m;
      mh += entropy_oracle(ps.back()) / m;
    }
    const double d = dispersion_prob(ps);
    CHECK(d >= 0.0);
    CHECK(d <= std::log(static_cast<double>(m)) + 1e-12);
    CHECK(d == doctest::Approx(entropy_oracle(mean) - mh).epsilon(1e-10));
    std::vector<Vector> rev(ps.rbegin(), ps.rend());
    CHECK(dispersion_prob(rev) == doctest::Approx(d).epsilon(1e-12));
  }
}

TEST_CASE("pearson") {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const Pcc self = pearson(a, a);
  CHECK(self.defined);
  CHECK(self.value == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_FALSE(pearson(a, {2, 2, 2, 2, 2}).defined);
  CHECK(std::isnan(pearson(a, {2, 2, 2, 2, 2}).value));
  oracle::Gen g(4);
  for (int t = 0; t < 200; ++t) {
    const int n = g.integer(3, 40);
    std::vector<double> x(n), y(n), z(n);
    const double s = g.uniform(-3, 3), b = g.uniform(-3, 3);
    for (int i = 0; i < n; ++i) {
      x[i] = g.normal();
      y[i] = g.normal();
      z[i] = s * x[i] + b;
    }
    const Pcc r = pearson(x, y);
    CHECK(r.value >= -1.0);
    CHECK(r.value <= 1.0);
    const Pcc lin = pearson(x, z);
    CHECK(lin.value == doctest::Approx(s > 0 ? 1.0 : -1.0).epsilon(1e-10));
  }
}

TEST_CASE("quartile analysis") {
  std::vector<double> nllv = {5, 1, 3, 3, 8, 0, 2, 7};
  const QuartileAnalysis q = quartile_analysis(nllv, nllv);
  CHECK(q.pcc.defined);
  CHECK(q.pcc.value == doctest::Approx(1.0));
  // Sorted stably: 0(5) 1(1) 2(6) 3(2) 3(3) 5(0) 7(7) 8(4)
  const std::vector<int> expected = {2, 0, 1, 2, 3, 0, 1, 3};
  CHECK(q.group == expected);
  CHECK(q.nll[0].count == 2);
  CHECK(q.nll[0].min == 0.0);
  CHECK(q.nll[3].max == 8.0);
  const QuartileAnalysis flat = quartile_analysis(nllv, std::vector<double>(8, 0.5));
  CHECK_FALSE(flat.pcc.defined);
  CHECK_THROWS_AS(quartile_analysis({1, 2, 3}, {1, 2, 3}), Error);

  const BoxStats b = box_stats({4, 1, 3, 2, 5});
  CHECK(b.min == 1.0);
  CHECK(b.median == 3.0);
  CHECK(b.max == 5.0);
  CHECK(b.q1 == 2.0);
  CHECK(b.q3 == 4.0);
}

TEST_CASE("ensemble prediction") {
  oracle::Gen g(5);
  const ModelParams m = oracle::small_model(g, 3, {5}, 4, 3);
  const Matrix x = g.mat(7, 3, 1.0);
  const Vector first = m.flatten();
  const Vector sigma = g.vec(static_cast<int>(m.size()), 0.0, 0.05);
  const SwagPosterior post = SwagPosterior::from_parts(
      m, 3, first, (first.array().square() + sigma.array()).matrix(), sigma);

  const int M = 5;
  Rng a(9), b(9);
  const Matrix ens = ensemble_predict(x, post, m.phi, m.activation, M, a);
  Matrix oracle_mean = Matrix::Zero(7, 3);
  for (int k = 0; k < M; ++k) {
    const auto th = post.sample_theta(b);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vector f = oracle::loop_features(th, m.activation, x.row(i).transpose());
      oracle_mean.row(i) += oracle::loop_softmax(m.phi.weight * f + m.phi.bias).transpose() / M;
    }
  }
  CHECK((ens - oracle_mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ens.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);

  Rng c(1);
  const Matrix single = ensemble_predict(x, post, m.phi, m.activation, 1, c);
  Rng d(1);
  const auto th = post.sample_theta(d);
  CHECK((single - softmax_rows(classifier_logits(m.phi, features(th, m.activation, x)))).cwiseAbs().maxCoeff() <
        1e-15);

  const SwagPosterior flat = SwagPosterior::from_parts(
      m, 3, first, first.array().square().matrix(), Vector::Zero(first.size()));
  Rng e(2);
  const Matrix point = softmax_rows(classifier_logits(m.phi, features(m.theta, m.activation, x)));
  CHECK((ensemble_predict(x, flat, m.phi, m.activation, 8, e) - point).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("per-class diagnostics") {
  const Classifier phi{Matrix::Constant(3, 4, 0.5), Vector::Zero(3)};
  const Matrix uni = Matrix::Constant(6, 3, 1.0 / 3.0);
  const ClassDiagnostics d = per_class_diagnostics(phi, uni, {0, 1, 2, 0, 1, 2});
  for (double n : d.weight_norms) CHECK(n == doctest::Approx(1.0));
  for (double p : d.marginal) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  oracle::Gen g(6);
  Matrix p(20, 4);
  for (int i = 0; i < 20; ++i) p.row(i) = g.simplex(4).transpose();
  const ClassDiagnostics r = per_class_diagnostics({g.mat(4, 3, 1.0), g.vec(4, 0, 1)}, p, g.labels(20, 4));
  double s = 0;
  for (double v : r.marginal) s += v;
  CHECK(std::abs(s - 1.0) < 1e-9);
  CHECK(r.reliability.size() == kDefaultEceBins);
}

TEST_CASE("report serialization") {
  const Matrix p = rows({{0.6, 0.4}, {0.2, 0.8}});
  const MetricsReport rep = evaluate_probs(p, {0, 0}, {Split::kMany, Split::kFew});
  const auto j = to_json(rep);
  CHECK(j.contains("acc_all"));
  CHECK(j.contains("acc_many"));
  CHECK_FALSE(j.contains("acc_few"));
  CHECK(j.contains("nll"));
  CHECK(j.contains("ece"));
  CHECK(j["acc_all"].get<double>() == 0.5);
  const std::string csv = to_csv(rep);
  CHECK(csv.find("acc_all") != std::string::npos);
  CHECK(bins_to_csv(rep.bins).find('\n') != std::string::npos);
}
