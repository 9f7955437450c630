#include "ltsrepr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace ltsrepr {
namespace {

void check_rows(const Matrix& probs, const std::vector<int>& labels) {
  require(probs.rows() == static_cast<Eigen::Index>(labels.size()),
          ErrorCode::kInvalidArgument, "probs/labels size mismatch");
  require(!labels.empty(), ErrorCode::kInvalidArgument, "no examples");
}

double quantile_sorted(const std::vector<double>& s, double q) {
  if (s.size() == 1) return s.front();
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

int argmax_lowest(const RowVector& row) {
  int best = 0;
  for (Eigen::Index k = 1; k < row.size(); ++k)
    if (row(k) > row(best)) best = static_cast<int>(k);
  return best;
}

SplitAccuracy accuracy(const Matrix& probs, const std::vector<int>& labels,
                       const std::vector<Split>& class_splits) {
  check_rows(probs, labels);
  std::array<std::size_t, 3> hits{}, totals{};
  std::size_t all_hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const bool hit = argmax_lowest(probs.row(static_cast<Eigen::Index>(i))) == y;
    all_hits += hit;
    if (static_cast<std::size_t>(y) < class_splits.size()) {
      const auto s = static_cast<std::size_t>(class_splits[static_cast<std::size_t>(y)]);
      ++totals[s];
      hits[s] += hit;
    }
  }
  SplitAccuracy acc;
  acc.all = static_cast<double>(all_hits) / static_cast<double>(labels.size());
  auto frac = [&](Split s) -> std::optional<double> {
    const auto i = static_cast<std::size_t>(s);
    if (totals[i] == 0) return std::nullopt;
    return static_cast<double>(hits[i]) / static_cast<double>(totals[i]);
  };
  acc.many = frac(Split::kMany);
  acc.medium = frac(Split::kMedium);
  acc.few = frac(Split::kFew);
  return acc;
}

std::vector<double> nll_per_instance(const Matrix& probs, const std::vector<int>& labels) {
  check_rows(probs, labels);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = -std::log(std::max(probs(static_cast<Eigen::Index>(i), labels[i]), kProbFloor));
  return out;
}

double nll(const Matrix& probs, const std::vector<int>& labels) {
  const auto v = nll_per_instance(probs, labels);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

EceResult ece(const Matrix& probs, const std::vector<int>& labels, int n_bins) {
  check_rows(probs, labels);
  require(n_bins >= 1, ErrorCode::kInvalidArgument, "n_bins must be >= 1");
  EceResult r;
  r.bins.resize(static_cast<std::size_t>(n_bins));
  std::vector<double> conf_sum(r.bins.size(), 0.0), hit_sum(r.bins.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const RowVector row = probs.row(static_cast<Eigen::Index>(i));
    const int pred = argmax_lowest(row);
    const double conf = row(pred);
    // Smallest n with conf <= n/N.
    auto b = static_cast<long>(std::ceil(conf * n_bins)) - 1;
    if (b + 1 < n_bins && conf > static_cast<double>(b + 1) / n_bins) ++b;
    if (b > 0 && conf <= static_cast<double>(b) / n_bins) --b;
    b = std::clamp(b, 0L, static_cast<long>(n_bins - 1));
    const auto bi = static_cast<std::size_t>(b);
    ++r.bins[bi].count;
    conf_sum[bi] += conf;
    hit_sum[bi] += (pred == labels[i]) ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(labels.size());
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    auto& bin = r.bins[b];
    bin.lower = static_cast<double>(b) / n_bins;
    bin.upper = static_cast<double>(b + 1) / n_bins;
    if (bin.count == 0) continue;
    const double c = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / c;
    bin.accuracy = hit_sum[b] / c;
    r.ece += std::abs(bin.accuracy - bin.mean_confidence) * c / n;
  }
  return r;
}

double entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    if (p(k) > 0.0) h -= p(k) * std::log(p(k));
  return h;
}

static bool all_identical(const std::vector<Vector>& v) {
  for (const Vector& x : v)
    if (x != v.front()) return false;
  return true;
}

double dispersion_repr(const std::vector<Vector>& reps) {
  require(!reps.empty(), ErrorCode::kInvalidArgument, "no representations");
  if (all_identical(reps)) return reps.front().norm() > 0.0 ? 0.0 : 1.0;
  Vector centroid = Vector::Zero(reps.front().size());
  for (const Vector& r : reps) centroid += r;
  centroid /= static_cast<double>(reps.size());
  const double cn = centroid.norm();
  double total = 0.0;
  for (const Vector& r : reps) {
    const double rn = r.norm();
    total += (cn > 0.0 && rn > 0.0) ? 1.0 - centroid.dot(r) / (cn * rn) : 1.0;
  }
  return total / static_cast<double>(reps.size());
}

double dispersion_prob(const std::vector<Vector>& probs) {
  require(!probs.empty(), ErrorCode::kInvalidArgument, "no predictions");
  if (all_identical(probs)) return 0.0;
  Vector mean = Vector::Zero(probs.front().size());
  double mean_h = 0.0;
  for (const Vector& p : probs) {
    mean += p;
    mean_h += entropy(p);
  }
  const double m = static_cast<double>(probs.size());
  return std::max(0.0, entropy(mean / m) - mean_h / m);
}

Pcc pearson(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorCode::kInvalidArgument,
          "pearson needs two equal-length samples of size >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0)
    return {std::numeric_limits<double>::quiet_NaN(), false};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), true};
}

BoxStats box_stats(std::vector<double> values) {
  BoxStats s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  return s;
}

QuartileAnalysis quartile_analysis(const std::vector<double>& nll_values,
                                   const std::vector<double>& dispersion_values) {
  require(nll_values.size() == dispersion_values.size(), ErrorCode::kInvalidArgument,
          "nll/dispersion size mismatch");
  require(nll_values.size() >= 4, ErrorCode::kInvalidArgument,
          "quartile analysis needs at least 4 instances");
  const std::size_t n = nll_values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return nll_values[i] < nll_values[j];
  });
  QuartileAnalysis qa;
  qa.group.assign(n, 0);
  for (std::size_t g = 0; g < 4; ++g) {
    std::vector<double> gn, gd;
    for (std::size_t r = g * n / 4; r < (g + 1) * n / 4; ++r) {
      qa.group[order[r]] = static_cast<int>(g);
      gn.push_back(nll_values[order[r]]);
      gd.push_back(dispersion_values[order[r]]);
    }
    qa.nll[g] = box_stats(std::move(gn));
    qa.dispersion[g] = box_stats(std::move(gd));
  }
  qa.pcc = pearson(nll_values, dispersion_values);
  return qa;
}

Matrix ensemble_predict(const Matrix& x, const SwagPosterior& posterior,
                        const Classifier& phi, Activation act, int num_members,
                        Rng& rng, const LogitTransform& transform) {
  require(num_members >= 1, ErrorCode::kInvalidArgument, "ensemble size must be >= 1");
  require(posterior.frozen(), ErrorCode::kPrecondition, "posterior is not frozen");
  Matrix sum = Matrix::Zero(x.rows(), phi.weight.rows());
  for (int m = 0; m < num_members; ++m) {
    Matrix logits = classifier_logits(phi, features(posterior.sample_theta(rng), act, x));
    if (transform) logits = transform(logits);
    sum += softmax_rows(logits);
  }
  return sum / static_cast<double>(num_members);
}

ClassDiagnostics per_class_diagnostics(const Classifier& phi, const Matrix& probs,
                                       const std::vector<int>& labels, int n_bins) {
  check_rows(probs, labels);
  ClassDiagnostics d;
  for (Eigen::Index k = 0; k < phi.weight.rows(); ++k)
    d.weight_norms.push_back(phi.weight.row(k).norm());
  const RowVector marginal = probs.colwise().mean();
  d.marginal.assign(marginal.data(), marginal.data() + marginal.size());
  d.reliability = ece(probs, labels, n_bins).bins;
  return d;
}

MetricsReport evaluate_probs(const Matrix& probs, const std::vector<int>& labels,
                             const std::vector<Split>& class_splits, int n_bins) {
  MetricsReport r;
  r.acc = accuracy(probs, labels, class_splits);
  r.nll = nll(probs, labels);
  EceResult e = ece(probs, labels, n_bins);
  r.ece = e.ece;
  r.bins = std::move(e.bins);
  r.num_examples = labels.size();
  return r;
}

nlohmann::json bins_to_json(const std::vector<CalibrationBin>& bins) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : bins)
    arr.push_back({{"lower", b.lower},
                   {"upper", b.upper},
                   {"count", b.count},
                   {"mean_confidence", b.mean_confidence},
                   {"accuracy", b.accuracy}});
  return arr;
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["acc_all"] = report.acc.all;
  if (report.acc.many) j["acc_many"] = *report.acc.many;
  if (report.acc.medium) j["acc_medium"] = *report.acc.medium;
  if (report.acc.few) j["acc_few"] = *report.acc.few;
  j["nll"] = report.nll;
  j["ece"] = report.ece;
  j["ece_bins"] = bins_to_json(report.bins);
  j["num_examples"] = report.num_examples;
  j["ensemble_m"] = report.ensemble_m;
  return j;
}

std::string to_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "metric,value\n";
  os << "acc_all," << fmt(report.acc.all) << "\n";
  if (report.acc.many) os << "acc_many," << fmt(*report.acc.many) << "\n";
  if (report.acc.medium) os << "acc_medium," << fmt(*report.acc.medium) << "\n";
  if (report.acc.few) os << "acc_few," << fmt(*report.acc.few) << "\n";
  os << "nll," << fmt(report.nll) << "\n";
  os << "ece," << fmt(report.ece) << "\n";
  os << "num_examples," << report.num_examples << "\n";
  os << "ensemble_m," << report.ensemble_m << "\n";
  return os.str();
}

std::string bins_to_csv(const std::vector<CalibrationBin>& bins) {
  std::ostringstream os;
  os << "bin,lower,upper,count,mean_confidence,accuracy\n";
  for (std::size_t b = 0; b < bins.size(); ++b)
    os << b + 1 << "," << fmt(bins[b].lower) << "," << fmt(bins[b].upper) << ","
       << bins[b].count << "," << fmt(bins[b].mean_confidence) << ","
       << fmt(bins[b].accuracy) << "\n";
  return os.str();
}

}  // namespace ltsrepr
