#include "ltsrepr/balancing.hpp"

#include <cmath>
#include <numeric>

namespace ltsrepr {
namespace {

void check_frequencies(const std::vector<double>& pi) {
  require(!pi.empty(), ErrorCode::kInvalidArgument, "empty class frequencies");
  for (double p : pi)
    require(p > 0.0, ErrorCode::kInvalidArgument, "class frequency must be positive");
}

}  // namespace

const char* balance_name(BalanceKind k) {
  switch (k) {
    case BalanceKind::kNone: return "none";
    case BalanceKind::kCbs: return "cbs";
    case BalanceKind::kGrw: return "grw";
    case BalanceKind::kLa: return "la";
  }
  return "?";
}

BalanceKind parse_balance(const std::string& name) {
  if (name == "none") return BalanceKind::kNone;
  if (name == "cbs") return BalanceKind::kCbs;
  if (name == "grw") return BalanceKind::kGrw;
  if (name == "la") return BalanceKind::kLa;
  fail(ErrorCode::kInvalidArgument, "unknown balancing strategy: " + name);
}

void BalancingSpec::validate() const {
  require(rho >= 0.0, ErrorCode::kInvalidArgument, "rho must be >= 0");
  if (kind == BalanceKind::kGrw || kind == BalanceKind::kLa) {
    check_frequencies(frequencies);
    const double total = std::accumulate(frequencies.begin(), frequencies.end(), 0.0);
    require(std::abs(total - 1.0) < 1e-9, ErrorCode::kInvalidArgument,
            "class frequencies must sum to 1");
  }
}

Sampler::Mode BalancingSpec::sampler_mode() const {
  return kind == BalanceKind::kCbs ? Sampler::Mode::kClassBalanced
                                   : Sampler::Mode::kInstanceBalanced;
}

std::vector<double> grw_weights(const std::vector<double>& pi, double rho) {
  check_frequencies(pi);
  require(rho >= 0.0, ErrorCode::kInvalidArgument, "rho must be >= 0");
  std::vector<double> w(pi.size());
  for (std::size_t k = 0; k < pi.size(); ++k) w[k] = std::pow(1.0 / pi[k], rho);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

double grw_weight(const std::vector<double>& pi, double rho, int label) {
  require(label >= 0 && label < static_cast<int>(pi.size()),
          ErrorCode::kInvalidArgument, "label out of range");
  return grw_weights(pi, rho)[static_cast<std::size_t>(label)];
}

Vector logit_adjust(const Vector& logits, const std::vector<double>& pi, double rho) {
  check_frequencies(pi);
  require(logits.size() == static_cast<Eigen::Index>(pi.size()),
          ErrorCode::kInvalidArgument, "logit/frequency size mismatch");
  Vector out = logits;
  for (Eigen::Index k = 0; k < out.size(); ++k)
    out(k) += rho * std::log(pi[static_cast<std::size_t>(k)]);
  return out;
}

Matrix logit_adjust_rows(const Matrix& logits, const std::vector<double>& pi,
                         double rho) {
  check_frequencies(pi);
  require(logits.cols() == static_cast<Eigen::Index>(pi.size()),
          ErrorCode::kInvalidArgument, "logit/frequency size mismatch");
  RowVector shift(logits.cols());
  for (Eigen::Index k = 0; k < shift.size(); ++k)
    shift(k) = rho * std::log(pi[static_cast<std::size_t>(k)]);
  Matrix out = logits;
  out.rowwise() += shift;
  return out;
}

double balanced_ce_loss(const Vector& logits, int label, const BalancingSpec& spec) {
  Matrix row = logits.transpose();
  return balanced_ce_batch(row, {label}, spec).loss;
}

LossGrad balanced_ce_batch(const Matrix& logits, const std::vector<int>& labels,
                           const BalancingSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case BalanceKind::kNone:
    case BalanceKind::kCbs:
      return cross_entropy_batch(logits, labels);
    case BalanceKind::kLa:
      // The shift is constant in the logits, so dL/dz is unchanged in form.
      return cross_entropy_batch(logit_adjust_rows(logits, spec.frequencies, spec.rho),
                                 labels);
    case BalanceKind::kGrw: {
      const std::vector<double> w = grw_weights(spec.frequencies, spec.rho);
      LossGrad lg = cross_entropy_batch(logits, labels);
      const Matrix p = softmax_rows(logits);
      const double n = static_cast<double>(labels.size());
      lg.loss = 0.0;
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double wy = w[static_cast<std::size_t>(y)];
        lg.loss -= wy * std::log(std::max(p(i, y), kProbFloor));
        lg.dlogits.row(i) *= wy;
      }
      lg.loss /= n;
      return lg;
    }
  }
  fail(ErrorCode::kInvalidArgument, "invalid balancing kind");
}

LossFn balanced_ce(const BalancingSpec& spec) {
  return [spec](const Matrix& logits, const std::vector<int>& labels) {
    return balanced_ce_batch(logits, labels, spec);
  };
}

}  // namespace ltsrepr
