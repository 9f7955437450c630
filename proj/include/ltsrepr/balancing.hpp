#pragma once

#include <string>
#include <vector>

#include "ltsrepr/common.hpp"
#include "ltsrepr/data.hpp"
#include "ltsrepr/netcore.hpp"

namespace ltsrepr {

enum class BalanceKind { kNone, kCbs, kGrw, kLa };

const char* balance_name(BalanceKind k);
BalanceKind parse_balance(const std::string& name);

struct BalancingSpec {
  BalanceKind kind = BalanceKind::kNone;
  double rho = 1.0;
  std::vector<double> frequencies;  // pi_k from raw training counts

  void validate() const;
  // Class-balanced sampling is the only strategy that changes the sampler.
  Sampler::Mode sampler_mode() const;
};

// w_y = (1/pi_y)^rho / sum_j (1/pi_j)^rho
double grw_weight(const std::vector<double>& pi, double rho, int label);
std::vector<double> grw_weights(const std::vector<double>& pi, double rho);

// z_k + rho * log(pi_k). Training-time only.
Vector logit_adjust(const Vector& logits, const std::vector<double>& pi, double rho);
Matrix logit_adjust_rows(const Matrix& logits, const std::vector<double>& pi,
                         double rho);

double balanced_ce_loss(const Vector& logits, int label, const BalancingSpec& spec);

// Batch-mean balanced CE and its gradient w.r.t. the (unadjusted) logits.
LossGrad balanced_ce_batch(const Matrix& logits, const std::vector<int>& labels,
                           const BalancingSpec& spec);

LossFn balanced_ce(const BalancingSpec& spec);

}  // namespace ltsrepr
