#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ltsrepr/balancing.hpp"
#include "ltsrepr/common.hpp"
#include "ltsrepr/data.hpp"
#include "ltsrepr/netcore.hpp"
#include "ltsrepr/swag.hpp"

namespace ltsrepr {

// Stage-2 classifier learning. Every method here takes the feature extractor
// by const reference and returns classifier-side parameters only; theta is
// never written.

enum class RetrainMethod { kNone, kCrt, kLws, kDisalign, kSrepr };

const char* retrain_name(RetrainMethod m);
RetrainMethod parse_retrain(const std::string& name);

enum class StochasticSource { kPosterior, kInputJitter };

const char* source_name(StochasticSource s);
StochasticSource parse_source(const std::string& name);

// Dirichlet concentration with the +1 shift already applied.
struct DirichletParams {
  Vector concentration;
  double precision() const { return concentration.sum(); }
};

struct SreprConfig {
  int num_samples = 10;
  double kd_temperature = 20.0;
  double ce_weight = 0.5;
  double kd_weight = 0.5;
  double beta_floor = 1e-6;
  StochasticSource source = StochasticSource::kPosterior;
  double jitter_std = 0.1;

  void validate() const;
};

// Input-gated logit calibration. scale/shift = alpha_k/beta_k,
// gate_weight/gate_bias = gamma/delta.
struct DisAlignParams {
  Vector scale;
  Vector shift;
  Vector gate_weight;
  double gate_bias = 0.0;

  static DisAlignParams identity(int num_classes);
  int num_classes() const { return static_cast<int>(scale.size()); }
};

struct RetrainOptions {
  std::size_t steps = 0;
  int batch_size = 64;
  OptimConfig optim;
};

struct ClassifierLossGrad {
  double loss = 0.0;
  Classifier grad;
};

// ---------------------------------------------------------------- cRT

Classifier crt(const std::vector<DenseLayer>& theta, Activation act,
               const LongTailDataset& dataset, const BalancingSpec& balancing,
               const RetrainOptions& opts, std::uint64_t seed);

// Same, starting from a given classifier.
Classifier train_classifier(const std::vector<DenseLayer>& theta, Activation act,
                            Classifier phi, const LongTailDataset& dataset,
                            const BalancingSpec& balancing,
                            const RetrainOptions& opts, std::uint64_t seed);

// ---------------------------------------------------------------- LWS

// (w_k / ||w_k||^tau, b_k), norms offset by 1e-12.
Classifier lws_scale(const Classifier& phi, double tau);

struct LwsLossGrad {
  double loss = 0.0;
  double dtau = 0.0;
};

LwsLossGrad lws_loss(const Classifier& phi_star, double tau, const Matrix& repr,
                     const std::vector<int>& labels, const BalancingSpec& balancing);

struct LwsResult {
  Classifier phi;
  double tau = 0.0;
};

LwsResult lws(const std::vector<DenseLayer>& theta, Activation act,
              const Classifier& phi_star, const LongTailDataset& dataset,
              const BalancingSpec& balancing, const RetrainOptions& opts,
              std::uint64_t seed);

// ---------------------------------------------------------------- DisAlign

// z_hat = z + sigma(gamma . z + delta) * ((alpha - 1) z + beta), row-wise.
Matrix disalign_logits(const DisAlignParams& params, const Matrix& logits);

struct DisAlignLossGrad {
  double loss = 0.0;
  DisAlignParams grad;
};

// GRW-weighted CE over calibrated logits; `logits` are the frozen classifier's.
DisAlignLossGrad disalign_loss(const DisAlignParams& params, const Matrix& logits,
                               const std::vector<int>& labels,
                               const BalancingSpec& grw);

DisAlignParams disalign(const std::vector<DenseLayer>& theta, Activation act,
                        const Classifier& phi_star, const LongTailDataset& dataset,
                        double rho, const RetrainOptions& opts, std::uint64_t seed);

// ---------------------------------------------------------------- SRepr

// M representation matrices (each B x L) for a batch of inputs. The posterior
// source evaluates F_{theta_m}(x) with theta_m ~ q; the jitter source
// evaluates F_{theta_swa}(x + eps_m).
std::vector<Matrix> stochastic_representations(
    const Matrix& x, const SwagPosterior* posterior,
    const std::vector<DenseLayer>& theta_swa, Activation act,
    const SreprConfig& config, Rng& rng);

// -(1/M) sum_m log p_y under each representation, balanced per `balancing`,
// averaged over the batch; gradient w.r.t. phi.
ClassifierLossGrad mean_ce_loss(const std::vector<Matrix>& reps,
                                const std::vector<int>& labels,
                                const Classifier& phi,
                                const BalancingSpec& balancing);

struct TeacherSet {
  std::vector<Vector> probs;  // M simplex vectors
  Vector mean;
};

// Temperature-scaled softmax of each representation. Constants for
// differentiation.
TeacherSet teacher_probs(const Classifier& phi, const std::vector<Vector>& reps,
                         double tau_kd);

// Closed-form approximate ML Dirichlet fit to the teachers, +1 shifted. The
// disagreement statistic in the denominator is floored at `floor`.
DirichletParams estimate_beta(const std::vector<Vector>& teacher_probs,
                              double floor);

// exp(z / tau) + 1 with z / tau clamped to [-30, 30].
DirichletParams student_alpha(const Vector& logits, double tau_kd);
// d alpha_k / d z_k (diagonal).
Vector student_alpha_grad(const Vector& logits, double tau_kd);

// KL[Dir(alpha) || Dir(beta)].
double dirichlet_kl(const Vector& alpha, const Vector& beta);
Vector dirichlet_kl_grad_alpha(const Vector& alpha, const Vector& beta);

// E_{p~Dir(alpha)}[-sum_k pbar_k log p_k] + KL[Dir(alpha) || Dir(1)] / sum(beta)
double kd_loss(const Vector& alpha, const Vector& beta, const Vector& p_bar);
// First (cross-entropy) term alone.
double kd_expected_ce(const Vector& alpha, const Vector& p_bar);
Vector kd_loss_grad_alpha(const Vector& alpha, const Vector& beta,
                          const Vector& p_bar);

struct SreprLossGrad {
  double loss = 0.0;
  double ce_term = 0.0;
  double kd_term = 0.0;
  Classifier grad;
};

// ce_weight * mean_ce + kd_weight * kd over a batch. `repr_swa` are the
// representations under theta_swa (student); `reps` the M stochastic ones.
SreprLossGrad srepr_loss(const Classifier& phi, const std::vector<Matrix>& reps,
                         const Matrix& repr_swa, const std::vector<int>& labels,
                         const BalancingSpec& balancing, const SreprConfig& config);

struct SreprTrace {
  std::vector<double> losses;  // per step
};

Classifier srepr_retrain(const std::vector<DenseLayer>& theta_swa, Activation act,
                         const SwagPosterior* posterior, Classifier phi_init,
                         const LongTailDataset& dataset,
                         const BalancingSpec& balancing, const SreprConfig& config,
                         const RetrainOptions& opts, std::uint64_t seed,
                         SreprTrace* trace = nullptr);

}  // namespace ltsrepr
