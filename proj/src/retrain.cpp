#include "ltsrepr/retrain.hpp"

#include <algorithm>
#include <cmath>

#include "ltsrepr/special.hpp"

namespace ltsrepr {
namespace {

constexpr double kNormOffset = 1e-12;
constexpr double kAlphaLogitClamp = 30.0;

// Same samples, features replaced by a fixed transform of the inputs.
LongTailDataset with_features(const LongTailDataset& ds, Matrix features) {
  LongTailDataset out;
  out.features = std::move(features);
  out.labels = ds.labels;
  out.class_counts = ds.class_counts;
  out.frequencies = ds.frequencies;
  out.splits = ds.splits;
  return out;
}

void sgd_classifier(Classifier& phi, const Classifier& grad, Classifier& mom,
                    double lr, const OptimConfig& cfg) {
  sgd_update({phi.weight.data(), static_cast<std::size_t>(phi.weight.size())},
             {grad.weight.data(), static_cast<std::size_t>(grad.weight.size())},
             {mom.weight.data(), static_cast<std::size_t>(mom.weight.size())}, lr, cfg);
  sgd_update({phi.bias.data(), static_cast<std::size_t>(phi.bias.size())},
             {grad.bias.data(), static_cast<std::size_t>(grad.bias.size())},
             {mom.bias.data(), static_cast<std::size_t>(mom.bias.size())}, lr, cfg);
}

Classifier zero_classifier(const Classifier& like) {
  return {Matrix::Zero(like.weight.rows(), like.weight.cols()),
          Vector::Zero(like.bias.size())};
}

Classifier classifier_grad(const Matrix& dlogits, const Matrix& repr) {
  return {dlogits.transpose() * repr, dlogits.colwise().sum().transpose()};
}

void check_positive(const Vector& v, const char* what) {
  require(v.size() > 0 && (v.array() > 0.0).all() && v.allFinite(),
          ErrorCode::kInvalidArgument, std::string(what) + " must be positive and finite");
}

void check_options(const RetrainOptions& opts) {
  require(opts.batch_size >= 1, ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  opts.optim.validate();
}

}  // namespace

const char* retrain_name(RetrainMethod m) {
  switch (m) {
    case RetrainMethod::kNone: return "none";
    case RetrainMethod::kCrt: return "crt";
    case RetrainMethod::kLws: return "lws";
    case RetrainMethod::kDisalign: return "disalign";
    case RetrainMethod::kSrepr: return "srepr";
  }
  return "?";
}

RetrainMethod parse_retrain(const std::string& name) {
  if (name == "none") return RetrainMethod::kNone;
  if (name == "crt") return RetrainMethod::kCrt;
  if (name == "lws") return RetrainMethod::kLws;
  if (name == "disalign") return RetrainMethod::kDisalign;
  if (name == "srepr") return RetrainMethod::kSrepr;
  fail(ErrorCode::kInvalidArgument, "unknown retrain method: " + name);
}

const char* source_name(StochasticSource s) {
  return s == StochasticSource::kPosterior ? "posterior" : "jitter";
}

StochasticSource parse_source(const std::string& name) {
  if (name == "posterior") return StochasticSource::kPosterior;
  if (name == "jitter") return StochasticSource::kInputJitter;
  fail(ErrorCode::kInvalidArgument, "unknown stochastic source: " + name);
}

void SreprConfig::validate() const {
  require(num_samples >= 2, ErrorCode::kInvalidArgument, "srepr needs M >= 2");
  require(kd_temperature > 0.0, ErrorCode::kInvalidArgument, "kd temperature must be > 0");
  require(beta_floor > 0.0, ErrorCode::kInvalidArgument, "beta floor must be > 0");
  require(ce_weight >= 0.0 && kd_weight >= 0.0, ErrorCode::kInvalidArgument,
          "loss weights must be >= 0");
  require(jitter_std >= 0.0, ErrorCode::kInvalidArgument, "jitter_std must be >= 0");
}

DisAlignParams DisAlignParams::identity(int num_classes) {
  return {Vector::Ones(num_classes), Vector::Zero(num_classes),
          Vector::Zero(num_classes), 0.0};
}

// ---------------------------------------------------------------- cRT

Classifier train_classifier(const std::vector<DenseLayer>& theta, Activation act,
                            Classifier phi, const LongTailDataset& dataset,
                            const BalancingSpec& balancing,
                            const RetrainOptions& opts, std::uint64_t seed) {
  check_options(opts);
  balancing.validate();
  if (opts.steps == 0) return phi;
  const LongTailDataset reprs = with_features(dataset, features(theta, act, dataset.features));
  Sampler sampler(reprs, balancing.sampler_mode(), make_rng(seed, stream::kRetrainBatches));
  Classifier mom = zero_classifier(phi);
  for (std::size_t t = 0; t < opts.steps; ++t) {
    const Batch b = sampler.next_batch(opts.batch_size);
    const LossGrad lg = balanced_ce_batch(classifier_logits(phi, b.x), b.labels, balancing);
    sgd_classifier(phi, classifier_grad(lg.dlogits, b.x), mom,
                   cosine_lr(t, opts.steps, opts.optim.lr), opts.optim);
  }
  return phi;
}

Classifier crt(const std::vector<DenseLayer>& theta, Activation act,
               const LongTailDataset& dataset, const BalancingSpec& balancing,
               const RetrainOptions& opts, std::uint64_t seed) {
  Rng init = make_rng(seed, stream::kRetrainInit);
  const int repr_dim = theta.empty() ? dataset.input_dim()
                                     : static_cast<int>(theta.back().weight.rows());
  Classifier phi = init_classifier(repr_dim, dataset.num_classes(), init);
  return train_classifier(theta, act, std::move(phi), dataset, balancing, opts, seed);
}

// ---------------------------------------------------------------- LWS

Classifier lws_scale(const Classifier& phi, double tau) {
  Classifier out = phi;
  for (Eigen::Index k = 0; k < phi.weight.rows(); ++k) {
    const double norm = phi.weight.row(k).norm() + kNormOffset;
    out.weight.row(k) = phi.weight.row(k) / std::pow(norm, tau);
  }
  return out;
}

LwsLossGrad lws_loss(const Classifier& phi_star, double tau, const Matrix& repr,
                     const std::vector<int>& labels, const BalancingSpec& balancing) {
  const Classifier scaled = lws_scale(phi_star, tau);
  const Matrix z = classifier_logits(scaled, repr);
  const LossGrad lg = balanced_ce_batch(z, labels, balancing);
  LwsLossGrad out{lg.loss, 0.0};
  for (Eigen::Index k = 0; k < z.cols(); ++k) {
    const double log_norm = std::log(phi_star.weight.row(k).norm() + kNormOffset);
    // dz_k/dtau = -log||w_k|| * (w_k(tau) . f)
    out.dtau -= log_norm * (lg.dlogits.col(k).array() *
                            (z.col(k).array() - scaled.bias(k))).sum();
  }
  return out;
}

LwsResult lws(const std::vector<DenseLayer>& theta, Activation act,
              const Classifier& phi_star, const LongTailDataset& dataset,
              const BalancingSpec& balancing, const RetrainOptions& opts,
              std::uint64_t seed) {
  check_options(opts);
  balancing.validate();
  LwsResult res{phi_star, 0.0};
  if (opts.steps == 0) return res;
  const LongTailDataset reprs = with_features(dataset, features(theta, act, dataset.features));
  Sampler sampler(reprs, balancing.sampler_mode(), make_rng(seed, stream::kRetrainBatches));
  OptimConfig cfg = opts.optim;
  cfg.weight_decay = 0.0;
  double tau = 0.0;
  double mom = 0.0;
  for (std::size_t t = 0; t < opts.steps; ++t) {
    const Batch b = sampler.next_batch(opts.batch_size);
    const LwsLossGrad lg = lws_loss(phi_star, tau, b.x, b.labels, balancing);
    const double g = lg.dtau;
    sgd_update({&tau, 1}, {&g, 1}, {&mom, 1}, cosine_lr(t, opts.steps, cfg.lr), cfg);
  }
  res.tau = tau;
  res.phi = lws_scale(phi_star, tau);
  return res;
}

// ---------------------------------------------------------------- DisAlign

namespace {

double logistic(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Matrix disalign_logits(const DisAlignParams& params, const Matrix& logits) {
  require(logits.cols() == params.num_classes(), ErrorCode::kInvalidArgument,
          "disalign class count mismatch");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const RowVector z = logits.row(i);
    const double gate = logistic(z.dot(params.gate_weight.transpose()) + params.gate_bias);
    for (Eigen::Index k = 0; k < z.size(); ++k)
      out(i, k) = gate * (params.scale(k) * z(k) + params.shift(k)) + (1.0 - gate) * z(k);
  }
  return out;
}

DisAlignLossGrad disalign_loss(const DisAlignParams& params, const Matrix& logits,
                               const std::vector<int>& labels,
                               const BalancingSpec& grw) {
  const Matrix zhat = disalign_logits(params, logits);
  const LossGrad lg = balanced_ce_batch(zhat, labels, grw);
  const int K = params.num_classes();
  DisAlignLossGrad out{lg.loss,
                       {Vector::Zero(K), Vector::Zero(K), Vector::Zero(K), 0.0}};
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const RowVector z = logits.row(i);
    const double gate = logistic(z.dot(params.gate_weight.transpose()) + params.gate_bias);
    double dgate = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double g = lg.dlogits(i, k);
      out.grad.scale(k) += g * gate * z(k);
      out.grad.shift(k) += g * gate;
      dgate += g * ((params.scale(k) - 1.0) * z(k) + params.shift(k));
    }
    const double ds = dgate * gate * (1.0 - gate);
    out.grad.gate_weight += ds * z.transpose();
    out.grad.gate_bias += ds;
  }
  return out;
}

DisAlignParams disalign(const std::vector<DenseLayer>& theta, Activation act,
                        const Classifier& phi_star, const LongTailDataset& dataset,
                        double rho, const RetrainOptions& opts, std::uint64_t seed) {
  check_options(opts);
  const int K = dataset.num_classes();
  DisAlignParams params = DisAlignParams::identity(K);
  if (opts.steps == 0) return params;
  const BalancingSpec grw{BalanceKind::kGrw, rho, dataset.frequencies};
  grw.validate();
  const Matrix logits = classifier_logits(phi_star, features(theta, act, dataset.features));
  const LongTailDataset logit_ds = with_features(dataset, logits);
  Sampler sampler(logit_ds, Sampler::Mode::kInstanceBalanced,
                  make_rng(seed, stream::kRetrainBatches));
  OptimConfig cfg = opts.optim;
  cfg.weight_decay = 0.0;
  DisAlignParams mom{Vector::Zero(K), Vector::Zero(K), Vector::Zero(K), 0.0};
  auto span_of = [](Vector& v) {
    return std::span<double>(v.data(), static_cast<std::size_t>(v.size()));
  };
  auto cspan_of = [](const Vector& v) {
    return std::span<const double>(v.data(), static_cast<std::size_t>(v.size()));
  };
  for (std::size_t t = 0; t < opts.steps; ++t) {
    const Batch b = sampler.next_batch(opts.batch_size);
    const DisAlignLossGrad lg = disalign_loss(params, b.x, b.labels, grw);
    const double lr = cosine_lr(t, opts.steps, cfg.lr);
    sgd_update(span_of(params.scale), cspan_of(lg.grad.scale), span_of(mom.scale), lr, cfg);
    sgd_update(span_of(params.shift), cspan_of(lg.grad.shift), span_of(mom.shift), lr, cfg);
    sgd_update(span_of(params.gate_weight), cspan_of(lg.grad.gate_weight),
               span_of(mom.gate_weight), lr, cfg);
    sgd_update({&params.gate_bias, 1}, {&lg.grad.gate_bias, 1}, {&mom.gate_bias, 1},
               lr, cfg);
  }
  return params;
}

// ---------------------------------------------------------------- SRepr

std::vector<Matrix> stochastic_representations(
    const Matrix& x, const SwagPosterior* posterior,
    const std::vector<DenseLayer>& theta_swa, Activation act,
    const SreprConfig& config, Rng& rng) {
  require(config.num_samples >= 1, ErrorCode::kInvalidArgument, "M must be >= 1");
  std::vector<Matrix> reps;
  reps.reserve(static_cast<std::size_t>(config.num_samples));
  if (config.source == StochasticSource::kPosterior) {
    require(posterior != nullptr && posterior->frozen(), ErrorCode::kPrecondition,
            "posterior required (frozen SWAG posterior missing)");
    for (int m = 0; m < config.num_samples; ++m)
      reps.push_back(features(posterior->sample_theta(rng), act, x));
    return reps;
  }
  require(config.jitter_std >= 0.0, ErrorCode::kInvalidArgument,
          "jitter_std must be >= 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int m = 0; m < config.num_samples; ++m) {
    Matrix noisy = x;
    for (Eigen::Index i = 0; i < noisy.size(); ++i)
      noisy.data()[i] += config.jitter_std * normal(rng);
    reps.push_back(features(theta_swa, act, noisy));
  }
  return reps;
}

ClassifierLossGrad mean_ce_loss(const std::vector<Matrix>& reps,
                                const std::vector<int>& labels,
                                const Classifier& phi,
                                const BalancingSpec& balancing) {
  require(!reps.empty(), ErrorCode::kInvalidArgument, "need at least one representation");
  const double M = static_cast<double>(reps.size());
  ClassifierLossGrad out{0.0, zero_classifier(phi)};
  for (const Matrix& r : reps) {
    const LossGrad lg = balanced_ce_batch(classifier_logits(phi, r), labels, balancing);
    out.loss += lg.loss / M;
    out.grad.weight += lg.dlogits.transpose() * r / M;
    out.grad.bias += lg.dlogits.colwise().sum().transpose() / M;
  }
  return out;
}

TeacherSet teacher_probs(const Classifier& phi, const std::vector<Vector>& reps,
                         double tau_kd) {
  require(tau_kd > 0.0, ErrorCode::kInvalidArgument, "kd temperature must be > 0");
  require(!reps.empty(), ErrorCode::kInvalidArgument, "need at least one teacher");
  TeacherSet t;
  t.mean = Vector::Zero(phi.weight.rows());
  for (const Vector& f : reps) {
    t.probs.push_back(softmax((phi.weight * f + phi.bias) / tau_kd));
    t.mean += t.probs.back();
  }
  t.mean /= static_cast<double>(reps.size());
  return t;
}

DirichletParams estimate_beta(const std::vector<Vector>& teacher_probs,
                              double floor) {
  require(!teacher_probs.empty(), ErrorCode::kInvalidArgument, "no teachers");
  require(floor > 0.0, ErrorCode::kInvalidArgument, "beta floor must be > 0");
  const Eigen::Index K = teacher_probs.front().size();
  const double M = static_cast<double>(teacher_probs.size());
  Vector mean = Vector::Zero(K);
  Vector mean_log = Vector::Zero(K);
  for (const Vector& p : teacher_probs) {
    require(p.size() == K, ErrorCode::kInvalidArgument, "teacher size mismatch");
    const Vector clamped = p.cwiseMax(kProbFloor);
    mean += clamped;
    mean_log += clamped.array().log().matrix();
  }
  mean /= M;
  mean_log /= M;
  const double denom =
      (mean.array() * (mean.array().log() - mean_log.array())).sum();
  const double scale = 0.5 * static_cast<double>(K - 1) / std::max(denom, floor);
  return {(mean * scale).array() + 1.0};
}

DirichletParams student_alpha(const Vector& logits, double tau_kd) {
  require(tau_kd > 0.0, ErrorCode::kInvalidArgument, "kd temperature must be > 0");
  const Vector u = (logits / tau_kd).cwiseMax(-kAlphaLogitClamp).cwiseMin(kAlphaLogitClamp);
  return {u.array().exp() + 1.0};
}

Vector student_alpha_grad(const Vector& logits, double tau_kd) {
  require(tau_kd > 0.0, ErrorCode::kInvalidArgument, "kd temperature must be > 0");
  Vector g(logits.size());
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    const double u = logits(k) / tau_kd;
    g(k) = std::abs(u) < kAlphaLogitClamp ? std::exp(u) / tau_kd : 0.0;
  }
  return g;
}

double dirichlet_kl(const Vector& alpha, const Vector& beta) {
  check_positive(alpha, "alpha");
  check_positive(beta, "beta");
  require(alpha.size() == beta.size(), ErrorCode::kInvalidArgument,
          "dirichlet size mismatch");
  const double a0 = alpha.sum();
  const double b0 = beta.sum();
  const double psi_a0 = special::digamma(a0);
  double kl = special::log_gamma(a0) - special::log_gamma(b0);
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    kl += special::log_gamma(beta(k)) - special::log_gamma(alpha(k));
    kl += (alpha(k) - beta(k)) * (special::digamma(alpha(k)) - psi_a0);
  }
  return kl;
}

Vector dirichlet_kl_grad_alpha(const Vector& alpha, const Vector& beta) {
  check_positive(alpha, "alpha");
  check_positive(beta, "beta");
  const double a0 = alpha.sum();
  const double shared = (a0 - beta.sum()) * special::trigamma(a0);
  Vector g(alpha.size());
  for (Eigen::Index k = 0; k < alpha.size(); ++k)
    g(k) = (alpha(k) - beta(k)) * special::trigamma(alpha(k)) - shared;
  return g;
}

double kd_expected_ce(const Vector& alpha, const Vector& p_bar) {
  check_positive(alpha, "alpha");
  require(alpha.size() == p_bar.size(), ErrorCode::kInvalidArgument, "size mismatch");
  const double psi_a0 = special::digamma(alpha.sum());
  double v = 0.0;
  for (Eigen::Index k = 0; k < alpha.size(); ++k)
    v -= p_bar(k) * (special::digamma(alpha(k)) - psi_a0);
  return v;
}

double kd_loss(const Vector& alpha, const Vector& beta, const Vector& p_bar) {
  check_positive(beta, "beta");
  const Vector ones = Vector::Ones(alpha.size());
  return kd_expected_ce(alpha, p_bar) + dirichlet_kl(alpha, ones) / beta.sum();
}

Vector kd_loss_grad_alpha(const Vector& alpha, const Vector& beta,
                          const Vector& p_bar) {
  check_positive(alpha, "alpha");
  check_positive(beta, "beta");
  const double tri_a0 = special::trigamma(alpha.sum());
  const double pbar_sum = p_bar.sum();
  Vector g = dirichlet_kl_grad_alpha(alpha, Vector::Ones(alpha.size())) / beta.sum();
  for (Eigen::Index k = 0; k < alpha.size(); ++k)
    g(k) += -p_bar(k) * special::trigamma(alpha(k)) + pbar_sum * tri_a0;
  return g;
}

SreprLossGrad srepr_loss(const Classifier& phi, const std::vector<Matrix>& reps,
                         const Matrix& repr_swa, const std::vector<int>& labels,
                         const BalancingSpec& balancing, const SreprConfig& config) {
  require(!reps.empty(), ErrorCode::kInvalidArgument, "need stochastic representations");
  const Eigen::Index B = repr_swa.rows();
  const double tau = config.kd_temperature;
  const ClassifierLossGrad ce = mean_ce_loss(reps, labels, phi, balancing);

  const Matrix z = classifier_logits(phi, repr_swa);
  Matrix dz = Matrix::Zero(B, z.cols());
  double kd = 0.0;
  std::vector<Vector> member(reps.size());
  for (Eigen::Index i = 0; i < B; ++i) {
    for (std::size_t m = 0; m < reps.size(); ++m) member[m] = reps[m].row(i).transpose();
    // Teachers and beta are constants: no gradient flows through them.
    const TeacherSet teachers = teacher_probs(phi, member, tau);
    const DirichletParams beta = estimate_beta(teachers.probs, config.beta_floor);
    const Vector zi = z.row(i).transpose();
    const DirichletParams alpha = student_alpha(zi, tau);
    kd += kd_loss(alpha.concentration, beta.concentration, teachers.mean);
    const Vector dalpha =
        kd_loss_grad_alpha(alpha.concentration, beta.concentration, teachers.mean);
    dz.row(i) = dalpha.cwiseProduct(student_alpha_grad(zi, tau)).transpose();
  }
  kd /= static_cast<double>(B);
  dz /= static_cast<double>(B);

  SreprLossGrad out;
  out.ce_term = ce.loss;
  out.kd_term = kd;
  out.loss = config.ce_weight * ce.loss + config.kd_weight * kd;
  const Classifier kd_grad = classifier_grad(dz, repr_swa);
  out.grad.weight = config.ce_weight * ce.grad.weight + config.kd_weight * kd_grad.weight;
  out.grad.bias = config.ce_weight * ce.grad.bias + config.kd_weight * kd_grad.bias;
  return out;
}

Classifier srepr_retrain(const std::vector<DenseLayer>& theta_swa, Activation act,
                         const SwagPosterior* posterior, Classifier phi_init,
                         const LongTailDataset& dataset,
                         const BalancingSpec& balancing, const SreprConfig& config,
                         const RetrainOptions& opts, std::uint64_t seed,
                         SreprTrace* trace) {
  check_options(opts);
  config.validate();
  balancing.validate();
  if (config.source == StochasticSource::kPosterior)
    require(posterior != nullptr && posterior->frozen(), ErrorCode::kPrecondition,
            "posterior required (frozen SWAG posterior missing)");
  Classifier phi = std::move(phi_init);
  if (opts.steps == 0) return phi;
  Sampler sampler(dataset, balancing.sampler_mode(), make_rng(seed, stream::kRetrainBatches));
  Rng noise = make_rng(seed, stream::kStochastic);
  Classifier mom = zero_classifier(phi);
  for (std::size_t t = 0; t < opts.steps; ++t) {
    const Batch b = sampler.next_batch(opts.batch_size);
    const Matrix repr_swa = features(theta_swa, act, b.x);
    const std::vector<Matrix> reps =
        stochastic_representations(b.x, posterior, theta_swa, act, config, noise);
    const SreprLossGrad lg = srepr_loss(phi, reps, repr_swa, b.labels, balancing, config);
    require(std::isfinite(lg.loss), ErrorCode::kNumeric, "non-finite srepr loss");
    if (trace) trace->losses.push_back(lg.loss);
    sgd_classifier(phi, lg.grad, mom, cosine_lr(t, opts.steps, opts.optim.lr), opts.optim);
  }
  return phi;
}

}  // namespace ltsrepr
