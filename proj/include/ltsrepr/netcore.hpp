#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ltsrepr/common.hpp"

namespace ltsrepr {

enum class Activation { kRelu, kTanh, kSoftplus };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

// y = W x + b with W stored out x in.
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

// Linear classifier: row k of `weight` is w_k, logits z = W f + b.
struct Classifier {
  Matrix weight;  // K x L
  Vector bias;    // K
};

struct ModelShape {
  int input_dim = 20;
  std::vector<int> hidden = {64, 64};
  int repr_dim = 32;
  int num_classes = 10;
  Activation activation = Activation::kRelu;
};

// theta: feature extractor (the activation is applied between layers, not
// after the last one); phi: classifier.
struct ModelParams {
  std::vector<DenseLayer> theta;
  Classifier phi;
  Activation activation = Activation::kRelu;

  int input_dim() const;
  int repr_dim() const;
  int num_classes() const;

  std::size_t theta_size() const;
  std::size_t size() const;

  // Every tensor as a flat span, in checkpoint order: theta layers
  // (weight, bias) then phi (weight, bias).
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;

  Vector flatten() const;
  void assign_flat(const Vector& flat);

  bool all_finite() const;
};

using Gradients = ModelParams;

ModelParams zeros_like(const ModelParams& params);

// Fan-in scaled uniform: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and
// biases.
ModelParams init_params(const ModelShape& shape, Rng& rng);
Classifier init_classifier(int repr_dim, int num_classes, Rng& rng);

// Batched feature extractor: rows of x are inputs, rows of the result are
// L-dimensional representations.
Matrix features(const std::vector<DenseLayer>& theta, Activation act,
                const Matrix& x);
Vector features(const std::vector<DenseLayer>& theta, Activation act,
                const Vector& x);

Matrix classifier_logits(const Classifier& phi, const Matrix& repr);

Vector softmax(const Vector& logits);
Matrix softmax_rows(const Matrix& logits);
Vector softmax_prob(const Classifier& phi, const Vector& repr);

inline constexpr double kProbFloor = 1e-30;

struct LossGrad {
  double loss = 0.0;
  Matrix dlogits;  // gradient of the (batch-mean) loss w.r.t. logits
};

// -log p_y with p_y floored at kProbFloor; d/dz = p - onehot(y).
double cross_entropy(const Vector& probs, int label);
LossGrad cross_entropy_batch(const Matrix& logits, const std::vector<int>& labels);
// Soft-target version used with mixup.
LossGrad soft_cross_entropy_batch(const Matrix& logits, const Matrix& targets);

// Loss callback: batch logits + labels -> mean loss and dL/dlogits.
using LossFn = std::function<LossGrad(const Matrix& logits,
                                      const std::vector<int>& labels)>;

struct ForwardCache {
  std::vector<Matrix> inputs;  // input to each theta layer
  std::vector<Matrix> pre;     // pre-activation output of each theta layer
  Matrix repr;
  Matrix logits;
};

ForwardCache forward(const ModelParams& params, const Matrix& x);

// Reverse-mode pass given dL/dlogits (already batch-averaged).
Gradients backward(const ModelParams& params, const ForwardCache& cache,
                   const Matrix& dlogits);

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;
};

LossAndGrad loss_and_gradients(const ModelParams& params, const Matrix& x,
                               const std::vector<int>& labels,
                               const LossFn& loss);

// Plain CE loss callback.
LossFn ce_loss();

struct OptimConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool nesterov = true;

  void validate() const;
};

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

// Core update on one tensor. g' = g + 2 wd p; buf = mu buf + g';
// p -= lr (g' + mu buf) with Nesterov, p -= lr buf without.
void sgd_update(std::span<double> param, std::span<const double> grad,
                std::span<double> momentum_buf, double lr,
                const OptimConfig& cfg);

struct OptimState {
  ModelParams momentum;
  std::size_t step = 0;
  std::size_t total_steps = 0;
  OptimConfig config;

  static OptimState create(const ModelParams& params, const OptimConfig& cfg,
                           std::size_t total_steps);
};

// Uses the given learning rate.
void sgd_step(ModelParams& params, const Gradients& grads, OptimState& state,
              double lr);
// Uses cosine_lr(step, total_steps, config.lr) and advances the step.
void sgd_step(ModelParams& params, const Gradients& grads, OptimState& state);

}  // namespace ltsrepr
