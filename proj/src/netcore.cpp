#include "ltsrepr/netcore.hpp"

#include <cmath>
#include <numbers>

namespace ltsrepr {
namespace {

double softplus(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

Matrix activate(const Matrix& pre, Activation act) {
  switch (act) {
    case Activation::kRelu: return pre.cwiseMax(0.0);
    case Activation::kTanh: return pre.array().tanh().matrix();
    case Activation::kSoftplus: return pre.unaryExpr(&softplus);
  }
  return pre;
}

Matrix activation_grad(const Matrix& pre, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::kTanh:
      return (1.0 - pre.array().tanh().square()).matrix();
    case Activation::kSoftplus: return pre.unaryExpr(&sigmoid);
  }
  return Matrix::Ones(pre.rows(), pre.cols());
}

Matrix affine(const Matrix& in, const Matrix& weight, const Vector& bias) {
  Matrix out = in * weight.transpose();
  out.rowwise() += bias.transpose();
  return out;
}

template <class P, class S>
std::vector<S> collect_tensors(P& params) {
  std::vector<S> out;
  out.reserve(2 * params.theta.size() + 2);
  for (auto& layer : params.theta) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  out.emplace_back(params.phi.weight.data(), static_cast<std::size_t>(params.phi.weight.size()));
  out.emplace_back(params.phi.bias.data(), static_cast<std::size_t>(params.phi.bias.size()));
  return out;
}

void uniform_fill(Matrix& w, Vector& b, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = u(rng);
}

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSoftplus: return "softplus";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "softplus") return Activation::kSoftplus;
  fail(ErrorCode::kInvalidArgument, "unknown activation: " + name);
}

int ModelParams::input_dim() const {
  return theta.empty() ? static_cast<int>(phi.weight.cols())
                       : static_cast<int>(theta.front().weight.cols());
}
int ModelParams::repr_dim() const { return static_cast<int>(phi.weight.cols()); }
int ModelParams::num_classes() const { return static_cast<int>(phi.weight.rows()); }

std::size_t ModelParams::theta_size() const {
  std::size_t n = 0;
  for (const auto& l : theta) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::size_t ModelParams::size() const {
  return theta_size() + static_cast<std::size_t>(phi.weight.size() + phi.bias.size());
}

std::vector<std::span<double>> ModelParams::tensors() {
  return collect_tensors<ModelParams, std::span<double>>(*this);
}

std::vector<std::span<const double>> ModelParams::tensors() const {
  return collect_tensors<const ModelParams, std::span<const double>>(*this);
}

Vector ModelParams::flatten() const {
  Vector flat(static_cast<Eigen::Index>(size()));
  Eigen::Index pos = 0;
  for (auto t : tensors())
    for (double v : t) flat(pos++) = v;
  return flat;
}

void ModelParams::assign_flat(const Vector& flat) {
  require(flat.size() == static_cast<Eigen::Index>(size()),
          ErrorCode::kInvalidArgument, "flat parameter size mismatch");
  Eigen::Index pos = 0;
  for (auto t : tensors())
    for (double& v : t) v = flat(pos++);
}

bool ModelParams::all_finite() const {
  for (auto t : tensors())
    for (double v : t)
      if (!std::isfinite(v)) return false;
  return true;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for (auto t : z.tensors())
    for (double& v : t) v = 0.0;
  return z;
}

Classifier init_classifier(int repr_dim, int num_classes, Rng& rng) {
  require(repr_dim >= 1 && num_classes >= 2, ErrorCode::kInvalidArgument,
          "bad classifier shape");
  Classifier phi{Matrix(num_classes, repr_dim), Vector(num_classes)};
  uniform_fill(phi.weight, phi.bias, repr_dim, rng);
  return phi;
}

ModelParams init_params(const ModelShape& shape, Rng& rng) {
  require(shape.input_dim >= 1 && shape.repr_dim >= 1, ErrorCode::kInvalidArgument,
          "bad model shape");
  ModelParams p;
  p.activation = shape.activation;
  int in = shape.input_dim;
  std::vector<int> outs = shape.hidden;
  outs.push_back(shape.repr_dim);
  for (int out : outs) {
    require(out >= 1, ErrorCode::kInvalidArgument, "layer width must be >= 1");
    DenseLayer layer{Matrix(out, in), Vector(out)};
    uniform_fill(layer.weight, layer.bias, in, rng);
    p.theta.push_back(std::move(layer));
    in = out;
  }
  p.phi = init_classifier(shape.repr_dim, shape.num_classes, rng);
  return p;
}

Matrix features(const std::vector<DenseLayer>& theta, Activation act,
                const Matrix& x) {
  Matrix h = x;
  for (std::size_t l = 0; l < theta.size(); ++l) {
    require(h.cols() == theta[l].weight.cols(), ErrorCode::kInvalidArgument,
            "shape mismatch at layer " + std::to_string(l));
    Matrix pre = affine(h, theta[l].weight, theta[l].bias);
    h = (l + 1 < theta.size()) ? activate(pre, act) : std::move(pre);
  }
  return h;
}

Vector features(const std::vector<DenseLayer>& theta, Activation act,
                const Vector& x) {
  const Matrix row = x.transpose();
  return features(theta, act, row).row(0).transpose();
}

Matrix classifier_logits(const Classifier& phi, const Matrix& repr) {
  require(repr.cols() == phi.weight.cols(), ErrorCode::kInvalidArgument,
          "representation dimension mismatch");
  return affine(repr, phi.weight, phi.bias);
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    RowVector e = (logits.row(i).array() - m).exp().matrix();
    out.row(i) = e / e.sum();
  }
  return out;
}

Vector softmax_prob(const Classifier& phi, const Vector& repr) {
  return softmax(phi.weight * repr + phi.bias);
}

double cross_entropy(const Vector& probs, int label) {
  require(label >= 0 && label < probs.size(), ErrorCode::kInvalidArgument,
          "label out of range");
  return -std::log(std::max(probs(label), kProbFloor));
}

LossGrad cross_entropy_batch(const Matrix& logits, const std::vector<int>& labels) {
  require(logits.rows() == static_cast<Eigen::Index>(labels.size()),
          ErrorCode::kInvalidArgument, "logits/labels size mismatch");
  const double n = static_cast<double>(labels.size());
  LossGrad out;
  out.dlogits = softmax_rows(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < logits.cols(), ErrorCode::kInvalidArgument,
            "label out of range");
    out.loss -= std::log(std::max(out.dlogits(i, y), kProbFloor));
    out.dlogits(i, y) -= 1.0;
  }
  out.loss /= n;
  out.dlogits /= n;
  return out;
}

LossGrad soft_cross_entropy_batch(const Matrix& logits, const Matrix& targets) {
  require(logits.rows() == targets.rows() && logits.cols() == targets.cols(),
          ErrorCode::kInvalidArgument, "logits/targets shape mismatch");
  const double n = static_cast<double>(logits.rows());
  LossGrad out;
  const Matrix p = softmax_rows(logits);
  out.loss = -(targets.array() * p.array().max(kProbFloor).log()).sum() / n;
  // d/dz of -sum_k t_k log p_k = p * sum(t) - t
  out.dlogits = (p.array().colwise() * targets.rowwise().sum().array() -
                 targets.array()).matrix() / n;
  return out;
}

ForwardCache forward(const ModelParams& params, const Matrix& x) {
  ForwardCache c;
  Matrix h = x;
  const std::size_t n_layers = params.theta.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = params.theta[l];
    require(h.cols() == layer.weight.cols(), ErrorCode::kInvalidArgument,
            "shape mismatch at layer " + std::to_string(l));
    Matrix pre = affine(h, layer.weight, layer.bias);
    require(pre.allFinite(), ErrorCode::kNumeric,
            "non-finite activation at layer " + std::to_string(l));
    c.inputs.push_back(std::move(h));
    h = (l + 1 < n_layers) ? activate(pre, params.activation) : pre;
    c.pre.push_back(std::move(pre));
  }
  c.repr = std::move(h);
  c.logits = classifier_logits(params.phi, c.repr);
  require(c.logits.allFinite(), ErrorCode::kNumeric,
          "non-finite logits at layer " + std::to_string(n_layers));
  return c;
}

Gradients backward(const ModelParams& params, const ForwardCache& cache,
                   const Matrix& dlogits) {
  require(dlogits.rows() == cache.logits.rows() && dlogits.cols() == cache.logits.cols(),
          ErrorCode::kInvalidArgument, "dlogits shape mismatch");
  Gradients g = zeros_like(params);
  g.phi.weight = dlogits.transpose() * cache.repr;
  g.phi.bias = dlogits.colwise().sum().transpose();
  Matrix upstream = dlogits * params.phi.weight;  // dL/d repr
  for (std::size_t l = params.theta.size(); l-- > 0;) {
    Matrix dpre = (l + 1 < params.theta.size())
                      ? Matrix(upstream.cwiseProduct(
                            activation_grad(cache.pre[l], params.activation)))
                      : upstream;
    require(dpre.allFinite(), ErrorCode::kNumeric,
            "non-finite gradient at layer " + std::to_string(l));
    g.theta[l].weight = dpre.transpose() * cache.inputs[l];
    g.theta[l].bias = dpre.colwise().sum().transpose();
    if (l > 0) upstream = dpre * params.theta[l].weight;
  }
  return g;
}

LossAndGrad loss_and_gradients(const ModelParams& params, const Matrix& x,
                               const std::vector<int>& labels,
                               const LossFn& loss) {
  const ForwardCache cache = forward(params, x);
  LossGrad lg = loss(cache.logits, labels);
  require(std::isfinite(lg.loss), ErrorCode::kNumeric, "non-finite loss");
  return {lg.loss, backward(params, cache, lg.dlogits)};
}

LossFn ce_loss() {
  return [](const Matrix& logits, const std::vector<int>& labels) {
    return cross_entropy_batch(logits, labels);
  };
}

void OptimConfig::validate() const {
  require(lr > 0.0, ErrorCode::kInvalidArgument, "learning rate must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kInvalidArgument,
          "momentum must be in [0, 1)");
  require(weight_decay >= 0.0, ErrorCode::kInvalidArgument,
          "weight decay must be >= 0");
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  require(total_steps > 0, ErrorCode::kInvalidArgument, "total_steps must be > 0");
  require(step <= total_steps, ErrorCode::kInvalidArgument, "step beyond schedule");
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * frac));
}

void sgd_update(std::span<double> param, std::span<const double> grad,
                std::span<double> momentum_buf, double lr,
                const OptimConfig& cfg) {
  require(param.size() == grad.size() && param.size() == momentum_buf.size(),
          ErrorCode::kInvalidArgument, "optimizer tensor size mismatch");
  const double mu = cfg.momentum;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + 2.0 * cfg.weight_decay * param[i];
    momentum_buf[i] = mu * momentum_buf[i] + g;
    const double step = cfg.nesterov ? g + mu * momentum_buf[i] : momentum_buf[i];
    param[i] -= lr * step;
  }
}

OptimState OptimState::create(const ModelParams& params, const OptimConfig& cfg,
                              std::size_t total_steps) {
  cfg.validate();
  OptimState s;
  s.momentum = zeros_like(params);
  s.total_steps = total_steps;
  s.config = cfg;
  return s;
}

void sgd_step(ModelParams& params, const Gradients& grads, OptimState& state,
              double lr) {
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.momentum.tensors();
  require(p.size() == g.size() && p.size() == m.size(), ErrorCode::kInvalidArgument,
          "gradient structure mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) sgd_update(p[i], g[i], m[i], lr, state.config);
  ++state.step;
}

void sgd_step(ModelParams& params, const Gradients& grads, OptimState& state) {
  const double lr = cosine_lr(state.step, state.total_steps, state.config.lr);
  sgd_step(params, grads, state, lr);
}

}  // namespace ltsrepr
