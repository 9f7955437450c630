#include "ltsrepr/swag.hpp"

#include <cmath>
#include <numbers>

namespace ltsrepr {

void SwaSchedule::validate() const {
  require(start_fraction > 0.0 && start_fraction < 1.0, ErrorCode::kInvalidArgument,
          "swa start fraction must be in (0, 1)");
  require(capture_every_steps >= 1, ErrorCode::kInvalidArgument,
          "capture frequency must be >= 1 step");
  require(swa_lr > 0.0, ErrorCode::kInvalidArgument, "swa learning rate must be positive");
}

bool should_capture(std::size_t step, std::size_t total_steps,
                    const SwaSchedule& schedule) {
  if (step > total_steps) return false;
  const double start = schedule.start_fraction * static_cast<double>(total_steps);
  return static_cast<double>(step) > start &&
         step % schedule.capture_every_steps == 0;
}

double swa_lr(std::size_t step, std::size_t total_steps, double base_lr,
              const SwaSchedule& schedule) {
  require(total_steps > 0, ErrorCode::kInvalidArgument, "total_steps must be > 0");
  const double start = schedule.start_fraction * static_cast<double>(total_steps);
  const double t = static_cast<double>(step);
  if (t >= start) return schedule.swa_lr;
  const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * t / start));
  return schedule.swa_lr + (base_lr - schedule.swa_lr) * c;
}

SwagPosterior::SwagPosterior(const ModelParams& like)
    : layout_(zeros_like(like)),
      first_(Vector::Zero(static_cast<Eigen::Index>(like.size()))),
      second_(Vector::Zero(static_cast<Eigen::Index>(like.size()))) {}

void SwagPosterior::update_moments(const ModelParams& params) {
  update_moments(params.flatten());
}

void SwagPosterior::update_moments(const Vector& flat) {
  require(!frozen_, ErrorCode::kPrecondition, "posterior is frozen");
  require(flat.size() == first_.size(), ErrorCode::kInvalidArgument,
          "parameter shape mismatch");
  const double n = static_cast<double>(count_);
  first_ = (n * first_ + flat) / (n + 1.0);
  second_ = (n * second_ + flat.cwiseAbs2()) / (n + 1.0);
  ++count_;
}

void SwagPosterior::freeze() {
  require(count_ >= 2, ErrorCode::kPrecondition,
          "posterior needs at least two captures to freeze");
  sigma_ = (second_ - first_.cwiseAbs2()).cwiseMax(0.0);
  frozen_ = true;
}

std::vector<DenseLayer> SwagPosterior::sample_theta(Rng& rng) const {
  require(frozen_, ErrorCode::kPrecondition, "posterior is not frozen");
  ModelParams sample = layout_;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Index pos = 0;
  for (auto& layer : sample.theta) {
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i, ++pos)
      layer.weight.data()[i] = first_(pos) + std::sqrt(sigma_(pos)) * normal(rng);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i, ++pos)
      layer.bias(i) = first_(pos) + std::sqrt(sigma_(pos)) * normal(rng);
  }
  return sample.theta;
}

ModelParams SwagPosterior::mean_params() const {
  ModelParams p = layout_;
  p.assign_flat(first_);
  return p;
}

SwagPosterior SwagPosterior::from_parts(const ModelParams& layout,
                                        std::uint32_t count, Vector first,
                                        Vector second, Vector sigma) {
  const auto n = static_cast<Eigen::Index>(layout.size());
  require(first.size() == n && second.size() == n && sigma.size() == n,
          ErrorCode::kFormat, "posterior payload size mismatch");
  require((sigma.array() >= 0.0).all(), ErrorCode::kFormat,
          "negative posterior variance");
  SwagPosterior p(layout);
  p.first_ = std::move(first);
  p.second_ = std::move(second);
  p.sigma_ = std::move(sigma);
  p.count_ = count;
  p.frozen_ = true;
  return p;
}

}  // namespace ltsrepr
