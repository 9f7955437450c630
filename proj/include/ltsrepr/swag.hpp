#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ltsrepr/common.hpp"
#include "ltsrepr/netcore.hpp"

namespace ltsrepr {

// When and how SWA averages. Captures happen on epoch boundaries (every
// `capture_every_steps` optimizer steps) strictly after
// start_fraction * total_steps.
struct SwaSchedule {
  double start_fraction = 0.75;
  std::size_t capture_every_steps = 1;
  double swa_lr = 0.01;

  void validate() const;
};

bool should_capture(std::size_t step, std::size_t total_steps,
                    const SwaSchedule& schedule);

// Learning rate for a SWA run: cosine decay from base_lr to swa_lr over the
// first start_fraction of training, then constant swa_lr.
double swa_lr(std::size_t step, std::size_t total_steps, double base_lr,
              const SwaSchedule& schedule);

// Running first and second moments of the flattened parameters
// (ModelParams::flatten order), plus the frozen diagonal covariance.
class SwagPosterior {
 public:
  SwagPosterior() = default;
  explicit SwagPosterior(const ModelParams& like);

  void update_moments(const ModelParams& params);
  void update_moments(const Vector& flat);

  // sigma = max(second - first^2, 0). Needs at least two captures.
  void freeze();

  // theta_swa + sqrt(sigma) * eps over the feature-extractor entries only.
  std::vector<DenseLayer> sample_theta(Rng& rng) const;

  // Parameters set to the running mean (theta and phi).
  ModelParams mean_params() const;

  std::uint32_t count() const { return count_; }
  bool frozen() const { return frozen_; }
  const Vector& first_moment() const { return first_; }
  const Vector& second_moment() const { return second_; }
  const Vector& sigma() const { return sigma_; }
  const ModelParams& layout() const { return layout_; }

  // Restores a posterior read from disk.
  static SwagPosterior from_parts(const ModelParams& layout, std::uint32_t count,
                                  Vector first, Vector second, Vector sigma);

 private:
  ModelParams layout_;
  Vector first_;
  Vector second_;
  Vector sigma_;
  std::uint32_t count_ = 0;
  bool frozen_ = false;
};

}  // namespace ltsrepr
