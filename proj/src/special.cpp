#include "ltsrepr/special.hpp"

#include <cmath>
#include <limits>

namespace ltsrepr::special {
namespace {

// Below this the asymptotic series is not accurate to double precision, so the
// argument is shifted up with the recurrence first.
constexpr double kAsymptoticThreshold = 10.0;

}  // namespace

double log_gamma(double x) {
  if (!(x > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return std::lgamma(x);
}

double digamma(double x) {
  if (!(x > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  // psi(x) = psi(x + 1) - 1/x
  while (x < kAsymptoticThreshold) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  // Bernoulli-number series in 1/x^2.
  const double series =
      r2 * (1.0 / 12 -
      r2 * (1.0 / 120 -
      r2 * (1.0 / 252 -
      r2 * (1.0 / 240 -
      r2 * (1.0 / 132 -
      r2 * (691.0 / 32760 -
      r2 * (1.0 / 12)))))));
  return acc + std::log(x) - 0.5 * r - series;
}

double trigamma(double x) {
  if (!(x > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  // psi'(x) = psi'(x + 1) + 1/x^2
  while (x < kAsymptoticThreshold) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  const double series =
      r * (1.0 +
      r * (0.5 +
      r * (1.0 / 6 -
      r2 * (1.0 / 30 -
      r2 * (1.0 / 42 -
      r2 * (1.0 / 30 -
      r2 * (5.0 / 66 -
      r2 * (691.0 / 2730 -
      r2 * (7.0 / 6)))))))));
  return acc + series;
}

}  // namespace ltsrepr::special
