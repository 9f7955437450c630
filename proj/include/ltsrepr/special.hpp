#pragma once

namespace ltsrepr::special {

// Special functions for positive real arguments. Accurate to ~1e-14 relative
// for x >= 1; valid for any x > 0.

double log_gamma(double x);

// psi(x) = d/dx log Gamma(x)
double digamma(double x);

// psi'(x)
double trigamma(double x);

}  // namespace ltsrepr::special
