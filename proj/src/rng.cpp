#include "fedmpdd/rng.hpp"

#include <cmath>

namespace fedmpdd {

double SplitMix64::next_gaussian() {
  const double u1 = next_unit();
  const double u2 = next_unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double SplitMix64::next_laplace(double scale) {
  const double u = next_unit() - 0.5;  // (-0.5, 0.5)
  const double sign = u < 0.0 ? -1.0 : 1.0;
  return -scale * sign * std::log(1.0 - 2.0 * std::fabs(u));
}

}  // namespace fedmpdd
