#include "mspad/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace mspad {

std::uint64_t Rng::below(std::uint64_t bound) {
  // Reject the top partial bucket so every residue is equally likely.
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::poisson(double mean) {
  if (!(mean > 0.0)) return 0;
  const double floor = std::exp(-mean);
  std::uint64_t k = 0;
  double p = uniform();
  while (p > floor) {
    ++k;
    p *= uniform();
  }
  return k;
}

}  // namespace mspad
