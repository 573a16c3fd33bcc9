#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace deca {

// Configuration problems detected before any work starts.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-contract input data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Default guard applied to every probability before it enters a logarithm.
inline constexpr double kProbClamp = 1e-7;

inline double clamp_prob(double p, double eps = kProbClamp) {
  if (p < eps) return eps;
  if (p > 1.0 - eps) return 1.0 - eps;
  return p;
}

// 1 inside the clamp window, 0 where the clamp is binding. Used to keep
// loss gradients consistent with the clamped forward value.
inline double clamp_pass(double p, double eps = kProbClamp) {
  return (p > eps && p < 1.0 - eps) ? 1.0 : 0.0;
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace deca
