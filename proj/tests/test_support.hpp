#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "ml2o/learned_optimizer.hpp"
#include "ml2o/optimizee.hpp"

namespace ml2o::testing {

/// ‖a − b‖∞ / ‖b‖∞ (absolute when b is zero).
inline double rel_error(const Vector& a, const Vector& b) {
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  const double ref = norm_inf(b);
  return ref > 0.0 ? diff / ref : diff;
}

/// Every entry of φ drawn from U(-spread, spread).
inline OptimizerParams random_params(std::size_t hidden, RngStream& rng, double spread = 0.5,
                                     double output_scale = 0.1) {
  OptimizerParams p(hidden, kFeatureDim, output_scale);
  for (auto& x : p.values()) x = spread * (2.0 * rng.next_uniform() - 1.0);
  return p;
}

inline OptimizeeTask random_quadratic(std::size_t dim, RngStream& rng, double sigma = 1.0) {
  Matrix a(dim, dim);
  for (auto& x : a.flat()) x = sigma * rng.next_normal();
  Vector b = gauss_sample(rng, dim, 0.0, 1.0);
  return OptimizeeTask::quadratic(std::move(a), std::move(b));
}

/// Central differences of a scalar function of φ, coordinate by coordinate.
inline Vector central_diff(const OptimizerParams& p,
                           const std::function<double(const OptimizerParams&)>& f, double eps) {
  Vector out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    Vector plus = p.values();
    Vector minus = p.values();
    plus[j] += eps;
    minus[j] -= eps;
    out[j] = (f(p.with_values(std::move(plus))) - f(p.with_values(std::move(minus)))) / (2.0 * eps);
  }
  return out;
}

}  // namespace ml2o::testing
