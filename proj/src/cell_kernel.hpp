#pragma once

// Shared forward kernel of the recurrent cell. Internal to the library.

#include <cmath>

#include "ml2o/learned_optimizer.hpp"

namespace ml2o::detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One cell step for one coordinate.
/// x: [features..., h_prev...] (input_dim); gates receives the activated
/// gates (input, forget, output, candidate; 4H).
inline void cell_forward(const OptimizerParams& p, const double* x, const double* c_prev,
                         double* gates, double* c_new, double* tanh_c, double* h_new) {
  const std::size_t hidden = p.hidden();
  const std::size_t in = p.input_dim();
  const double* w = p.gate_weights().data();
  const double* bias = p.gate_bias().data();
  for (std::size_t r = 0; r < 4 * hidden; ++r) {
    const double* row = w + r * in;
    double acc = bias[r];
    for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
    gates[r] = r < 3 * hidden ? sigmoid(acc) : std::tanh(acc);
  }
  const double* ig = gates;
  const double* fg = gates + hidden;
  const double* og = gates + 2 * hidden;
  const double* cg = gates + 3 * hidden;
  for (std::size_t k = 0; k < hidden; ++k) {
    c_new[k] = fg[k] * c_prev[k] + ig[k] * cg[k];
    tanh_c[k] = std::tanh(c_new[k]);
    h_new[k] = og[k] * tanh_c[k];
  }
}

inline double project_output(const OptimizerParams& p, const double* h_new) {
  const double* w = p.out_weights().data();
  double acc = p.out_bias();
  for (std::size_t k = 0; k < p.hidden(); ++k) acc += w[k] * h_new[k];
  return p.output_scale() * acc;
}

/// Normalized momentum from updated accumulators.
inline double normalized_momentum(double m, double v) {
  return m / (std::sqrt(v) + kMomentumEps);
}

}  // namespace ml2o::detail
