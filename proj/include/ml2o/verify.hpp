#pragma once

#include <json.hpp>

#include "ml2o/config.hpp"
#include "ml2o/theory.hpp"

namespace ml2o {

/// Outcome of a verification suite. `report` is always filled; `worst_case`
/// holds the instance with the largest error, serialized for replay.
struct VerifyOutcome {
  bool passed = true;
  double max_error = 0.0;
  double tolerance = 0.0;
  nlohmann::json report;
  nlohmann::json worst_case;
};

/// Random φ with every entry in U(-0.5, 0.5) and output scale 0.1.
OptimizerParams random_verify_params(std::size_t hidden, RngStream& rng);

/// ‖a − b‖∞ / ‖b‖∞ (absolute when b is zero).
double max_rel_error(const Vector& a, const Vector& b);

/// Full second-order meta-gradient against central differences of ĝ_T.
VerifyOutcome verify_grad(const VerifyConfig& cfg);

/// Forward Jacobian recursion chained with ∇l(θ_T) against reverse mode.
VerifyOutcome verify_jacobian(const VerifyConfig& cfg);

/// Task gaps on a quadratic pair, checked against the closed-form gradient gap
/// and the spectral-norm bound.
VerifyOutcome verify_gaps(const ExperimentConfig& cfg);

/// Gradient-gap growth diagnostic. `passed` reports whether the monotone
/// fraction reached the configured expectation.
VerifyOutcome verify_growth(const ExperimentConfig& cfg, GrowthReport* out = nullptr);

/// Replay document for a (φ, task, θ₀, T) instance.
nlohmann::json instance_to_json(const OptimizerParams& params, const OptimizeeTask& task,
                                const Vector& theta0, std::size_t horizon);

}  // namespace ml2o
