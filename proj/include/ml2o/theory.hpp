#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "ml2o/learned_optimizer.hpp"
#include "ml2o/optimizee.hpp"

namespace ml2o {

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
double power_iteration(const Matrix& sym, std::size_t max_iters = 20000, double tol = 1e-15);

/// ‖M‖₂ via power iteration on MᵀM.
double spectral_norm(const Matrix& m);

struct GapProbe {
  Vector theta;
  Vector direction;  // unit vector used for the Hessian probe
  double grad_gap = 0.0;
  double hess_gap = 0.0;
};

struct GapReport {
  double delta12 = 0.0;        // max ‖∇l₁ − ∇l₂‖ over the probes
  double delta12_tilde = 0.0;  // max ‖H₁v − H₂v‖ over the probes
  std::size_t n_probes = 0;
  double radius = 0.0;
  std::vector<GapProbe> probes;
};

/// Probes θ uniformly in the ball of `probe_radius`, each with its own random
/// unit direction for the Hessian gap.
GapReport measure_gaps(const OptimizeeTask& task1, const OptimizeeTask& task2,
                       double probe_radius, std::size_t n_probes, RngStream& rng);

struct LipschitzProfile {
  double L = 0.0;
  double rho = 0.0;
  double M = 0.0;
  double M_m1 = 0.0;
  double Q = 0.0;
  double radius = 0.0;
};

/// Input sensitivity of the fresh-state update, max |u(z₁) − u(z₂)| / ‖z₁ − z₂‖
/// over random feature pairs.
double estimate_input_lipschitz(const OptimizerParams& params, std::size_t n_pairs,
                                RngStream& rng);

LipschitzProfile quadratic_lipschitz_profile(const OptimizeeTask& task, double domain_radius,
                                             const OptimizerParams& params, RngStream& rng,
                                             std::size_t n_pairs = 256);

struct GrowthRow {
  std::size_t horizon = 0;
  double measured = 0.0;   // mean over pairs and probe φ
  double reference = 0.0;  // T Q^{T-1} Δ̃ + Q^{2T-1} Δ, scaled to the first measured value
};

struct GrowthConfig {
  std::vector<std::size_t> horizons{1, 2, 5, 10, 20};
  std::size_t n_pairs = 20;
  std::size_t n_probes = 2;         // probe φ per pair; probe 0 is the given φ
  double probe_spread = 0.01;       // uniform perturbation of the other probe φ
  double gap_radius = 1.0;
  std::size_t gap_probes = 64;
};

struct GrowthReport {
  std::vector<GrowthRow> rows;
  std::vector<std::vector<double>> per_pair;  // [pair][horizon index]
  std::vector<bool> pair_monotone;
  double monotone_fraction = 0.0;
  double Q = 0.0;  // mean over pairs
  double delta12 = 0.0;
  double delta12_tilde = 0.0;
};

/// ‖∇_φ ĝ¹_T − ∇_φ ĝ²_T‖ for pairs (task from dist1, task from dist2) started
/// from a shared θ₀ drawn from dist1.
GrowthReport gradient_gap_growth(const OptimizerParams& params, const TaskDistribution& dist1,
                                 const TaskDistribution& dist2, const GrowthConfig& cfg,
                                 RngStream& rng);

nlohmann::json gap_report_to_json(const GapReport& report);
nlohmann::json profile_to_json(const LipschitzProfile& profile);
nlohmann::json growth_to_json(const GrowthReport& report);
void write_growth_csv(const GrowthReport& report, const std::filesystem::path& path);

}  // namespace ml2o
