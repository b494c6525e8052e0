#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ml2o/meta_train.hpp"

namespace ml2o {

/// ln(0) and anything below it is clamped to this value.
inline constexpr double kLogFloor = -40.0;

double clamped_log(double loss);

struct RunRecord {
  std::string method;
  std::string scenario;
  std::optional<double> sigma;
  std::uint64_t seed = 0;
  std::size_t task_index = 0;
  std::vector<double> curve;     // losses l(θ_0..θ_horizon); shorter when truncated
  double min_log_loss = 0.0;     // min over the curve of clamped_log
  double final_log_loss = 0.0;   // clamped_log of the last finite loss
  bool truncated = false;        // a non-finite loss ended the curve early
  bool diverged = false;         // training or adaptation failed; curve empty
  std::uint64_t task_hash = 0;
  std::uint64_t theta0_hash = 0;
  std::optional<std::uint64_t> task_seed;
  std::uint64_t source_hash = 0;  // φ before adaptation
  std::uint64_t params_hash = 0;  // φ evaluated
  double wall_ms = 0.0;
};

/// Builds a record from a (possibly truncated) loss curve.
RunRecord make_record(std::vector<double> curve, std::size_t horizon);

/// Unrolls the frozen optimizer on `n_tasks` tasks from `dist`; task i uses
/// the substream rng.split(i).
std::vector<RunRecord> evaluate(const OptimizerParams& params, const TaskDistribution& dist,
                                std::size_t horizon, std::size_t n_tasks, const RngStream& rng);

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
};

/// mean ± t_{0.975, n−1} · s / √n.
Interval confidence_interval(const std::vector<double>& samples);

/// Two-sided 97.5% Student-t quantile with `dof` degrees of freedom.
double student_t_975(std::size_t dof);

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"vanilla", "tl", "dt", "ml2o"};
  return names;
}

struct ComparisonCell {
  std::string method;
  std::string scenario;
  std::optional<double> sigma;  // test σ (compare) or adaptation σ (sweep)
  std::size_t n = 0;
  std::size_t diverged = 0;
  Interval min_log;    // over per-seed means of min_log_loss
  Interval final_log;  // over per-seed means of final_log_loss
  std::vector<double> per_seed_min_log;
  std::vector<double> per_seed_final_log;
};

struct ComparisonTable {
  std::vector<ComparisonCell> cells;
  std::vector<RunRecord> records;

  const ComparisonCell& cell(const std::string& method, const std::string& scenario) const;
};

struct EvalConfig {
  MetaConfig train;
  TaskDistribution train_dist = TaskDistribution::train_mixture(ProblemFamily::Lasso);
  TaskDistribution adapt_dist = TaskDistribution::normal_sigma(ProblemFamily::Lasso, 100.0);
  TaskDistribution test_dist = TaskDistribution::normal_sigma(ProblemFamily::Lasso, 100.0);
  double adapt_alpha = 1e-4;
  std::size_t adapt_unroll = 20;
  AdaptOptions adapt_options;
  std::size_t horizon = 200;
  std::size_t n_tasks = 1;
  std::size_t n_seeds = 10;
  std::uint64_t base_seed = 0;
  std::size_t jobs = 1;

  std::uint64_t seed_for(std::size_t index) const { return base_seed + index; }
  void validate() const;
};

/// Evaluation setting for one table row.
struct Scenario {
  std::string label;
  std::optional<double> sigma;
  TaskDistribution adapt_dist;
  TaskDistribution test_dist;
};

/// The trained endpoints of one seed, shared across scenarios.
struct SeedModels {
  std::uint64_t seed = 0;
  std::optional<OptimizerParams> init;
  std::optional<OptimizerParams> plain;
  std::optional<OptimizerParams> ml2o;
  std::string plain_error;
  std::string ml2o_error;
};

SeedModels train_seed_models(const EvalConfig& cfg, std::size_t seed_index,
                             bool need_plain = true, bool need_ml2o = true);

/// Runs `methods` on every scenario for one seed.
std::vector<RunRecord> run_seed(const EvalConfig& cfg, const SeedModels& models,
                                const std::vector<Scenario>& scenarios,
                                const std::vector<std::string>& methods);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions are rethrown
/// (the first by index) after all work finishes.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// Aggregates records into per-(method, scenario) cells; cells come out in
/// scenario order, then method order.
ComparisonTable aggregate(std::vector<RunRecord> records, const std::vector<Scenario>& scenarios,
                          const std::vector<std::string>& methods);

std::vector<Scenario> sigma_scenarios(const EvalConfig& cfg, const std::vector<double>& sigmas);

/// Four-method comparison for each test σ (adaptation and test share σ).
ComparisonTable compare_methods(const EvalConfig& cfg, const std::vector<double>& sigmas);

/// Four-method comparison on the configured adapt/test distributions as they are.
ComparisonTable compare_fixed(const EvalConfig& cfg, const std::string& label);

/// TL and M-L2O at test σ `sigma_test` for each adaptation σ.
ComparisonTable adapt_sweep(const EvalConfig& cfg, const std::vector<double>& sigma_adapt,
                            double sigma_test);

struct InterpolationPoint {
  double alpha = 0.0;
  std::vector<RunRecord> records;
  std::vector<double> mean_curve;  // over seeds, clamped logs, untruncated records only
  Interval min_log;
};

std::vector<double> default_alpha_grid();

/// Blends w = αw₁ + (1−α)w₂ and evaluates each α on the same test draws.
std::vector<InterpolationPoint> interpolate_eval(const OptimizerParams& w1,
                                                 const OptimizerParams& w2,
                                                 const std::vector<double>& alpha_grid,
                                                 const TaskDistribution& dist, std::size_t horizon,
                                                 std::size_t n_seeds, std::uint64_t base_seed,
                                                 std::size_t jobs = 1);

/// Test stream of one seed, keyed by the test σ so every method and scenario
/// that shares σ sees the same draws.
RngStream test_stream(std::uint64_t seed, const TaskDistribution& dist);
RngStream adapt_stream(std::uint64_t seed, const TaskDistribution& dist);

// Output

void write_records_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path);
void write_curves(const std::vector<RunRecord>& records, const std::filesystem::path& dir);
/// One row per cell: means and 95% half-widths of min and final log-loss.
void write_table_csv(const ComparisonTable& table, const std::filesystem::path& path);
nlohmann::json table_to_json(const ComparisonTable& table);
ComparisonTable table_from_json(const nlohmann::json& doc);
void write_json(const nlohmann::json& doc, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace ml2o
