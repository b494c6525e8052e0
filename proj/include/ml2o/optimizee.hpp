#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "ml2o/numeric.hpp"

namespace ml2o {

enum class TaskKind { Lasso, Quadratic, Rosenbrock };

inline constexpr double kDefaultLambda = 0.005;
inline constexpr std::size_t kDefaultDim = 10;

/// One concrete optimizee instance. Immutable after construction.
class OptimizeeTask {
 public:
  static OptimizeeTask lasso(Matrix a, Vector b, double lambda = kDefaultLambda);
  static OptimizeeTask quadratic(Matrix a, Vector b);
  static OptimizeeTask rosenbrock();

  TaskKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  const Matrix& a() const noexcept { return a_; }
  const Vector& b() const noexcept { return b_; }
  double lambda() const noexcept { return lambda_; }
  /// AᵀA (empty for Rosenbrock).
  const Matrix& gram() const noexcept { return gram_; }
  /// Aᵀb (empty for Rosenbrock).
  const Vector& atb() const noexcept { return atb_; }

  double loss(const Vector& theta) const;
  Vector grad(const Vector& theta) const;
  Vector hvp(const Vector& theta, const Vector& v) const;

  /// Identifies the task contents (kind, coefficients) for provenance checks.
  std::uint64_t hash() const;

  /// Seed provenance recorded alongside serialized tasks; not part of hash().
  std::optional<std::uint64_t> provenance_seed;

 private:
  OptimizeeTask(TaskKind kind, std::size_t dim, Matrix a, Vector b, double lambda);

  TaskKind kind_;
  std::size_t dim_;
  Matrix a_;
  Vector b_;
  double lambda_;
  Matrix gram_;  // AᵀA, cached for hvp
  Vector atb_;   // Aᵀb
};

struct LossAndGrad {
  double loss;
  Vector grad;
};

LossAndGrad lasso_eval(const OptimizeeTask& task, const Vector& theta);
LossAndGrad quadratic_eval(const OptimizeeTask& task, const Vector& theta);
LossAndGrad rosenbrock_eval(const OptimizeeTask& task, const Vector& theta);
/// Dispatches on task.kind().
LossAndGrad evaluate_task(const OptimizeeTask& task, const Vector& theta);
Vector task_hvp(const OptimizeeTask& task, const Vector& theta, const Vector& v);

enum class DistKind { TrainMixture, NormalSigma, RosenbrockInit };

/// Task family a TrainMixture/NormalSigma distribution produces.
enum class ProblemFamily { Lasso, Quadratic };

struct TaskDistribution {
  DistKind kind = DistKind::TrainMixture;
  ProblemFamily family = ProblemFamily::Lasso;
  double sigma = 0.0;  // NormalSigma only
  std::size_t dim = kDefaultDim;
  double lambda = kDefaultLambda;

  static TaskDistribution train_mixture(ProblemFamily family, std::size_t dim = kDefaultDim,
                                        double lambda = kDefaultLambda);
  static TaskDistribution normal_sigma(ProblemFamily family, double sigma,
                                       std::size_t dim = kDefaultDim,
                                       double lambda = kDefaultLambda);
  static TaskDistribution rosenbrock_init();

  /// Optimizee dimension of sampled tasks (2 for Rosenbrock).
  std::size_t task_dim() const noexcept;
  void validate() const;
  std::string describe() const;
};

/// Copy of `dist` with its sigma replaced when it is a NormalSigma distribution.
TaskDistribution with_sigma(TaskDistribution dist, double sigma);

/// Coefficient ranges of the training mixture.
inline constexpr UniformRange kTrainMixtureRanges[] = {{0.0, 0.1}, {0.0, 0.5}, {0.0, 1.0}};

/// Draws A (and b from the "b" substream of `rng`). Advances `rng`.
OptimizeeTask sample_task(const TaskDistribution& dist, RngStream& rng);
Vector sample_theta0(const TaskDistribution& dist, RngStream& rng);

nlohmann::json task_to_json(const OptimizeeTask& task);
OptimizeeTask task_from_json(const nlohmann::json& doc);

const char* to_string(TaskKind kind);
const char* to_string(DistKind kind);
const char* to_string(ProblemFamily family);

}  // namespace ml2o
