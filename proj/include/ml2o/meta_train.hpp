#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ml2o/learned_optimizer.hpp"
#include "ml2o/optimizee.hpp"
#include "ml2o/unroll.hpp"

namespace ml2o {

/// Outer update rule for φ.
struct OuterRule {
  enum class Kind { Adam, SgdSchedule };
  Kind kind = Kind::Adam;
  double lr = 1e-4;  // Adam
  double beta = 0.0;  // SgdSchedule cap
  double mu = 0.0;    // SgdSchedule strong-convexity constant (user supplied)

  static OuterRule adam(double lr = 1e-4) { return {Kind::Adam, lr, 0.0, 0.0}; }
  static OuterRule sgd_schedule(double beta, double mu) {
    return {Kind::SgdSchedule, 0.0, beta, mu};
  }

  /// β_k = min(β, 8 / (μ (k + 1))) for epoch index k (0-based).
  double sgd_step(std::size_t k) const;
  void validate() const;
  std::string describe() const;
};

/// Stateful application of an OuterRule (Adam moments live here).
class OuterOptimizer {
 public:
  OuterOptimizer(OuterRule rule, std::size_t n);
  void apply(Vector& phi, const Vector& grad, std::size_t epoch);

 private:
  OuterRule rule_;
  Vector m_;
  Vector v_;
  std::size_t t_ = 0;
};

struct Curriculum {
  enum class Kind { Fixed, Doubling };
  Kind kind = Kind::Fixed;
  /// Doubling: S doubles when a block's relative meta-loss improvement
  /// (first - last) / |first| falls below this value.
  double threshold = 0.0;
  std::size_t max_task_epochs = 1000;

  static Curriculum fixed() { return {}; }
  static Curriculum doubling(double threshold, std::size_t max_task_epochs = 1000) {
    return {Kind::Doubling, threshold, max_task_epochs};
  }
};

struct MetaConfig {
  double alpha = 0.001;             // inner step of the meta objective
  OuterRule outer = OuterRule::adam(1e-4);
  std::size_t epochs = 5000;        // K
  std::size_t task_epochs = 5;      // S
  std::size_t unroll = 20;          // T
  std::size_t adapt_steps = 5;
  GradMode grad_mode = GradMode::full();          // how ∇ĝ_T is formed
  GradMode meta_mode = GradMode::fd_hvp_meta();   // how ∇Ĝ_T is formed
  std::size_t tasks_per_update = 1;  // N
  Curriculum curriculum;
  std::uint64_t seed = 0;
  std::size_t hidden = kDefaultHidden;
  double output_scale = kDefaultOutputScale;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

struct TrainLogEntry {
  std::size_t epoch = 0;
  double meta_loss = 0.0;  // Ĝ_T for M-L2O, ĝ_T for plain training
  std::uint64_t task_id = 0;
  bool new_task = false;
  std::size_t task_epochs = 0;  // S in force
  std::uint64_t theta0_hash = 0;
  std::uint64_t theta_final_hash = 0;
  std::uint64_t params_hash = 0;  // after the update
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  std::vector<std::filesystem::path> checkpoints;

  std::vector<std::size_t> task_switch_epochs() const;
  /// Columns: epoch, meta_loss, task_id, new_task, task_epochs, theta0_hash,
  /// theta_final_hash, params_hash, wall_ms.
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  OptimizerParams params;
  TrainLog log;
};

/// Meta-loss became non-finite during training or adaptation.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, OptimizerParams last_good)
      : Error(what), epoch_(epoch), last_good_(std::move(last_good)) {}
  std::size_t epoch() const noexcept { return epoch_; }
  const OptimizerParams& last_good() const noexcept { return last_good_; }

 private:
  std::size_t epoch_;
  OptimizerParams last_good_;
};

/// Called after every outer update with the epoch index and the new φ.
using EpochObserver = std::function<void(std::size_t, const OptimizerParams&)>;

/// Initial φ for a training seed (shared by both trainers).
OptimizerParams initial_params(const MetaConfig& cfg);

/// Meta-adapted training on Ĝ_T.
TrainResult train_ml2o(const MetaConfig& cfg, const TaskDistribution& dist,
                       const EpochObserver& observer = {});

/// The same loop on ĝ_T with no inner adaptation step.
TrainResult train_plain_l2o(const MetaConfig& cfg, const TaskDistribution& dist,
                            const EpochObserver& observer = {});

struct AdaptOptions {
  GradMode grad_mode = GradMode::full();
  bool fixed_task = false;  // reuse one task for every step instead of a fresh draw per step
  /// When positive, gradients with ‖∇ĝ_T‖₂ above this norm are rescaled to it
  /// before the step.
  double clip_norm = 0.0;
};

/// `steps` gradient steps φ ← φ − α ∇ĝ_T(φ) on tasks drawn from `dist`
/// (with optional norm clipping).
/// `losses`, when given, receives ĝ_T before each step.
OptimizerParams adapt(const OptimizerParams& params, const TaskDistribution& dist,
                      std::size_t steps, double alpha, std::size_t horizon, const RngStream& rng,
                      const AdaptOptions& options = {}, std::vector<double>* losses = nullptr);

}  // namespace ml2o
