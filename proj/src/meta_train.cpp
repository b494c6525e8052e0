#include "ml2o/meta_train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ml2o {

double OuterRule::sgd_step(std::size_t k) const {
  return std::min(beta, 8.0 / (mu * static_cast<double>(k + 1)));
}

void OuterRule::validate() const {
  if (kind == Kind::Adam) {
    if (!(lr > 0.0)) throw ConfigError("outer rule: Adam learning rate must be positive");
  } else {
    if (!(beta > 0.0)) throw ConfigError("outer rule: sgd beta must be positive");
    if (!(mu > 0.0)) throw ConfigError("outer rule: sgd mu must be positive");
  }
}

std::string OuterRule::describe() const {
  std::ostringstream out;
  out << std::setprecision(17);
  if (kind == Kind::Adam) {
    out << "adam(lr=" << lr << ")";
  } else {
    out << "sgd(beta=" << beta << ", mu=" << mu << ")";
  }
  return out.str();
}

OuterOptimizer::OuterOptimizer(OuterRule rule, std::size_t n) : rule_(rule), m_(n), v_(n) {
  rule_.validate();
}

void OuterOptimizer::apply(Vector& phi, const Vector& grad, std::size_t epoch) {
  if (phi.size() != grad.size() || phi.size() != m_.size()) {
    throw DimensionError("outer update: parameter and gradient sizes differ");
  }
  if (rule_.kind == OuterRule::Kind::SgdSchedule) {
    axpy(-rule_.sgd_step(epoch), grad, phi);
    return;
  }
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t j = 0; j < phi.size(); ++j) {
    m_[j] = b1 * m_[j] + (1.0 - b1) * grad[j];
    v_[j] = b2 * v_[j] + (1.0 - b2) * grad[j] * grad[j];
    phi[j] -= rule_.lr * (m_[j] / c1) / (std::sqrt(v_[j] / c2) + eps);
  }
}

void MetaConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (epochs < 1) throw ConfigError("epochs (K) must be >= 1");
  if (task_epochs < 1) throw ConfigError("task_epochs (S) must be >= 1");
  if (unroll < 1) throw ConfigError("unroll (T) must be >= 1");
  if (tasks_per_update < 1) throw ConfigError("tasks_per_update must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (!(output_scale > 0.0)) throw ConfigError("output_scale must be positive");
  if (!grad_mode.is_inner()) throw ConfigError("grad_mode must be full or detached");
  if (meta_mode.is_inner()) throw ConfigError("meta_mode must be fd_hvp or first_order");
  grad_mode.validate();
  meta_mode.validate();
  outer.validate();
  if (curriculum.kind == Curriculum::Kind::Doubling && curriculum.max_task_epochs < task_epochs) {
    throw ConfigError("curriculum max_task_epochs must be >= task_epochs");
  }
}

std::vector<std::size_t> TrainLog::task_switch_epochs() const {
  std::vector<std::size_t> out;
  for (const auto& e : entries) {
    if (e.new_task) out.push_back(e.epoch);
  }
  return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,meta_loss,task_id,new_task,task_epochs,theta0_hash,theta_final_hash,params_hash,"
         "wall_ms\n";
  out << std::setprecision(17);
  for (const auto& e : entries) {
    out << e.epoch << ',' << e.meta_loss << ',' << e.task_id << ',' << (e.new_task ? 1 : 0) << ','
        << e.task_epochs << ',' << std::hex << std::setw(16) << std::setfill('0') << e.theta0_hash
        << ',' << std::setw(16) << e.theta_final_hash << ',' << std::setw(16) << e.params_hash
        << std::dec << std::setfill(' ') << ',' << std::fixed << std::setprecision(3) << e.wall_ms
        << std::defaultfloat << std::setprecision(17) << '\n';
  }
}

OptimizerParams initial_params(const MetaConfig& cfg) {
  RngStream rng = RngStream(cfg.seed).split("init");
  return init_params(cfg.hidden, kFeatureDim, rng, cfg.output_scale);
}

namespace {

struct TaskSlot {
  std::optional<OptimizeeTask> task;
  Vector theta;  // θ0 of the next epoch
  std::uint64_t task_id = 0;
};

bool finite_vector(const Vector& v) { return all_finite(v.span()); }

TrainResult run_training(const MetaConfig& cfg, const TaskDistribution& dist, bool meta_adapted,
                         const EpochObserver& observer) {
  cfg.validate();
  dist.validate();
  const auto start = std::chrono::steady_clock::now();
  const RngStream task_root = RngStream(cfg.seed).split("train-tasks");

  OptimizerParams params = initial_params(cfg);
  OuterOptimizer outer(cfg.outer, params.size());
  std::vector<TaskSlot> slots(cfg.tasks_per_update);
  TrainLog log;
  log.entries.reserve(cfg.epochs);

  std::size_t task_epochs = cfg.task_epochs;
  std::size_t block_start = 0;
  std::uint64_t block = 0;
  double block_first_loss = 0.0;

  for (std::size_t k = 0; k < cfg.epochs; ++k) {
    const bool new_task = k == 0 || k - block_start == task_epochs;
    if (new_task) {
      if (k > 0) {
        if (cfg.curriculum.kind == Curriculum::Kind::Doubling) {
          const double last = log.entries.back().meta_loss;
          const double gain = block_first_loss != 0.0
                                  ? (block_first_loss - last) / std::abs(block_first_loss)
                                  : 0.0;
          if (gain < cfg.curriculum.threshold) {
            task_epochs = std::min(2 * task_epochs, cfg.curriculum.max_task_epochs);
          }
        }
        ++block;
      }
      block_start = k;
      const RngStream block_rng = task_root.split(block);
      for (std::size_t s = 0; s < slots.size(); ++s) {
        RngStream slot_rng = block_rng.split(static_cast<std::uint64_t>(s));
        RngStream task_rng = slot_rng.split("task");
        RngStream theta_rng = slot_rng.split("theta0");
        slots[s].task = sample_task(dist, task_rng);
        slots[s].theta = sample_theta0(dist, theta_rng);
        slots[s].task_id = block * slots.size() + s;
      }
    }

    TrainLogEntry entry;
    entry.epoch = k;
    entry.new_task = new_task;
    entry.task_epochs = task_epochs;
    entry.task_id = slots[0].task_id;
    entry.theta0_hash = hash_values(slots[0].theta.span());

    Vector grad(params.size());
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(slots.size());
    try {
      for (auto& slot : slots) {
        if (meta_adapted) {
          auto r = maml_value_and_grad(params, *slot.task, slot.theta, cfg.unroll, cfg.alpha,
                                       cfg.meta_mode, cfg.grad_mode);
          loss += r.value;
          if (slots.size() == 1) {
            grad = std::move(r.grad);
          } else {
            axpy(inv_n, r.grad, grad);
          }
          slot.theta = std::move(r.base.theta_final);
        } else {
          auto r = value_and_meta_grad(params, *slot.task, slot.theta, cfg.unroll, cfg.grad_mode);
          loss += r.unroll.final_loss;
          if (slots.size() == 1) {
            grad = std::move(r.grad);
          } else {
            axpy(inv_n, r.grad, grad);
          }
          slot.theta = std::move(r.unroll.theta_final);
        }
      }
    } catch (const NonFiniteError& e) {
      throw DivergenceError("training diverged at epoch " + std::to_string(k) + ": " + e.what(), k,
                            params);
    }
    if (slots.size() > 1) loss *= inv_n;
    if (!std::isfinite(loss) || !finite_vector(grad)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(k) +
                                ": non-finite meta-loss or gradient",
                            k, params);
    }
    if (new_task) block_first_loss = loss;

    Vector next = params.values();
    outer.apply(next, grad, k);
    if (!finite_vector(next)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(k) +
                                ": non-finite parameters after the outer update",
                            k, params);
    }
    params.values() = std::move(next);

    entry.meta_loss = loss;
    entry.theta_final_hash = hash_values(slots[0].theta.span());
    entry.params_hash = params.hash();
    entry.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log.entries.push_back(entry);
    if (observer) observer(k, params);

    if (cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "checkpoint_epoch_" << std::setw(6) << std::setfill('0') << (k + 1) << ".ml2o";
      const auto path = cfg.checkpoint_dir / name.str();
      save_checkpoint(params, path, "epoch=" + std::to_string(k + 1));
      log.checkpoints.push_back(path);
    }
  }
  return {std::move(params), std::move(log)};
}

}  // namespace

TrainResult train_ml2o(const MetaConfig& cfg, const TaskDistribution& dist,
                       const EpochObserver& observer) {
  return run_training(cfg, dist, true, observer);
}

TrainResult train_plain_l2o(const MetaConfig& cfg, const TaskDistribution& dist,
                            const EpochObserver& observer) {
  return run_training(cfg, dist, false, observer);
}

OptimizerParams adapt(const OptimizerParams& params, const TaskDistribution& dist,
                      std::size_t steps, double alpha, std::size_t horizon, const RngStream& rng,
                      const AdaptOptions& options, std::vector<double>* losses) {
  if (!(alpha >= 0.0)) throw ConfigError("adapt: alpha must be >= 0");
  if (!options.grad_mode.is_inner()) throw ConfigError("adapt: grad mode must be full or detached");
  if (!(options.clip_norm >= 0.0)) throw ConfigError("adapt: clip_norm must be >= 0");
  dist.validate();
  OptimizerParams current = params;
  for (std::size_t s = 0; s < steps; ++s) {
    RngStream step_rng = rng.split(static_cast<std::uint64_t>(options.fixed_task ? 0 : s));
    RngStream task_rng = step_rng.split("task");
    RngStream theta_rng = step_rng.split("theta0");
    const OptimizeeTask task = sample_task(dist, task_rng);
    const Vector theta0 = sample_theta0(dist, theta_rng);
    ValueAndGrad vg;
    try {
      vg = value_and_meta_grad(current, task, theta0, horizon, options.grad_mode);
    } catch (const NonFiniteError& e) {
      throw DivergenceError("adaptation diverged at step " + std::to_string(s) + ": " + e.what(),
                            s, current);
    }
    if (losses) losses->push_back(vg.unroll.final_loss);
    double scale = alpha;
    if (options.clip_norm > 0.0) {
      const double norm = norm2(vg.grad);
      if (norm > options.clip_norm) scale *= options.clip_norm / norm;
    }
    Vector next = current.values();
    axpy(-scale, vg.grad, next);
    if (!finite_vector(next)) {
      throw DivergenceError("adaptation diverged at step " + std::to_string(s), s, current);
    }
    current.values() = std::move(next);
  }
  return current;
}

}  // namespace ml2o
