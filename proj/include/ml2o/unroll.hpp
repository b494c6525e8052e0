#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ml2o/learned_optimizer.hpp"
#include "ml2o/optimizee.hpp"

namespace ml2o {

struct UnrollResult {
  Vector theta_final;
  std::vector<double> loss_curve;  // T + 1 entries
  double final_loss = 0.0;         // ĝ_T(φ) = l̂(θ_T)
  UnrollState final_state;
};

/// How derivatives with respect to φ are formed.
///   FullSecondOrder  backprop through z_t = ∇l̂(θ_t(φ)) via Hessian-vector products
///   DetachedInput    treat the optimizer inputs as constants
///   FirstOrderMeta   MAML gradient without the (I - α∇²ĝ_T) factor
///   FdHvpMeta        MAML gradient with a finite-difference Hessian-vector product
struct GradMode {
  enum class Kind { FullSecondOrder, DetachedInput, FirstOrderMeta, FdHvpMeta };
  Kind kind = Kind::FullSecondOrder;
  std::optional<double> epsilon;  // FdHvpMeta only; empty selects 1e-4 * (1 + ‖φ‖∞)

  static GradMode full() { return {Kind::FullSecondOrder, std::nullopt}; }
  static GradMode detached() { return {Kind::DetachedInput, std::nullopt}; }
  static GradMode first_order_meta() { return {Kind::FirstOrderMeta, std::nullopt}; }
  static GradMode fd_hvp_meta(std::optional<double> eps = std::nullopt) {
    return {Kind::FdHvpMeta, eps};
  }

  bool is_inner() const noexcept {
    return kind == Kind::FullSecondOrder || kind == Kind::DetachedInput;
  }
  void validate() const;
  std::string name() const;
};

UnrollResult unroll(const OptimizerParams& params, const OptimizeeTask& task, const Vector& theta0,
                    std::size_t horizon);

/// Losses of the first `horizon` steps, stopping early (without throwing) at
/// the first non-finite loss.
std::vector<double> trace_losses(const OptimizerParams& params, const OptimizeeTask& task,
                                 const Vector& theta0, std::size_t horizon);

struct ValueAndGrad {
  UnrollResult unroll;
  Vector grad;  // over φ
};

/// ĝ_T and its reverse-mode gradient over φ. `mode` must be an inner mode.
ValueAndGrad value_and_meta_grad(const OptimizerParams& params, const OptimizeeTask& task,
                                 const Vector& theta0, std::size_t horizon, GradMode mode);

Vector meta_grad(const OptimizerParams& params, const OptimizeeTask& task, const Vector& theta0,
                 std::size_t horizon, GradMode mode = GradMode::full());

/// Ĝ_T(φ) = ĝ_T(φ − α∇ĝ_T(φ)), both unrolls from the same θ0.
double maml_objective(const OptimizerParams& params, const OptimizeeTask& task,
                      const Vector& theta0, std::size_t horizon, double alpha,
                      GradMode inner = GradMode::full());

struct MamlValueAndGrad {
  double value = 0.0;     // Ĝ_T(φ)
  UnrollResult base;      // unroll at φ (its θ_T feeds Algorithm 1's continuation)
  Vector grad;
};

/// `mode` is FirstOrderMeta or FdHvpMeta; `inner` selects how ∇ĝ_T is formed.
/// At α = 0 the result is exactly value_and_meta_grad(φ, inner).
MamlValueAndGrad maml_value_and_grad(const OptimizerParams& params, const OptimizeeTask& task,
                                     const Vector& theta0, std::size_t horizon, double alpha,
                                     GradMode mode, GradMode inner = GradMode::full());

Vector maml_grad(const OptimizerParams& params, const OptimizeeTask& task, const Vector& theta0,
                 std::size_t horizon, double alpha, GradMode mode,
                 GradMode inner = GradMode::full());

/// Upper bound on dim * |φ| accepted by jacobian_recursive.
inline constexpr std::size_t kJacobianMaxEntries = 100000;

/// ∇_φ θ_T (dim x |φ|) by forward recursion over the trajectory:
///   ∇_φθ_{t+1} = (I + ∇₁m ∇²l̂(θ_t)) ∇_φθ_t + ∇₂m
/// where ∇₁m also carries the recurrent and momentum state of the cell.
Matrix jacobian_recursive(const OptimizerParams& params, const OptimizeeTask& task,
                          const Vector& theta0, std::size_t horizon);

}  // namespace ml2o
