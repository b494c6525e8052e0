#include "ml2o/unroll.hpp"

#include <cmath>

#include "cell_kernel.hpp"

namespace ml2o {

void GradMode::validate() const {
  if (epsilon && !(*epsilon > 0.0)) throw Error("grad mode: epsilon must be positive");
  if (epsilon && kind != Kind::FdHvpMeta) throw Error("grad mode: epsilon only applies to fd_hvp");
}

std::string GradMode::name() const {
  switch (kind) {
    case Kind::FullSecondOrder:
      return "full";
    case Kind::DetachedInput:
      return "detached";
    case Kind::FirstOrderMeta:
      return "first_order";
    case Kind::FdHvpMeta:
      return "fd_hvp";
  }
  return "?";
}

namespace {

// Activations of one unroll step, kept for the reverse sweep.
struct StepRecord {
  Vector theta;
  Vector grad;
  Vector m_new;
  Vector v_new;
  std::vector<double> x;       // d x input_dim
  std::vector<double> gates;   // d x 4H (activated)
  std::vector<double> c_prev;  // d x H
  std::vector<double> tanh_c;  // d x H
  std::vector<double> h_new;   // d x H
};

void check_shapes(const OptimizerParams& params, const OptimizeeTask& task, const Vector& theta0) {
  if (params.feature_dim() != kFeatureDim) {
    throw DimensionError("unroll: optimizer feature_dim must be " + std::to_string(kFeatureDim));
  }
  if (theta0.size() != task.dim()) {
    throw DimensionError("unroll: theta0 length " + std::to_string(theta0.size()) +
                         " does not match task dim " + std::to_string(task.dim()));
  }
}

// Forward unroll; records activations into `tape` when given.
UnrollResult run_forward(const OptimizerParams& params, const OptimizeeTask& task,
                         const Vector& theta0, std::size_t horizon,
                         std::vector<StepRecord>* tape) {
  check_shapes(params, task, theta0);
  const std::size_t d = theta0.size();
  const std::size_t hidden = params.hidden();
  const std::size_t in = params.input_dim();

  UnrollResult result;
  result.loss_curve.reserve(horizon + 1);
  UnrollState state = UnrollState::fresh(theta0, hidden);
  if (tape) tape->reserve(horizon);

  std::vector<double> x(in), gates(4 * hidden), c_new(hidden), tanh_c(hidden), h_new(hidden);
  for (std::size_t t = 0; t < horizon; ++t) {
    LossAndGrad lg = evaluate_task(task, state.theta);
    if (!std::isfinite(lg.loss)) {
      throw NonFiniteError("unroll: non-finite loss at step " + std::to_string(t), t);
    }
    result.loss_curve.push_back(lg.loss);

    StepRecord* rec = nullptr;
    if (tape) {
      tape->emplace_back();
      rec = &tape->back();
      rec->theta = state.theta;
      rec->m_new = Vector(d);
      rec->v_new = Vector(d);
      rec->x.resize(d * in);
      rec->gates.resize(d * 4 * hidden);
      rec->c_prev.resize(d * hidden);
      rec->tanh_c.resize(d * hidden);
      rec->h_new.resize(d * hidden);
    }

    for (std::size_t i = 0; i < d; ++i) {
      const double g = lg.grad[i];
      const double m = kMomentumBeta1 * state.momentum[i] + (1.0 - kMomentumBeta1) * g;
      const double v = kMomentumBeta2 * state.second_moment[i] + (1.0 - kMomentumBeta2) * g * g;
      state.momentum[i] = m;
      state.second_moment[i] = v;
      x[0] = g;
      x[1] = detail::normalized_momentum(m, v);
      auto h_row = state.hidden.row(i);
      std::copy(h_row.begin(), h_row.end(), x.begin() + kFeatureDim);
      auto c_row = state.cell.row(i);
      if (rec) {
        rec->m_new[i] = m;
        rec->v_new[i] = v;
        std::copy(x.begin(), x.end(), rec->x.begin() + i * in);
        std::copy(c_row.begin(), c_row.end(), rec->c_prev.begin() + i * hidden);
      }
      detail::cell_forward(params, x.data(), c_row.data(), gates.data(), c_new.data(),
                           tanh_c.data(), h_new.data());
      std::copy(c_new.begin(), c_new.end(), c_row.begin());
      std::copy(h_new.begin(), h_new.end(), h_row.begin());
      state.theta[i] += detail::project_output(params, h_new.data());
      if (rec) {
        std::copy(gates.begin(), gates.end(), rec->gates.begin() + i * 4 * hidden);
        std::copy(tanh_c.begin(), tanh_c.end(), rec->tanh_c.begin() + i * hidden);
        std::copy(h_new.begin(), h_new.end(), rec->h_new.begin() + i * hidden);
      }
    }
    if (rec) rec->grad = std::move(lg.grad);
    ++state.step;
  }

  const double final_loss = task.loss(state.theta);
  if (!std::isfinite(final_loss)) {
    throw NonFiniteError("unroll: non-finite loss at step " + std::to_string(horizon), horizon);
  }
  result.loss_curve.push_back(final_loss);
  result.final_loss = final_loss;
  result.theta_final = state.theta;
  result.final_state = std::move(state);
  return result;
}

// Reverse sweep over the recorded trajectory. Returns ∇_φ ĝ_T.
Vector run_backward(const OptimizerParams& params, const OptimizeeTask& task,
                    const std::vector<StepRecord>& tape, const Vector& theta_final,
                    bool second_order) {
  const std::size_t d = theta_final.size();
  const std::size_t hidden = params.hidden();
  const std::size_t in = params.input_dim();
  const double scale = params.output_scale();
  const double* w = params.gate_weights().data();
  const double* w_out = params.out_weights().data();

  Vector phi_bar(params.size());
  double* w_bar = phi_bar.data();
  double* bias_bar = phi_bar.data() + params.gate_bias_offset();
  double* w_out_bar = phi_bar.data() + params.out_weights_offset();
  double& b_out_bar = phi_bar[params.out_bias_offset()];

  Vector theta_bar = task.grad(theta_final);
  Matrix h_bar(d, hidden), c_bar(d, hidden);
  Matrix h_bar_prev(d, hidden), c_bar_prev(d, hidden);
  Vector m_bar(d), v_bar(d);
  Vector g_bar(d), n_bar(d);
  std::vector<double> dh(hidden), dpre(4 * hidden);

  for (std::size_t t = tape.size(); t-- > 0;) {
    const StepRecord& rec = tape[t];
    for (std::size_t i = 0; i < d; ++i) {
      const double u_bar = theta_bar[i];
      const double* gates = rec.gates.data() + i * 4 * hidden;
      const double* ig = gates;
      const double* fg = gates + hidden;
      const double* og = gates + 2 * hidden;
      const double* cg = gates + 3 * hidden;
      const double* c_prev = rec.c_prev.data() + i * hidden;
      const double* tc = rec.tanh_c.data() + i * hidden;
      const double* h_new = rec.h_new.data() + i * hidden;
      const double* x = rec.x.data() + i * in;

      b_out_bar += scale * u_bar;
      for (std::size_t k = 0; k < hidden; ++k) {
        w_out_bar[k] += scale * u_bar * h_new[k];
        dh[k] = h_bar(i, k) + scale * u_bar * w_out[k];
      }
      for (std::size_t k = 0; k < hidden; ++k) {
        const double d_og = dh[k] * tc[k];
        const double dc = c_bar(i, k) + dh[k] * og[k] * (1.0 - tc[k] * tc[k]);
        const double d_fg = dc * c_prev[k];
        const double d_ig = dc * cg[k];
        const double d_cg = dc * ig[k];
        c_bar_prev(i, k) = dc * fg[k];
        dpre[k] = d_ig * ig[k] * (1.0 - ig[k]);
        dpre[hidden + k] = d_fg * fg[k] * (1.0 - fg[k]);
        dpre[2 * hidden + k] = d_og * og[k] * (1.0 - og[k]);
        dpre[3 * hidden + k] = d_cg * (1.0 - cg[k] * cg[k]);
      }
      auto hb = h_bar_prev.row(i);
      std::fill(hb.begin(), hb.end(), 0.0);
      double xb0 = 0.0;
      double xb1 = 0.0;
      for (std::size_t r = 0; r < 4 * hidden; ++r) {
        const double dp = dpre[r];
        if (dp == 0.0) continue;
        bias_bar[r] += dp;
        double* wb_row = w_bar + r * in;
        const double* w_row = w + r * in;
        for (std::size_t c = 0; c < in; ++c) wb_row[c] += dp * x[c];
        xb0 += w_row[0] * dp;
        xb1 += w_row[1] * dp;
        for (std::size_t k = 0; k < hidden; ++k) hb[k] += w_row[kFeatureDim + k] * dp;
      }
      g_bar[i] = xb0;
      n_bar[i] = xb1;
    }
    std::swap(h_bar, h_bar_prev);
    std::swap(c_bar, c_bar_prev);

    if (second_order) {
      // features → accumulators → raw gradient → θ_t through the Hessian
      for (std::size_t i = 0; i < d; ++i) {
        const double m = rec.m_new[i];
        const double v = rec.v_new[i];
        const double root = std::sqrt(v);
        const double denom = root + kMomentumEps;
        const double mb = m_bar[i] + n_bar[i] / denom;
        double vb = v_bar[i];
        if (root > 0.0) vb += n_bar[i] * (-m / (denom * denom)) * (0.5 / root);
        g_bar[i] += (1.0 - kMomentumBeta1) * mb + (1.0 - kMomentumBeta2) * 2.0 * rec.grad[i] * vb;
        m_bar[i] = kMomentumBeta1 * mb;
        v_bar[i] = kMomentumBeta2 * vb;
      }
      theta_bar += task_hvp(task, rec.theta, g_bar);
    }
  }

  for (std::size_t j = 0; j < phi_bar.size(); ++j) {
    if (!std::isfinite(phi_bar[j])) {
      throw NonFiniteError("meta-gradient: non-finite entry in block '" + params.block_name(j) +
                               "' (index " + std::to_string(j) + ")",
                           tape.size());
    }
  }
  return phi_bar;
}

}  // namespace

UnrollResult unroll(const OptimizerParams& params, const OptimizeeTask& task, const Vector& theta0,
                    std::size_t horizon) {
  return run_forward(params, task, theta0, horizon, nullptr);
}

std::vector<double> trace_losses(const OptimizerParams& params, const OptimizeeTask& task,
                                 const Vector& theta0, std::size_t horizon) {
  check_shapes(params, task, theta0);
  std::vector<double> curve;
  curve.reserve(horizon + 1);
  UnrollState state = UnrollState::fresh(theta0, params.hidden());
  for (std::size_t t = 0;; ++t) {
    LossAndGrad lg = evaluate_task(task, state.theta);
    if (!std::isfinite(lg.loss)) break;
    curve.push_back(lg.loss);
    if (t == horizon) break;
    StepOutput next = step(params, compute_features(lg.grad, state), state);
    state = std::move(next.next);
  }
  return curve;
}

ValueAndGrad value_and_meta_grad(const OptimizerParams& params, const OptimizeeTask& task,
                                 const Vector& theta0, std::size_t horizon, GradMode mode) {
  mode.validate();
  if (!mode.is_inner()) {
    throw Error("meta_grad: mode '" + mode.name() + "' applies to maml_grad only");
  }
  std::vector<StepRecord> tape;
  ValueAndGrad out;
  out.unroll = run_forward(params, task, theta0, horizon, &tape);
  out.grad = run_backward(params, task, tape, out.unroll.theta_final,
                          mode.kind == GradMode::Kind::FullSecondOrder);
  return out;
}

Vector meta_grad(const OptimizerParams& params, const OptimizeeTask& task, const Vector& theta0,
                 std::size_t horizon, GradMode mode) {
  if (horizon < 1) throw Error("meta_grad: horizon must be at least 1");
  return value_and_meta_grad(params, task, theta0, horizon, mode).grad;
}

double maml_objective(const OptimizerParams& params, const OptimizeeTask& task,
                      const Vector& theta0, std::size_t horizon, double alpha, GradMode inner) {
  if (!(alpha >= 0.0)) throw Error("maml_objective: alpha must be nonnegative");
  if (alpha == 0.0) return unroll(params, task, theta0, horizon).final_loss;
  Vector adapted = params.values();
  axpy(-alpha, meta_grad(params, task, theta0, horizon, inner), adapted);
  return unroll(params.with_values(std::move(adapted)), task, theta0, horizon).final_loss;
}

MamlValueAndGrad maml_value_and_grad(const OptimizerParams& params, const OptimizeeTask& task,
                                     const Vector& theta0, std::size_t horizon, double alpha,
                                     GradMode mode, GradMode inner) {
  mode.validate();
  inner.validate();
  if (mode.is_inner()) {
    throw Error("maml_grad: mode must be first_order or fd_hvp, got '" + mode.name() + "'");
  }
  if (!inner.is_inner()) throw Error("maml_grad: inner mode must be full or detached");
  if (!(alpha >= 0.0)) throw Error("maml_grad: alpha must be nonnegative");
  if (horizon < 1) throw Error("maml_grad: horizon must be at least 1");

  ValueAndGrad base = value_and_meta_grad(params, task, theta0, horizon, inner);
  MamlValueAndGrad out;
  if (alpha == 0.0) {
    out.value = base.unroll.final_loss;
    out.grad = std::move(base.grad);
    out.base = std::move(base.unroll);
    return out;
  }

  Vector adapted_values = params.values();
  axpy(-alpha, base.grad, adapted_values);
  ValueAndGrad adapted = value_and_meta_grad(params.with_values(std::move(adapted_values)), task,
                                             theta0, horizon, inner);
  out.value = adapted.unroll.final_loss;
  out.base = std::move(base.unroll);
  Vector v = std::move(adapted.grad);

  if (mode.kind == GradMode::Kind::FirstOrderMeta) {
    out.grad = std::move(v);
    return out;
  }

  // (I − α∇²ĝ_T(φ)) v with a symmetric difference along v/‖v‖
  const double v_norm = norm2(v);
  out.grad = v;
  if (v_norm == 0.0) return out;
  const double eps = mode.epsilon.value_or(1e-4 * (1.0 + norm_inf(params.values())));
  Vector plus = params.values();
  Vector minus = params.values();
  axpy(eps / v_norm, v, plus);
  axpy(-eps / v_norm, v, minus);
  const Vector g_plus =
      meta_grad(params.with_values(std::move(plus)), task, theta0, horizon, inner);
  const Vector g_minus =
      meta_grad(params.with_values(std::move(minus)), task, theta0, horizon, inner);
  const double factor = alpha * v_norm / (2.0 * eps);
  for (std::size_t j = 0; j < out.grad.size(); ++j) {
    out.grad[j] -= factor * (g_plus[j] - g_minus[j]);
  }
  return out;
}

Vector maml_grad(const OptimizerParams& params, const OptimizeeTask& task, const Vector& theta0,
                 std::size_t horizon, double alpha, GradMode mode, GradMode inner) {
  return maml_value_and_grad(params, task, theta0, horizon, alpha, mode, inner).grad;
}

// ---------------------------------------------------------------------------
// forward-mode recursion for ∇_φ θ_T

Matrix jacobian_recursive(const OptimizerParams& params, const OptimizeeTask& task,
                          const Vector& theta0, std::size_t horizon) {
  check_shapes(params, task, theta0);
  const std::size_t d = theta0.size();
  const std::size_t np = params.size();
  if (d * np > kJacobianMaxEntries) {
    throw Error("jacobian_recursive: instance too large (" + std::to_string(d) + " x " +
                std::to_string(np) + " exceeds " + std::to_string(kJacobianMaxEntries) +
                " entries)");
  }
  const std::size_t hidden = params.hidden();
  const std::size_t in = params.input_dim();
  const double scale = params.output_scale();
  const double* w = params.gate_weights().data();
  const double* w_out = params.out_weights().data();

  // tangents of the trajectory state with respect to every φ entry
  Matrix d_theta(d, np);           // ∇_φ θ_t, zero at t = 0
  Matrix d_m(d, np), d_v(d, np);   // accumulators
  Matrix d_h(d * hidden, np), d_c(d * hidden, np);
  UnrollState state = UnrollState::fresh(theta0, hidden);

  std::vector<double> x(in), gates(4 * hidden), c_new(hidden), tanh_c(hidden), h_new(hidden);
  Matrix d_x(in, np), d_pre(4 * hidden, np);
  Matrix d_g(d, np);
  Vector column(d);

  for (std::size_t t = 0; t < horizon; ++t) {
    const LossAndGrad lg = evaluate_task(task, state.theta);
    if (!std::isfinite(lg.loss)) {
      throw NonFiniteError("jacobian_recursive: non-finite loss at step " + std::to_string(t), t);
    }
    // ∇²l̂(θ_t) ∇_φθ_t, column by column
    for (std::size_t p = 0; p < np; ++p) {
      for (std::size_t i = 0; i < d; ++i) column[i] = d_theta(i, p);
      const Vector hv = task_hvp(task, state.theta, column);
      for (std::size_t i = 0; i < d; ++i) d_g(i, p) = hv[i];
    }

    Matrix next_h(d * hidden, np), next_c(d * hidden, np);
    Matrix update_tangent(d, np);
    for (std::size_t i = 0; i < d; ++i) {
      const double g = lg.grad[i];
      const double m = kMomentumBeta1 * state.momentum[i] + (1.0 - kMomentumBeta1) * g;
      const double v = kMomentumBeta2 * state.second_moment[i] + (1.0 - kMomentumBeta2) * g * g;
      const double root = std::sqrt(v);
      const double denom = root + kMomentumEps;
      for (std::size_t p = 0; p < np; ++p) {
        const double dm = kMomentumBeta1 * d_m(i, p) + (1.0 - kMomentumBeta1) * d_g(i, p);
        const double dv = kMomentumBeta2 * d_v(i, p) + (1.0 - kMomentumBeta2) * 2.0 * g * d_g(i, p);
        d_m(i, p) = dm;
        d_v(i, p) = dv;
        double dn = dm / denom;
        if (root > 0.0) dn -= m / (denom * denom) * dv / (2.0 * root);
        d_x(0, p) = d_g(i, p);
        d_x(1, p) = dn;
        for (std::size_t k = 0; k < hidden; ++k) d_x(kFeatureDim + k, p) = d_h(i * hidden + k, p);
      }
      state.momentum[i] = m;
      state.second_moment[i] = v;

      x[0] = g;
      x[1] = detail::normalized_momentum(m, v);
      auto h_row = state.hidden.row(i);
      auto c_row = state.cell.row(i);
      std::copy(h_row.begin(), h_row.end(), x.begin() + kFeatureDim);
      const std::vector<double> c_prev(c_row.begin(), c_row.end());
      detail::cell_forward(params, x.data(), c_prev.data(), gates.data(), c_new.data(),
                           tanh_c.data(), h_new.data());

      // pre-activation tangents: W · d_x (input path) + direct dependence on W, bias
      for (std::size_t r = 0; r < 4 * hidden; ++r) {
        auto out_row = d_pre.row(r);
        std::fill(out_row.begin(), out_row.end(), 0.0);
        for (std::size_t c = 0; c < in; ++c) {
          const double wrc = w[r * in + c];
          auto src = d_x.row(c);
          for (std::size_t p = 0; p < np; ++p) out_row[p] += wrc * src[p];
        }
        for (std::size_t c = 0; c < in; ++c) out_row[r * in + c] += x[c];
        out_row[params.gate_bias_offset() + r] += 1.0;
      }

      for (std::size_t k = 0; k < hidden; ++k) {
        const double ig = gates[k];
        const double fg = gates[hidden + k];
        const double og = gates[2 * hidden + k];
        const double cg = gates[3 * hidden + k];
        const double tc = tanh_c[k];
        auto dc_out = next_c.row(i * hidden + k);
        auto dh_out = next_h.row(i * hidden + k);
        auto dc_in = d_c.row(i * hidden + k);
        for (std::size_t p = 0; p < np; ++p) {
          const double dig = ig * (1.0 - ig) * d_pre(k, p);
          const double dfg = fg * (1.0 - fg) * d_pre(hidden + k, p);
          const double dog = og * (1.0 - og) * d_pre(2 * hidden + k, p);
          const double dcg = (1.0 - cg * cg) * d_pre(3 * hidden + k, p);
          const double dc = fg * dc_in[p] + c_prev[k] * dfg + ig * dcg + cg * dig;
          dc_out[p] = dc;
          dh_out[p] = og * (1.0 - tc * tc) * dc + tc * dog;
        }
      }

      // ∇₁m-weighted state tangents plus the direct ∇₂m entries of the projection
      auto du = update_tangent.row(i);
      for (std::size_t k = 0; k < hidden; ++k) {
        auto dh_out = next_h.row(i * hidden + k);
        for (std::size_t p = 0; p < np; ++p) du[p] += scale * w_out[k] * dh_out[p];
        du[params.out_weights_offset() + k] += scale * h_new[k];
      }
      du[params.out_bias_offset()] += scale;

      std::copy(c_new.begin(), c_new.end(), c_row.begin());
      std::copy(h_new.begin(), h_new.end(), h_row.begin());
      state.theta[i] += detail::project_output(params, h_new.data());
    }
    for (std::size_t i = 0; i < d; ++i) {
      auto dst = d_theta.row(i);
      auto src = update_tangent.row(i);
      for (std::size_t p = 0; p < np; ++p) dst[p] += src[p];
    }
    d_h = std::move(next_h);
    d_c = std::move(next_c);
    ++state.step;
  }
  return d_theta;
}

}  // namespace ml2o
