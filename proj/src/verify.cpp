#include "ml2o/verify.hpp"

#include <algorithm>
#include <cmath>

#include "ml2o/meta_train.hpp"
#include "ml2o/unroll.hpp"

namespace ml2o {

namespace {

constexpr double kFdStep = 1e-5;

OptimizeeTask verify_quadratic(std::size_t dim, RngStream& rng) {
  return sample_task(TaskDistribution::normal_sigma(ProblemFamily::Quadratic, 1.0, dim), rng);
}

Vector fd_meta_grad(const OptimizerParams& params, const OptimizeeTask& task, const Vector& theta0,
                    std::size_t horizon) {
  Vector out(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    Vector plus = params.values();
    Vector minus = params.values();
    plus[j] += kFdStep;
    minus[j] -= kFdStep;
    const double fp = unroll(params.with_values(std::move(plus)), task, theta0, horizon).final_loss;
    const double fm =
        unroll(params.with_values(std::move(minus)), task, theta0, horizon).final_loss;
    out[j] = (fp - fm) / (2.0 * kFdStep);
  }
  return out;
}

}  // namespace

OptimizerParams random_verify_params(std::size_t hidden, RngStream& rng) {
  OptimizerParams p(hidden, kFeatureDim, 0.1);
  for (double& x : p.values()) x = 0.5 * (2.0 * rng.next_uniform() - 1.0);
  return p;
}

double max_rel_error(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("max_rel_error: sizes differ");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  const double ref = norm_inf(b);
  return ref > 0.0 ? diff / ref : diff;
}

nlohmann::json instance_to_json(const OptimizerParams& params, const OptimizeeTask& task,
                                const Vector& theta0, std::size_t horizon) {
  return {{"hidden", params.hidden()},
          {"feature_dim", params.feature_dim()},
          {"output_scale", params.output_scale()},
          {"phi", params.values().values()},
          {"task", task_to_json(task)},
          {"theta0", theta0.values()},
          {"horizon", horizon}};
}

VerifyOutcome verify_grad(const VerifyConfig& cfg) {
  VerifyOutcome out;
  out.tolerance = cfg.grad_tolerance;
  const RngStream root = RngStream(cfg.seed).split("verify-grad");
  nlohmann::json errors = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.grad_instances; ++i) {
    RngStream rng = root.split(static_cast<std::uint64_t>(i));
    const OptimizerParams params = random_verify_params(cfg.grad_hidden, rng);
    const OptimizeeTask task = verify_quadratic(cfg.grad_dim, rng);
    const Vector theta0 = gauss_sample(rng, cfg.grad_dim, 0.0, 1.0);
    const Vector analytic = meta_grad(params, task, theta0, cfg.grad_unroll, GradMode::full());
    const Vector numeric = fd_meta_grad(params, task, theta0, cfg.grad_unroll);
    const double err = max_rel_error(analytic, numeric);
    errors.push_back(err);
    if (i == 0 || err > out.max_error) {
      out.max_error = err;
      out.worst_case = instance_to_json(params, task, theta0, cfg.grad_unroll);
      out.worst_case["rel_error"] = err;
    }
  }
  out.passed = out.max_error <= out.tolerance;
  out.report = {{"suite", "grad"},         {"instances", cfg.grad_instances},
                {"dim", cfg.grad_dim},     {"unroll", cfg.grad_unroll},
                {"hidden", cfg.grad_hidden}, {"fd_step", kFdStep},
                {"rel_errors", errors},    {"max_rel_error", out.max_error},
                {"tolerance", out.tolerance}, {"passed", out.passed}};
  return out;
}

VerifyOutcome verify_jacobian(const VerifyConfig& cfg) {
  VerifyOutcome out;
  out.tolerance = cfg.jacobian_tolerance;
  const RngStream root = RngStream(cfg.seed).split("verify-jacobian");
  nlohmann::json errors = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.jacobian_instances; ++i) {
    RngStream rng = root.split(static_cast<std::uint64_t>(i));
    const OptimizerParams params = random_verify_params(cfg.jacobian_hidden, rng);
    const OptimizeeTask task = verify_quadratic(cfg.jacobian_dim, rng);
    const Vector theta0 = gauss_sample(rng, cfg.jacobian_dim, 0.0, 1.0);
    const Matrix jac = jacobian_recursive(params, task, theta0, cfg.jacobian_unroll);
    const UnrollResult run = unroll(params, task, theta0, cfg.jacobian_unroll);
    const Vector chained = matvec_transposed(jac, task.grad(run.theta_final));
    const Vector reverse = meta_grad(params, task, theta0, cfg.jacobian_unroll, GradMode::full());
    const double err = max_rel_error(chained, reverse);
    errors.push_back(err);
    if (i == 0 || err > out.max_error) {
      out.max_error = err;
      out.worst_case = instance_to_json(params, task, theta0, cfg.jacobian_unroll);
      out.worst_case["rel_error"] = err;
    }
  }
  out.passed = out.max_error <= out.tolerance;
  out.report = {{"suite", "jacobian"},
                {"instances", cfg.jacobian_instances},
                {"dim", cfg.jacobian_dim},
                {"unroll", cfg.jacobian_unroll},
                {"hidden", cfg.jacobian_hidden},
                {"rel_errors", errors},
                {"max_rel_error", out.max_error},
                {"tolerance", out.tolerance},
                {"passed", out.passed}};
  return out;
}

VerifyOutcome verify_gaps(const ExperimentConfig& cfg) {
  const VerifyConfig& v = cfg.verify;
  const std::size_t dim = cfg.eval.train_dist.dim;
  const RngStream root = RngStream(v.seed).split("verify-gaps");
  RngStream r1 = root.split("task1");
  RngStream r2 = root.split("task2");
  RngStream probe_rng = root.split("probes");
  RngStream lip_rng = root.split("lipschitz");
  const OptimizeeTask t1 =
      sample_task(TaskDistribution::train_mixture(ProblemFamily::Quadratic, dim), r1);
  const OptimizeeTask t2 =
      v.gap_identical
          ? t1
          : sample_task(TaskDistribution::normal_sigma(ProblemFamily::Quadratic, v.gap_sigma, dim),
                        r2);
  const GapReport gaps = measure_gaps(t1, t2, v.gap_radius, v.gap_probes, probe_rng);

  // Closed form: (G₁ − G₂)θ − (A₁ᵀb₁ − A₂ᵀb₂).
  Matrix dg(dim, dim);
  for (std::size_t k = 0; k < dg.flat().size(); ++k) {
    dg.flat()[k] = t1.gram().flat()[k] - t2.gram().flat()[k];
  }
  const Vector datb = t1.atb() - t2.atb();
  double worst_probe = 0.0;
  for (const auto& p : gaps.probes) {
    const double closed = norm2(matvec(dg, p.theta) - datb);
    const double scale = std::max(1.0, closed);
    worst_probe = std::max(worst_probe, std::abs(closed - p.grad_gap) / scale);
  }
  const double gram_gap = spectral_norm(dg);
  const double grad_bound = gram_gap * v.gap_radius + norm2(datb);
  const double slack = 1e-12 * std::max(1.0, grad_bound);

  const OptimizerParams params = initial_params(cfg.eval.train);
  const LipschitzProfile profile = quadratic_lipschitz_profile(t1, v.gap_radius, params, lip_rng);

  VerifyOutcome out;
  out.tolerance = 1e-12;
  out.max_error = worst_probe;
  const bool within_grad_bound = gaps.delta12 <= grad_bound + slack;
  const bool within_hess_bound = gaps.delta12_tilde <= gram_gap * (1.0 + 1e-9) + slack;
  out.passed = worst_probe <= out.tolerance && within_grad_bound && within_hess_bound;
  out.report = gap_report_to_json(gaps);
  out.report["suite"] = "gaps";
  out.report["identical_tasks"] = v.gap_identical;
  out.report["closed_form_max_rel_deviation"] = worst_probe;
  out.report["gram_gap_spectral_norm"] = gram_gap;
  out.report["delta12_bound"] = grad_bound;
  out.report["within_delta12_bound"] = within_grad_bound;
  out.report["within_delta12_tilde_bound"] = within_hess_bound;
  out.report["profile_task1"] = profile_to_json(profile);
  out.report["passed"] = out.passed;
  out.worst_case = {{"task1", task_to_json(t1)}, {"task2", task_to_json(t2)},
                    {"radius", v.gap_radius}, {"n_probes", v.gap_probes}, {"seed", v.seed}};
  return out;
}

VerifyOutcome verify_growth(const ExperimentConfig& cfg, GrowthReport* out_report) {
  const VerifyConfig& v = cfg.verify;
  const std::size_t dim = cfg.eval.train_dist.dim;
  GrowthConfig g;
  g.horizons = v.growth_horizons;
  g.n_pairs = v.growth_pairs;
  g.n_probes = v.growth_probes;
  g.gap_radius = v.gap_radius;
  g.gap_probes = v.gap_probes;
  RngStream rng = RngStream(v.seed).split("verify-growth");
  const OptimizerParams params = initial_params(cfg.eval.train);
  GrowthReport report = gradient_gap_growth(
      params, TaskDistribution::train_mixture(ProblemFamily::Quadratic, dim),
      TaskDistribution::normal_sigma(ProblemFamily::Quadratic, v.growth_sigma, dim), g, rng);
  VerifyOutcome out;
  out.tolerance = v.monotone_fraction;
  out.max_error = report.monotone_fraction;
  out.passed = report.monotone_fraction >= v.monotone_fraction;
  out.report = growth_to_json(report);
  out.report["suite"] = "growth";
  out.report["expected_monotone_fraction"] = v.monotone_fraction;
  out.report["meets_expectation"] = out.passed;
  if (out_report) *out_report = std::move(report);
  return out;
}

}  // namespace ml2o
