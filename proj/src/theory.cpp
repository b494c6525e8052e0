#include "ml2o/theory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "ml2o/unroll.hpp"

namespace ml2o {

double power_iteration(const Matrix& sym, std::size_t max_iters, double tol) {
  if (sym.rows() != sym.cols()) throw DimensionError("power_iteration: matrix is not square");
  const std::size_t n = sym.rows();
  if (n == 0) return 0.0;
  // Fixed pseudo-random start so the result is reproducible and almost surely
  // not orthogonal to the leading eigenvector.
  RngStream start_rng(0x5eed5eedULL);
  Vector v = gauss_sample(start_rng, n, 0.0, 1.0);
  double nv = norm2(v);
  v *= 1.0 / nv;
  double lambda = 0.0;
  int settled = 0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    Vector w = matvec(sym, v);
    const double rq = dot(v, w);
    const double nw = norm2(w);
    if (nw == 0.0) return 0.0;
    w *= 1.0 / nw;
    v = std::move(w);
    if (std::abs(rq - lambda) <= tol * std::abs(rq)) {
      if (++settled >= 3) return rq;
    } else {
      settled = 0;
    }
    lambda = rq;
  }
  return dot(v, matvec(sym, v));
}

double spectral_norm(const Matrix& m) {
  return std::sqrt(std::max(0.0, power_iteration(gram(m))));
}

namespace {

Vector unit_direction(RngStream& rng, std::size_t n) {
  Vector v = gauss_sample(rng, n, 0.0, 1.0);
  const double nv = norm2(v);
  if (nv == 0.0) {
    v[0] = 1.0;
    return v;
  }
  v *= 1.0 / nv;
  return v;
}

Vector ball_sample(RngStream& rng, std::size_t n, double radius) {
  Vector v = unit_direction(rng, n);
  const double r = radius * std::pow(rng.next_uniform(), 1.0 / static_cast<double>(n));
  v *= r;
  return v;
}

double log_add(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

GapReport measure_gaps(const OptimizeeTask& task1, const OptimizeeTask& task2,
                       double probe_radius, std::size_t n_probes, RngStream& rng) {
  if (task1.dim() != task2.dim()) throw DimensionError("measure_gaps: tasks differ in dimension");
  if (!(probe_radius >= 0.0)) throw ConfigError("measure_gaps: probe radius must be >= 0");
  GapReport report;
  report.n_probes = n_probes;
  report.radius = probe_radius;
  report.probes.reserve(n_probes);
  const std::size_t d = task1.dim();
  for (std::size_t i = 0; i < n_probes; ++i) {
    GapProbe probe;
    probe.theta = ball_sample(rng, d, probe_radius);
    probe.direction = unit_direction(rng, d);
    probe.grad_gap = norm2(task1.grad(probe.theta) - task2.grad(probe.theta));
    probe.hess_gap = norm2(task1.hvp(probe.theta, probe.direction) -
                           task2.hvp(probe.theta, probe.direction));
    report.delta12 = std::max(report.delta12, probe.grad_gap);
    report.delta12_tilde = std::max(report.delta12_tilde, probe.hess_gap);
    report.probes.push_back(std::move(probe));
  }
  return report;
}

double estimate_input_lipschitz(const OptimizerParams& params, std::size_t n_pairs,
                                RngStream& rng) {
  const std::size_t f = params.feature_dim();
  double best = 0.0;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    Vector z1 = gauss_sample(rng, f, 0.0, 1.0);
    // Alternate local and distant pairs.
    const double spread = (i % 2 == 0) ? 1e-3 : 1.0;
    Vector z2 = z1 + gauss_sample(rng, f, 0.0, spread);
    const double dz = norm2(z1 - z2);
    if (dz == 0.0) continue;
    const double du =
        std::abs(fresh_state_update(params, z1.span()) - fresh_state_update(params, z2.span()));
    best = std::max(best, du / dz);
  }
  return best;
}

LipschitzProfile quadratic_lipschitz_profile(const OptimizeeTask& task, double domain_radius,
                                             const OptimizerParams& params, RngStream& rng,
                                             std::size_t n_pairs) {
  if (task.kind() != TaskKind::Quadratic) {
    throw Error("quadratic_lipschitz_profile: task is not quadratic");
  }
  if (!(domain_radius >= 0.0)) throw ConfigError("lipschitz profile: radius must be >= 0");
  LipschitzProfile p;
  p.radius = domain_radius;
  p.L = power_iteration(task.gram());
  p.rho = 0.0;
  p.M = p.L * domain_radius + norm2(task.atb());
  p.M_m1 = estimate_input_lipschitz(params, n_pairs, rng);
  p.Q = 1.0 + p.M_m1 * p.L;
  return p;
}

GrowthReport gradient_gap_growth(const OptimizerParams& params, const TaskDistribution& dist1,
                                 const TaskDistribution& dist2, const GrowthConfig& cfg,
                                 RngStream& rng) {
  if (cfg.horizons.empty()) throw ConfigError("gradient_gap_growth: horizon list is empty");
  for (std::size_t i = 0; i < cfg.horizons.size(); ++i) {
    if (cfg.horizons[i] == 0) throw ConfigError("gradient_gap_growth: horizons must be >= 1");
    if (i > 0 && cfg.horizons[i] <= cfg.horizons[i - 1]) {
      throw ConfigError("gradient_gap_growth: horizons must be strictly ascending");
    }
  }
  if (cfg.n_pairs == 0 || cfg.n_probes == 0) {
    throw ConfigError("gradient_gap_growth: n_pairs and n_probes must be >= 1");
  }
  dist1.validate();
  dist2.validate();
  if (dist1.task_dim() != dist2.task_dim()) {
    throw DimensionError("gradient_gap_growth: distributions differ in dimension");
  }

  const std::size_t nh = cfg.horizons.size();
  GrowthReport report;
  report.per_pair.assign(cfg.n_pairs, std::vector<double>(nh, 0.0));
  report.pair_monotone.assign(cfg.n_pairs, false);

  RngStream lip_rng = rng.split("input-lipschitz");
  const double m_m1 = estimate_input_lipschitz(params, 256, lip_rng);

  std::vector<double> log_ref(nh, -INFINITY);
  std::size_t monotone = 0;
  for (std::size_t p = 0; p < cfg.n_pairs; ++p) {
    const RngStream pair_rng = rng.split(static_cast<std::uint64_t>(p));
    RngStream r1 = pair_rng.split("task1");
    RngStream r2 = pair_rng.split("task2");
    RngStream rt = pair_rng.split("theta0");
    RngStream rg = pair_rng.split("gaps");
    const OptimizeeTask t1 = sample_task(dist1, r1);
    const OptimizeeTask t2 = sample_task(dist2, r2);
    const Vector theta0 = sample_theta0(dist1, rt);

    std::vector<OptimizerParams> probes{params};
    for (std::size_t q = 1; q < cfg.n_probes; ++q) {
      RngStream rq = pair_rng.split("probe").split(static_cast<std::uint64_t>(q));
      Vector values = params.values();
      for (double& x : values) x += cfg.probe_spread * (2.0 * rq.next_uniform() - 1.0);
      probes.push_back(params.with_values(std::move(values)));
    }
    for (std::size_t h = 0; h < nh; ++h) {
      double sum = 0.0;
      for (const auto& phi : probes) {
        const Vector g1 = meta_grad(phi, t1, theta0, cfg.horizons[h]);
        const Vector g2 = meta_grad(phi, t2, theta0, cfg.horizons[h]);
        sum += norm2(g1 - g2);
      }
      report.per_pair[p][h] = sum / static_cast<double>(probes.size());
    }
    bool mono = true;
    for (std::size_t h = 1; h < nh; ++h) {
      if (report.per_pair[p][h] < report.per_pair[p][h - 1]) mono = false;
    }
    report.pair_monotone[p] = mono;
    if (mono) ++monotone;

    const GapReport gaps = measure_gaps(t1, t2, cfg.gap_radius, cfg.gap_probes, rg);
    double L = 0.0;
    if (t1.kind() != TaskKind::Rosenbrock) {
      L = std::max(power_iteration(t1.gram()), power_iteration(t2.gram()));
    }
    const double q = 1.0 + m_m1 * L;
    report.Q += q;
    report.delta12 += gaps.delta12;
    report.delta12_tilde += gaps.delta12_tilde;
    const double lq = std::log(q);
    for (std::size_t h = 0; h < nh; ++h) {
      const double t = static_cast<double>(cfg.horizons[h]);
      const double a = gaps.delta12_tilde > 0.0
                           ? std::log(t) + (t - 1.0) * lq + std::log(gaps.delta12_tilde)
                           : -INFINITY;
      const double b = gaps.delta12 > 0.0 ? (2.0 * t - 1.0) * lq + std::log(gaps.delta12)
                                          : -INFINITY;
      log_ref[h] = log_add(log_ref[h], log_add(a, b));
    }
  }
  const double inv = 1.0 / static_cast<double>(cfg.n_pairs);
  report.Q *= inv;
  report.delta12 *= inv;
  report.delta12_tilde *= inv;
  report.monotone_fraction = static_cast<double>(monotone) * inv;

  report.rows.resize(nh);
  for (std::size_t h = 0; h < nh; ++h) {
    double mean = 0.0;
    for (std::size_t p = 0; p < cfg.n_pairs; ++p) mean += report.per_pair[p][h];
    report.rows[h].horizon = cfg.horizons[h];
    report.rows[h].measured = mean * inv;
  }
  // Reference shape anchored at the first measured point.
  for (std::size_t h = 0; h < nh; ++h) {
    if (log_ref[0] == -INFINITY) {
      report.rows[h].reference = 0.0;
    } else {
      report.rows[h].reference = report.rows[0].measured * std::exp(log_ref[h] - log_ref[0]);
    }
  }
  return report;
}

nlohmann::json gap_report_to_json(const GapReport& report) {
  nlohmann::json doc;
  doc["delta12"] = report.delta12;
  doc["delta12_tilde"] = report.delta12_tilde;
  doc["n_probes"] = report.n_probes;
  doc["radius"] = report.radius;
  nlohmann::json probes = nlohmann::json::array();
  for (const auto& p : report.probes) {
    probes.push_back({{"theta", p.theta.values()},
                      {"direction", p.direction.values()},
                      {"grad_gap", p.grad_gap},
                      {"hess_gap", p.hess_gap}});
  }
  doc["probes"] = std::move(probes);
  return doc;
}

nlohmann::json profile_to_json(const LipschitzProfile& profile) {
  return {{"L", profile.L},       {"rho", profile.rho}, {"M", profile.M},
          {"M_m1", profile.M_m1}, {"Q", profile.Q},     {"radius", profile.radius}};
}

nlohmann::json growth_to_json(const GrowthReport& report) {
  nlohmann::json doc;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"T", r.horizon}, {"measured", r.measured}, {"reference", r.reference}});
  }
  doc["rows"] = std::move(rows);
  doc["per_pair"] = report.per_pair;
  doc["pair_monotone"] = report.pair_monotone;
  doc["monotone_fraction"] = report.monotone_fraction;
  doc["Q"] = report.Q;
  doc["delta12"] = report.delta12;
  doc["delta12_tilde"] = report.delta12_tilde;
  return doc;
}

void write_growth_csv(const GrowthReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "T,measured,reference\n" << std::setprecision(17);
  for (const auto& r : report.rows) {
    out << r.horizon << ',' << r.measured << ',' << r.reference << '\n';
  }
}

}  // namespace ml2o
