#include "ml2o/eval.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

namespace ml2o {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

std::uint64_t dist_key(const TaskDistribution& dist) {
  std::uint64_t key = hash_label(to_string(dist.kind));
  key ^= hash_label(to_string(dist.family)) * 0x9e3779b97f4a7c15ULL;
  if (dist.kind == DistKind::NormalSigma) key ^= std::bit_cast<std::uint64_t>(dist.sigma);
  return key;
}

std::string hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

}  // namespace

double clamped_log(double loss) {
  if (!(loss > 0.0)) return kLogFloor;
  return std::max(std::log(loss), kLogFloor);
}

RunRecord make_record(std::vector<double> curve, std::size_t horizon) {
  RunRecord rec;
  rec.truncated = curve.size() < horizon + 1;
  rec.min_log_loss = std::numeric_limits<double>::infinity();
  for (double l : curve) rec.min_log_loss = std::min(rec.min_log_loss, clamped_log(l));
  rec.final_log_loss =
      curve.empty() ? std::numeric_limits<double>::infinity() : clamped_log(curve.back());
  rec.curve = std::move(curve);
  return rec;
}

std::vector<RunRecord> evaluate(const OptimizerParams& params, const TaskDistribution& dist,
                                std::size_t horizon, std::size_t n_tasks, const RngStream& rng) {
  if (horizon < 1) throw ConfigError("evaluate: horizon must be >= 1");
  dist.validate();
  std::vector<RunRecord> out;
  out.reserve(n_tasks);
  const std::uint64_t params_hash = params.hash();
  for (std::size_t i = 0; i < n_tasks; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const RngStream sub = rng.split(static_cast<std::uint64_t>(i));
    RngStream task_rng = sub.split("task");
    RngStream theta_rng = sub.split("theta0");
    const OptimizeeTask task = sample_task(dist, task_rng);
    const Vector theta0 = sample_theta0(dist, theta_rng);
    RunRecord rec = make_record(trace_losses(params, task, theta0, horizon), horizon);
    rec.task_index = i;
    rec.task_hash = task.hash();
    rec.theta0_hash = hash_values(theta0.span());
    rec.task_seed = task.provenance_seed;
    rec.params_hash = params_hash;
    rec.source_hash = params_hash;
    rec.wall_ms = elapsed_ms(start);
    out.push_back(std::move(rec));
  }
  return out;
}

double student_t_975(std::size_t dof) {
  if (dof < 1) throw Error("student_t_975: need at least one degree of freedom");
  const boost::math::students_t dist(static_cast<double>(dof));
  return boost::math::quantile(dist, 0.975);
}

Interval confidence_interval(const std::vector<double>& samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw Error("confidence_interval: need at least 2 samples");
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double s = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, student_t_975(n - 1) * s / std::sqrt(static_cast<double>(n))};
}

const ComparisonCell& ComparisonTable::cell(const std::string& method,
                                            const std::string& scenario) const {
  for (const auto& c : cells) {
    if (c.method == method && c.scenario == scenario) return c;
  }
  throw Error("comparison table has no cell (" + method + ", " + scenario + ")");
}

void EvalConfig::validate() const {
  train.validate();
  train_dist.validate();
  adapt_dist.validate();
  test_dist.validate();
  if (!(adapt_alpha >= 0.0)) throw ConfigError("adapt alpha must be >= 0");
  if (adapt_unroll < 1) throw ConfigError("adapt unroll must be >= 1");
  if (horizon < 1) throw ConfigError("eval horizon must be >= 1");
  if (n_tasks < 1) throw ConfigError("eval n_tasks must be >= 1");
  if (n_seeds < 2) throw ConfigError("eval n_seeds must be >= 2");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

RngStream test_stream(std::uint64_t seed, const TaskDistribution& dist) {
  return RngStream(seed).split("test").split(dist_key(dist));
}

RngStream adapt_stream(std::uint64_t seed, const TaskDistribution& dist) {
  return RngStream(seed).split("adapt").split(dist_key(dist));
}

SeedModels train_seed_models(const EvalConfig& cfg, std::size_t seed_index, bool need_plain,
                             bool need_ml2o) {
  SeedModels models;
  models.seed = cfg.seed_for(seed_index);
  MetaConfig train = cfg.train;
  train.seed = models.seed;
  train.checkpoint_every = 0;
  models.init = initial_params(train);
  if (need_plain) {
    try {
      models.plain = train_plain_l2o(train, cfg.train_dist).params;
    } catch (const DivergenceError& e) {
      models.plain_error = e.what();
    }
  }
  if (need_ml2o) {
    try {
      models.ml2o = train_ml2o(train, cfg.train_dist).params;
    } catch (const DivergenceError& e) {
      models.ml2o_error = e.what();
    }
  }
  return models;
}

std::vector<RunRecord> run_seed(const EvalConfig& cfg, const SeedModels& models,
                                const std::vector<Scenario>& scenarios,
                                const std::vector<std::string>& methods) {
  std::vector<RunRecord> out;
  for (const auto& sc : scenarios) {
    const RngStream adapt_rng = adapt_stream(models.seed, sc.adapt_dist);
    const RngStream test_rng = test_stream(models.seed, sc.test_dist);
    for (const auto& method : methods) {
      const std::optional<OptimizerParams>* source = nullptr;
      bool adapted = true;
      if (method == "vanilla") {
        source = &models.init;
      } else if (method == "tl") {
        source = &models.plain;
      } else if (method == "dt") {
        source = &models.plain;
        adapted = false;
      } else if (method == "ml2o") {
        source = &models.ml2o;
      } else {
        throw ConfigError("unknown method '" + method + "'");
      }

      auto failed = [&](std::uint64_t source_hash) {
        for (std::size_t i = 0; i < cfg.n_tasks; ++i) {
          RunRecord rec;
          rec.diverged = true;
          rec.min_log_loss = kNaN;
          rec.final_log_loss = kNaN;
          rec.task_index = i;
          rec.source_hash = source_hash;
          rec.method = method;
          rec.scenario = sc.label;
          rec.sigma = sc.sigma;
          rec.seed = models.seed;
          out.push_back(std::move(rec));
        }
      };
      if (!source->has_value()) {
        failed(0);
        continue;
      }
      const OptimizerParams& start = **source;
      std::optional<OptimizerParams> evaluated;
      if (adapted) {
        try {
          evaluated = adapt(start, sc.adapt_dist, cfg.train.adapt_steps, cfg.adapt_alpha,
                            cfg.adapt_unroll, adapt_rng, cfg.adapt_options);
        } catch (const DivergenceError&) {
          failed(start.hash());
          continue;
        }
      } else {
        evaluated = start;
      }
      auto recs = evaluate(*evaluated, sc.test_dist, cfg.horizon, cfg.n_tasks, test_rng);
      for (auto& rec : recs) {
        rec.method = method;
        rec.scenario = sc.label;
        rec.sigma = sc.sigma;
        rec.seed = models.seed;
        rec.source_hash = start.hash();
        out.push_back(std::move(rec));
      }
    }
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex mutex;
    std::size_t next = 0;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mutex);
            if (next >= n) return;
            i = next++;
          }
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

ComparisonTable aggregate(std::vector<RunRecord> records, const std::vector<Scenario>& scenarios,
                          const std::vector<std::string>& methods) {
  // canonical record order makes the table independent of completion order
  std::stable_sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.task_index < b.task_index;
  });
  ComparisonTable table;
  for (const auto& sc : scenarios) {
    for (const auto& method : methods) {
      ComparisonCell cell;
      cell.method = method;
      cell.scenario = sc.label;
      cell.sigma = sc.sigma;
      // seed -> (sum min, sum final, count)
      std::map<std::uint64_t, std::array<double, 3>> per_seed;
      for (const auto& rec : records) {
        if (rec.method != method || rec.scenario != sc.label) continue;
        if (rec.diverged) ++cell.diverged;
        auto& acc = per_seed[rec.seed];
        acc[0] += rec.min_log_loss;
        acc[1] += rec.final_log_loss;
        acc[2] += 1.0;
      }
      for (const auto& [seed, acc] : per_seed) {
        cell.per_seed_min_log.push_back(acc[0] / acc[2]);
        cell.per_seed_final_log.push_back(acc[1] / acc[2]);
      }
      cell.n = per_seed.size();
      if (cell.diverged > 0 || cell.n < 2) {
        cell.min_log = {kNaN, kNaN};
        cell.final_log = {kNaN, kNaN};
        if (cell.diverged == 0 && cell.n == 1) {
          cell.min_log = {cell.per_seed_min_log[0], kNaN};
          cell.final_log = {cell.per_seed_final_log[0], kNaN};
        }
      } else {
        cell.min_log = confidence_interval(cell.per_seed_min_log);
        cell.final_log = confidence_interval(cell.per_seed_final_log);
      }
      table.cells.push_back(std::move(cell));
    }
  }
  table.records = std::move(records);
  return table;
}

namespace {

std::string sigma_label(const char* prefix, double sigma) {
  std::ostringstream out;
  out << prefix << sigma;
  return out.str();
}

ComparisonTable run_table(const EvalConfig& cfg, const std::vector<Scenario>& scenarios,
                          const std::vector<std::string>& methods) {
  cfg.validate();
  const bool need_plain = std::find(methods.begin(), methods.end(), "tl") != methods.end() ||
                          std::find(methods.begin(), methods.end(), "dt") != methods.end();
  const bool need_ml2o = std::find(methods.begin(), methods.end(), "ml2o") != methods.end();
  std::vector<std::vector<RunRecord>> per_seed(cfg.n_seeds);
  parallel_for(cfg.n_seeds, cfg.jobs, [&](std::size_t i) {
    const SeedModels models = train_seed_models(cfg, i, need_plain, need_ml2o);
    per_seed[i] = run_seed(cfg, models, scenarios, methods);
  });
  std::vector<RunRecord> all;
  for (auto& recs : per_seed) {
    for (auto& r : recs) all.push_back(std::move(r));
  }
  return aggregate(std::move(all), scenarios, methods);
}

}  // namespace

std::vector<Scenario> sigma_scenarios(const EvalConfig& cfg, const std::vector<double>& sigmas) {
  std::vector<Scenario> out;
  for (double s : sigmas) {
    if (!(s > 0.0)) throw ConfigError("sigma values must be positive");
    out.push_back({sigma_label("sigma=", s), s, with_sigma(cfg.adapt_dist, s),
                   with_sigma(cfg.test_dist, s)});
  }
  return out;
}

ComparisonTable compare_methods(const EvalConfig& cfg, const std::vector<double>& sigmas) {
  if (sigmas.empty()) throw ConfigError("compare: sigma list is empty");
  return run_table(cfg, sigma_scenarios(cfg, sigmas), method_names());
}

ComparisonTable compare_fixed(const EvalConfig& cfg, const std::string& label) {
  return run_table(cfg, {{label, std::nullopt, cfg.adapt_dist, cfg.test_dist}}, method_names());
}

ComparisonTable adapt_sweep(const EvalConfig& cfg, const std::vector<double>& sigma_adapt,
                            double sigma_test) {
  if (sigma_adapt.empty()) throw ConfigError("sweep: adaptation sigma list is empty");
  if (!(sigma_test > 0.0)) throw ConfigError("sweep: test sigma must be positive");
  std::vector<Scenario> scenarios;
  for (double s : sigma_adapt) {
    if (!(s > 0.0)) throw ConfigError("sigma values must be positive");
    scenarios.push_back({sigma_label("adapt_sigma=", s), s, with_sigma(cfg.adapt_dist, s),
                         with_sigma(cfg.test_dist, sigma_test)});
  }
  return run_table(cfg, scenarios, {"tl", "ml2o"});
}

std::vector<double> default_alpha_grid() {
  std::vector<double> out;
  for (int i = 0; i <= 10; ++i) out.push_back(i / 10.0);
  return out;
}

std::vector<InterpolationPoint> interpolate_eval(const OptimizerParams& w1,
                                                 const OptimizerParams& w2,
                                                 const std::vector<double>& alpha_grid,
                                                 const TaskDistribution& dist, std::size_t horizon,
                                                 std::size_t n_seeds, std::uint64_t base_seed,
                                                 std::size_t jobs) {
  if (alpha_grid.empty()) throw ConfigError("interpolate: alpha grid is empty");
  for (double a : alpha_grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("interpolate: alpha values must be in [0, 1]");
  }
  if (n_seeds < 1) throw ConfigError("interpolate: n_seeds must be >= 1");
  blend(w1, w2, 0.5);  // shape check before any work

  std::vector<InterpolationPoint> points(alpha_grid.size());
  parallel_for(alpha_grid.size(), jobs, [&](std::size_t p) {
    InterpolationPoint& point = points[p];
    point.alpha = alpha_grid[p];
    const OptimizerParams w = blend(w1, w2, point.alpha);
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const std::uint64_t seed = base_seed + s;
      auto recs = evaluate(w, dist, horizon, 1, test_stream(seed, dist));
      for (auto& rec : recs) {
        rec.method = "blend";
        rec.scenario = sigma_label("alpha=", point.alpha);
        rec.seed = seed;
        point.records.push_back(std::move(rec));
      }
    }
    point.mean_curve.assign(horizon + 1, 0.0);
    std::size_t counted = 0;
    std::vector<double> mins;
    for (const auto& rec : point.records) {
      mins.push_back(rec.min_log_loss);
      if (rec.truncated) continue;
      for (std::size_t t = 0; t <= horizon; ++t) point.mean_curve[t] += clamped_log(rec.curve[t]);
      ++counted;
    }
    for (auto& v : point.mean_curve) v = counted ? v / static_cast<double>(counted) : kNaN;
    point.min_log = mins.size() >= 2 ? confidence_interval(mins) : Interval{mins[0], kNaN};
  });
  return points;
}

void write_records_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "method,scenario,sigma,seed,task_index,min_log_loss,final_log_loss,truncated,diverged,"
         "task_hash,theta0_hash,source_hash,params_hash,wall_ms\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.method << ',' << r.scenario << ',';
    if (r.sigma) out << *r.sigma;
    out << ',' << r.seed << ',' << r.task_index << ',' << r.min_log_loss << ','
        << r.final_log_loss << ',' << (r.truncated ? 1 : 0) << ',' << (r.diverged ? 1 : 0) << ','
        << hex(r.task_hash) << ',' << hex(r.theta0_hash) << ',' << hex(r.source_hash) << ','
        << hex(r.params_hash) << ',' << std::fixed << std::setprecision(3) << r.wall_ms
        << std::defaultfloat << std::setprecision(17) << '\n';
  }
}

void write_curves(const std::vector<RunRecord>& records, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& r : records) {
    if (r.diverged) continue;
    std::string scenario = r.scenario;
    std::replace(scenario.begin(), scenario.end(), '=', '_');
    const auto path = dir / (scenario + "_" + r.method + "_seed" + std::to_string(r.seed) +
                             "_task" + std::to_string(r.task_index) + ".csv");
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "step,loss,log_loss\n" << std::setprecision(17);
    for (std::size_t t = 0; t < r.curve.size(); ++t) {
      out << t << ',' << r.curve[t] << ',' << clamped_log(r.curve[t]) << '\n';
    }
  }
}

void write_table_csv(const ComparisonTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "method,scenario,sigma,n,diverged,min_log_mean,min_log_half_width,final_log_mean,"
         "final_log_half_width\n";
  out << std::setprecision(17);
  for (const auto& c : table.cells) {
    out << c.method << ',' << c.scenario << ',';
    if (c.sigma) out << *c.sigma;
    out << ',' << c.n << ',' << c.diverged << ',' << c.min_log.mean << ',' << c.min_log.half_width
        << ',' << c.final_log.mean << ',' << c.final_log.half_width << '\n';
  }
}

namespace {

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double number_or_nan(const nlohmann::json& v) { return v.is_null() ? kNaN : v.get<double>(); }

nlohmann::json interval_json(const Interval& iv) {
  return {{"mean", number_or_null(iv.mean)}, {"half_width", number_or_null(iv.half_width)}};
}

Interval interval_from(const nlohmann::json& doc) {
  return {number_or_nan(doc.at("mean")), number_or_nan(doc.at("half_width"))};
}

}  // namespace

nlohmann::json table_to_json(const ComparisonTable& table) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : table.cells) {
    nlohmann::json doc;
    doc["method"] = c.method;
    doc["scenario"] = c.scenario;
    doc["sigma"] = c.sigma ? nlohmann::json(*c.sigma) : nlohmann::json(nullptr);
    doc["n"] = c.n;
    doc["diverged"] = c.diverged;
    doc["min_log_loss"] = interval_json(c.min_log);
    doc["final_log_loss"] = interval_json(c.final_log);
    nlohmann::json per_min = nlohmann::json::array();
    nlohmann::json per_final = nlohmann::json::array();
    for (double v : c.per_seed_min_log) per_min.push_back(number_or_null(v));
    for (double v : c.per_seed_final_log) per_final.push_back(number_or_null(v));
    doc["per_seed_min_log_loss"] = per_min;
    doc["per_seed_final_log_loss"] = per_final;
    cells.push_back(doc);
  }
  return {{"cells", cells}};
}

ComparisonTable table_from_json(const nlohmann::json& doc) {
  ComparisonTable table;
  for (const auto& c : doc.at("cells")) {
    ComparisonCell cell;
    cell.method = c.at("method").get<std::string>();
    cell.scenario = c.at("scenario").get<std::string>();
    if (!c.at("sigma").is_null()) cell.sigma = c.at("sigma").get<double>();
    cell.n = c.at("n").get<std::size_t>();
    cell.diverged = c.at("diverged").get<std::size_t>();
    cell.min_log = interval_from(c.at("min_log_loss"));
    cell.final_log = interval_from(c.at("final_log_loss"));
    for (const auto& v : c.at("per_seed_min_log_loss")) {
      cell.per_seed_min_log.push_back(number_or_nan(v));
    }
    for (const auto& v : c.at("per_seed_final_log_loss")) {
      cell.per_seed_final_log.push_back(number_or_nan(v));
    }
    table.cells.push_back(std::move(cell));
  }
  return table;
}

void write_json(const nlohmann::json& doc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

}  // namespace ml2o
