#include "ml2o/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "ml2o/config.hpp"
#include "ml2o/verify.hpp"

namespace ml2o {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "Experiment config file (defaults apply when omitted)");
  cmd->add_option("-o,--out", c.out, "Output directory; nothing is written outside it")
      ->required();
  cmd->add_option("-j,--jobs", c.jobs, "Parallel seeds (default: config value or all cores)")
      ->check(CLI::PositiveNumber);
}

ExperimentConfig prepare(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw ConfigError("config file not found: " + c.config);
    cfg = load_config(c.config);
  }
  if (c.jobs) {
    cfg.eval.jobs = *c.jobs;
  } else if (!cfg.has_key("eval.jobs")) {
    cfg.eval.jobs = std::max(1u, std::thread::hardware_concurrency());
  }
  return cfg;
}

/// Validates, creates --out and echoes the resolved config before any work.
fs::path start_run(ExperimentConfig& cfg, const Common& c) {
  cfg.validate();
  const fs::path out(c.out);
  fs::create_directories(out);
  std::ofstream echo(out / "resolved_config.ini", std::ios::binary);
  if (!echo) throw Error("cannot write " + (out / "resolved_config.ini").string());
  echo << to_ini(cfg);
  return out;
}

std::size_t count_diverged(const std::vector<RunRecord>& records) {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const RunRecord& r) { return r.diverged; }));
}

void print_table(const ComparisonTable& table, std::ostream& out) {
  out << std::left << std::setw(10) << "method" << std::setw(18) << "scenario" << std::right
      << std::setw(22) << "min log-loss" << std::setw(22) << "final log-loss"
      << "  diverged\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& c : table.cells) {
    out << std::left << std::setw(10) << c.method << std::setw(18) << c.scenario << std::right
        << std::setw(10) << c.min_log.mean << " +- " << std::setw(8) << c.min_log.half_width
        << std::setw(10) << c.final_log.mean << " +- " << std::setw(8) << c.final_log.half_width
        << "  " << c.diverged << '/' << c.n << '\n';
  }
  out << std::defaultfloat;
}

int finish_table(const ComparisonTable& table, const fs::path& out, const std::string& stem,
                 std::ostream& os, std::ostream& err) {
  write_json(table_to_json(table), out / (stem + ".json"));
  write_table_csv(table, out / (stem + ".csv"));
  write_records_csv(table.records, out / "records.csv");
  write_curves(table.records, out / "curves");
  print_table(table, os);
  const std::size_t bad = count_diverged(table.records);
  if (bad > 0) {
    err << "warning: " << bad << " run(s) diverged; partial results written to " << out.string()
        << '\n';
    return kExitDivergence;
  }
  return kExitOk;
}

std::string method_metadata(const std::string& method, const ExperimentConfig& cfg) {
  return "method=" + method + " seed=" + std::to_string(cfg.eval.train.seed) +
         " epochs=" + std::to_string(cfg.eval.train.epochs);
}

int cmd_meta_train(ExperimentConfig& cfg, const Common& c, const std::string& method,
                   std::ostream& os, std::ostream& err) {
  if (method == "plain" && cfg.has_key("train.alpha")) {
    err << "warning: train.alpha is ignored by plain training\n";
  }
  const fs::path out = start_run(cfg, c);
  if (cfg.eval.train.checkpoint_every > 0) {
    cfg.eval.train.checkpoint_dir = out / "checkpoints";
    fs::create_directories(cfg.eval.train.checkpoint_dir);
  }
  try {
    const TrainResult result = method == "plain"
                                   ? train_plain_l2o(cfg.eval.train, cfg.eval.train_dist)
                                   : train_ml2o(cfg.eval.train, cfg.eval.train_dist);
    save_checkpoint(result.params, out / "checkpoint.ml2o", method_metadata(method, cfg));
    result.log.write_csv(out / "train_log.csv");
    os << method << " training finished: " << result.log.entries.size()
       << " epochs, final meta-loss " << std::setprecision(6)
       << (result.log.entries.empty() ? 0.0 : result.log.entries.back().meta_loss) << '\n';
  } catch (const DivergenceError& e) {
    save_checkpoint(e.last_good(), out / "checkpoint_last_good.ml2o",
                    method_metadata(method, cfg) + " diverged_at=" + std::to_string(e.epoch()));
    throw;
  }
  return kExitOk;
}

int cmd_compare(ExperimentConfig& cfg, const Common& c, const std::vector<double>& sigmas,
                std::ostream& os, std::ostream& err) {
  if (!sigmas.empty()) cfg.sigmas = sigmas;
  const fs::path out = start_run(cfg, c);
  if (cfg.eval.test_dist.kind == DistKind::NormalSigma) {
    return finish_table(compare_methods(cfg.eval, cfg.sigmas), out, "comparison", os, err);
  }
  const std::string label = cfg.eval.test_dist.kind == DistKind::RosenbrockInit ? "rosenbrock"
                                                                                 : "train_mixture";
  return finish_table(compare_fixed(cfg.eval, label), out, "comparison", os, err);
}

int cmd_sweep(ExperimentConfig& cfg, const Common& c, const std::vector<double>& adapt_sigmas,
              std::ostream& os, std::ostream& err) {
  if (!adapt_sigmas.empty()) cfg.adapt_sigmas = adapt_sigmas;
  if (cfg.eval.test_dist.kind != DistKind::NormalSigma) {
    throw ConfigError("sweep requires [test] distribution = normal");
  }
  const fs::path out = start_run(cfg, c);
  return finish_table(adapt_sweep(cfg.eval, cfg.adapt_sigmas, cfg.eval.test_dist.sigma), out,
                      "sweep", os, err);
}

int cmd_verify(ExperimentConfig& cfg, const Common& c, const std::string& suite, std::ostream& os,
               std::ostream& err) {
  const fs::path out = start_run(cfg, c);
  VerifyOutcome result;
  bool assertive = true;
  if (suite == "grad") {
    result = verify_grad(cfg.verify);
  } else if (suite == "jacobian") {
    result = verify_jacobian(cfg.verify);
  } else if (suite == "gaps") {
    result = verify_gaps(cfg);
  } else {
    GrowthReport growth;
    result = verify_growth(cfg, &growth);
    write_growth_csv(growth, out / "growth.csv");
    assertive = false;
  }
  write_json(result.report, out / "report.json");
  if (!assertive) {
    os << "growth diagnostic: monotone fraction " << result.max_error << " (expectation "
       << result.tolerance << (result.passed ? ", met" : ", not met") << ")\n";
    return kExitOk;
  }
  os << suite << ": " << (result.passed ? "PASS" : "FAIL") << " (max error "
     << std::setprecision(3) << result.max_error << ", tolerance " << result.tolerance << ")\n";
  if (!result.passed) {
    write_json(result.worst_case, out / "worst_case.json");
    err << "verification failed; worst case written to " << (out / "worst_case.json").string()
        << '\n';
    return kExitVerifyFailed;
  }
  return kExitOk;
}

OptimizerParams load_named(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " checkpoint path is required");
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " checkpoint not found: " + path);
  return load_checkpoint(path);
}

int cmd_interpolate(ExperimentConfig& cfg, const Common& c, const std::string& w1_path,
                    const std::string& w2_path, const std::vector<double>& alphas,
                    std::ostream& os) {
  if (!alphas.empty()) cfg.alphas = alphas;
  const OptimizerParams w1 = load_named(w1_path, "--w1");
  const OptimizerParams w2 = load_named(w2_path, "--w2");
  if (!w1.same_shape(w2) || w1.output_scale() != w2.output_scale()) {
    throw ConfigError("checkpoint shape mismatch: --w1 has hidden=" + std::to_string(w1.hidden()) +
                      " features=" + std::to_string(w1.feature_dim()) +
                      ", --w2 has hidden=" + std::to_string(w2.hidden()) +
                      " features=" + std::to_string(w2.feature_dim()));
  }
  const fs::path out = start_run(cfg, c);
  const auto points = interpolate_eval(w1, w2, cfg.alphas, cfg.eval.test_dist, cfg.eval.horizon,
                                       cfg.eval.n_seeds, cfg.eval.base_seed, cfg.eval.jobs);
  nlohmann::json summary = nlohmann::json::array();
  std::vector<RunRecord> all;
  fs::create_directories(out / "curves");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    std::ostringstream name;
    name << "alpha_" << std::setw(2) << std::setfill('0') << i << ".csv";
    std::ofstream curve(out / "curves" / name.str());
    if (!curve) throw Error("cannot write interpolation curve");
    curve << "step,mean_log_loss\n" << std::setprecision(17);
    for (std::size_t t = 0; t < p.mean_curve.size(); ++t) {
      curve << t << ',' << p.mean_curve[t] << '\n';
    }
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& r : p.records) per_seed.push_back(r.min_log_loss);
    summary.push_back({{"alpha", p.alpha},
                       {"curve_file", "curves/" + name.str()},
                       {"min_log_mean", p.min_log.mean},
                       {"min_log_half_width", std::isfinite(p.min_log.half_width)
                                                  ? nlohmann::json(p.min_log.half_width)
                                                  : nlohmann::json(nullptr)},
                       {"per_seed_min_log", per_seed}});
    all.insert(all.end(), p.records.begin(), p.records.end());
    os << "alpha=" << p.alpha << "  min log-loss " << std::fixed << std::setprecision(3)
       << p.min_log.mean << std::defaultfloat << '\n';
  }
  write_json({{"w1_hash", w1.hash()}, {"w2_hash", w2.hash()}, {"points", summary}},
             out / "interpolation.json");
  write_records_csv(all, out / "records.csv");
  return kExitOk;
}

int cmd_adapt(ExperimentConfig& cfg, const Common& c, const std::string& ckpt, std::ostream& os) {
  const OptimizerParams params = load_named(ckpt, "--checkpoint");
  const fs::path out = start_run(cfg, c);
  std::vector<double> losses;
  const OptimizerParams adapted =
      adapt(params, cfg.eval.adapt_dist, cfg.eval.train.adapt_steps, cfg.eval.adapt_alpha,
            cfg.eval.adapt_unroll, adapt_stream(cfg.eval.train.seed, cfg.eval.adapt_dist),
            cfg.eval.adapt_options, &losses);
  save_checkpoint(adapted, out / "adapted.ml2o",
                  "adapted from " + std::to_string(params.hash()) + " on " +
                      cfg.eval.adapt_dist.describe());
  std::ofstream log(out / "adapt_log.csv");
  if (!log) throw Error("cannot write adapt log");
  log << "step,meta_loss\n" << std::setprecision(17);
  for (std::size_t s = 0; s < losses.size(); ++s) log << s << ',' << losses[s] << '\n';
  os << "adapted " << losses.size() << " steps on " << cfg.eval.adapt_dist.describe() << '\n';
  return kExitOk;
}

int cmd_evaluate(ExperimentConfig& cfg, const Common& c, const std::string& ckpt,
                 std::ostream& os) {
  const OptimizerParams params = load_named(ckpt, "--checkpoint");
  const fs::path out = start_run(cfg, c);
  std::vector<std::vector<RunRecord>> per_seed(cfg.eval.n_seeds);
  parallel_for(cfg.eval.n_seeds, cfg.eval.jobs, [&](std::size_t i) {
    const std::uint64_t seed = cfg.eval.seed_for(i);
    per_seed[i] = evaluate(params, cfg.eval.test_dist, cfg.eval.horizon, cfg.eval.n_tasks,
                           test_stream(seed, cfg.eval.test_dist));
    for (auto& r : per_seed[i]) {
      r.method = "checkpoint";
      r.scenario = "evaluate";
      r.seed = seed;
      r.source_hash = params.hash();
    }
  });
  std::vector<RunRecord> all;
  std::vector<double> mins, finals;
  for (auto& recs : per_seed) {
    for (auto& r : recs) {
      mins.push_back(r.min_log_loss);
      finals.push_back(r.final_log_loss);
      all.push_back(std::move(r));
    }
  }
  write_records_csv(all, out / "records.csv");
  write_curves(all, out / "curves");
  const Interval mi = confidence_interval(mins);
  const Interval fi = confidence_interval(finals);
  write_json({{"test_distribution", cfg.eval.test_dist.describe()},
              {"params_hash", params.hash()},
              {"runs", all.size()},
              {"min_log", {{"mean", mi.mean}, {"half_width", mi.half_width}}},
              {"final_log", {{"mean", fi.mean}, {"half_width", fi.half_width}}}},
             out / "summary.json");
  os << "min log-loss " << std::fixed << std::setprecision(3) << mi.mean << " +- "
     << mi.half_width << std::defaultfloat << " over " << all.size() << " runs\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learned optimizers with meta-adaptation: training, evaluation and checks", "ml2o"};
  app.require_subcommand(1);

  Common common;
  std::string method = "ml2o";
  std::vector<double> sigmas, adapt_sigmas, alphas;
  std::string suite, w1, w2, checkpoint;

  auto* train = app.add_subcommand("meta-train", "Train a learned optimizer");
  add_common(train, common);
  train->add_option("--method", method, "ml2o or plain")
      ->check(CLI::IsMember({"ml2o", "plain"}));

  auto* compare = app.add_subcommand("compare", "Four-method comparison per test sigma");
  add_common(compare, common);
  compare->add_option("--sigmas", sigmas, "Test sigmas (default 10,25,50,100,200)")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "TL and M-L2O across adaptation sigmas");
  add_common(sweep, common);
  sweep->add_option("--adapt-sigmas", adapt_sigmas, "Adaptation sigmas")->delimiter(',');

  auto* verify = app.add_subcommand("verify", "Gradient checks and theory diagnostics");
  add_common(verify, common);
  verify->add_option("--suite", suite, "grad, jacobian, gaps or growth")
      ->required()
      ->check(CLI::IsMember({"grad", "jacobian", "gaps", "growth"}));

  auto* interp = app.add_subcommand("interpolate", "Evaluate blends of two checkpoints");
  add_common(interp, common);
  interp->add_option("--w1", w1, "Checkpoint weighted by alpha")->required();
  interp->add_option("--w2", w2, "Checkpoint weighted by 1 - alpha")->required();
  interp->add_option("--alphas", alphas, "Blend weights in [0, 1]")->delimiter(',');

  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt a checkpoint on the [adapt] tasks");
  add_common(adapt_cmd, common);
  adapt_cmd->add_option("--checkpoint", checkpoint, "Checkpoint to adapt")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the [test] tasks");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    ExperimentConfig cfg = prepare(common);
    if (train->parsed()) return cmd_meta_train(cfg, common, method, out, err);
    if (compare->parsed()) return cmd_compare(cfg, common, sigmas, out, err);
    if (sweep->parsed()) return cmd_sweep(cfg, common, adapt_sigmas, out, err);
    if (verify->parsed()) return cmd_verify(cfg, common, suite, out, err);
    if (interp->parsed()) return cmd_interpolate(cfg, common, w1, w2, alphas, out);
    if (adapt_cmd->parsed()) return cmd_adapt(cfg, common, checkpoint, out);
    if (eval_cmd->parsed()) return cmd_evaluate(cfg, common, checkpoint, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace ml2o
