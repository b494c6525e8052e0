#include "ml2o/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace ml2o {

namespace {

std::string_view trim(std::string_view s) {
  const auto not_space = [](char c) { return c != ' ' && c != '\t' && c != '\r'; };
  while (!s.empty() && !not_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && !not_space(s.back())) s.remove_suffix(1);
  return s;
}

// Values are parsed without location; the caller prefixes source:line.
struct BadValue {
  std::string message;
};

double to_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw BadValue{"expected a number, got '" + std::string(s) + "'"};
  }
  return v;
}

std::uint64_t to_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw BadValue{"expected a nonnegative integer, got '" + std::string(s) + "'"};
  }
  return v;
}

std::size_t to_size(std::string_view s) { return static_cast<std::size_t>(to_u64(s)); }

bool to_bool(std::string_view s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw BadValue{"expected true or false, got '" + std::string(s) + "'"};
}

template <class T, class F>
std::vector<T> to_list(std::string_view s, F item) {
  std::vector<T> out;
  while (true) {
    const auto comma = s.find(',');
    const std::string_view piece = trim(s.substr(0, comma));
    if (piece.empty()) throw BadValue{"empty list element"};
    out.push_back(item(piece));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T>
std::string fmt_list(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += fmt(static_cast<std::conditional_t<std::is_integral_v<T>, std::uint64_t, T>>(values[i]));
  }
  return out;
}

DistKind to_dist_kind(std::string_view s) {
  if (s == "train_mixture") return DistKind::TrainMixture;
  if (s == "normal") return DistKind::NormalSigma;
  if (s == "rosenbrock") return DistKind::RosenbrockInit;
  throw BadValue{"distribution must be train_mixture, normal or rosenbrock"};
}

std::string dist_kind_name(DistKind k) {
  switch (k) {
    case DistKind::TrainMixture:
      return "train_mixture";
    case DistKind::NormalSigma:
      return "normal";
    case DistKind::RosenbrockInit:
      return "rosenbrock";
  }
  return "?";
}

ProblemFamily to_family(std::string_view s) {
  if (s == "lasso") return ProblemFamily::Lasso;
  if (s == "quadratic") return ProblemFamily::Quadratic;
  throw BadValue{"family must be lasso or quadratic"};
}

std::string family_name(ProblemFamily f) { return f == ProblemFamily::Lasso ? "lasso" : "quadratic"; }

GradMode to_inner_mode(std::string_view s) {
  if (s == "full") return GradMode::full();
  if (s == "detached") return GradMode::detached();
  throw BadValue{"grad_mode must be full or detached"};
}

struct Key {
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

using KeyTable = std::vector<std::pair<std::string, std::vector<std::pair<std::string, Key>>>>;

#define ML2O_NUM(path, conv)                                                   \
  Key {                                                                        \
    [](ExperimentConfig& c, std::string_view v) { c.path = conv(v); },         \
        [](const ExperimentConfig& c) { return fmt(c.path); }                  \
  }
#define ML2O_SIZE(path)                                                        \
  Key {                                                                        \
    [](ExperimentConfig& c, std::string_view v) { c.path = to_size(v); },      \
        [](const ExperimentConfig& c) { return fmt(std::uint64_t(c.path)); }   \
  }

void add_distribution_keys(std::vector<std::pair<std::string, Key>>& keys,
                           TaskDistribution& (*pick)(ExperimentConfig&),
                           const TaskDistribution& (*cpick)(const ExperimentConfig&)) {
  keys.emplace_back("distribution",
                    Key{[pick](ExperimentConfig& c, std::string_view v) {
                          pick(c).kind = to_dist_kind(v);
                        },
                        [cpick](const ExperimentConfig& c) {
                          return dist_kind_name(cpick(c).kind);
                        }});
  keys.emplace_back("family", Key{[pick](ExperimentConfig& c, std::string_view v) {
                                    pick(c).family = to_family(v);
                                  },
                                  [cpick](const ExperimentConfig& c) {
                                    return family_name(cpick(c).family);
                                  }});
  keys.emplace_back("sigma", Key{[pick](ExperimentConfig& c, std::string_view v) {
                                   pick(c).sigma = to_double(v);
                                 },
                                 [cpick](const ExperimentConfig& c) { return fmt(cpick(c).sigma); }});
  keys.emplace_back("dim", Key{[pick](ExperimentConfig& c, std::string_view v) {
                                 pick(c).dim = to_size(v);
                               },
                               [cpick](const ExperimentConfig& c) {
                                 return fmt(std::uint64_t(cpick(c).dim));
                               }});
  keys.emplace_back("lambda", Key{[pick](ExperimentConfig& c, std::string_view v) {
                                    pick(c).lambda = to_double(v);
                                  },
                                  [cpick](const ExperimentConfig& c) {
                                    return fmt(cpick(c).lambda);
                                  }});
}

const KeyTable& key_table() {
  static const KeyTable table = [] {
    KeyTable t;
    std::vector<std::pair<std::string, Key>> train{
        {"seed", Key{[](ExperimentConfig& c, std::string_view v) { c.eval.train.seed = to_u64(v); },
                     [](const ExperimentConfig& c) { return fmt(c.eval.train.seed); }}},
        {"epochs", ML2O_SIZE(eval.train.epochs)},
        {"task_epochs", ML2O_SIZE(eval.train.task_epochs)},
        {"unroll", ML2O_SIZE(eval.train.unroll)},
        {"hidden", ML2O_SIZE(eval.train.hidden)},
        {"output_scale", ML2O_NUM(eval.train.output_scale, to_double)},
        {"alpha", ML2O_NUM(eval.train.alpha, to_double)},
        {"outer", Key{[](ExperimentConfig& c, std::string_view v) {
                        if (v == "adam") {
                          c.eval.train.outer.kind = OuterRule::Kind::Adam;
                        } else if (v == "sgd") {
                          c.eval.train.outer.kind = OuterRule::Kind::SgdSchedule;
                        } else {
                          throw BadValue{"outer must be adam or sgd"};
                        }
                      },
                      [](const ExperimentConfig& c) {
                        return std::string(c.eval.train.outer.kind == OuterRule::Kind::Adam
                                               ? "adam"
                                               : "sgd");
                      }}},
        {"lr", ML2O_NUM(eval.train.outer.lr, to_double)},
        {"sgd_beta", ML2O_NUM(eval.train.outer.beta, to_double)},
        {"sgd_mu", ML2O_NUM(eval.train.outer.mu, to_double)},
        {"grad_mode", Key{[](ExperimentConfig& c, std::string_view v) {
                            c.eval.train.grad_mode = to_inner_mode(v);
                          },
                          [](const ExperimentConfig& c) { return c.eval.train.grad_mode.name(); }}},
        {"meta_mode", Key{[](ExperimentConfig& c, std::string_view v) {
                            const auto eps = c.eval.train.meta_mode.epsilon;
                            if (v == "fd_hvp") {
                              c.eval.train.meta_mode = GradMode::fd_hvp_meta(eps);
                            } else if (v == "first_order") {
                              c.eval.train.meta_mode = GradMode::first_order_meta();
                              c.eval.train.meta_mode.epsilon = eps;
                            } else {
                              throw BadValue{"meta_mode must be fd_hvp or first_order"};
                            }
                          },
                          [](const ExperimentConfig& c) { return c.eval.train.meta_mode.name(); }}},
        {"fd_epsilon", Key{[](ExperimentConfig& c, std::string_view v) {
                             if (v == "auto") {
                               c.eval.train.meta_mode.epsilon.reset();
                             } else {
                               c.eval.train.meta_mode.epsilon = to_double(v);
                             }
                           },
                           [](const ExperimentConfig& c) {
                             const auto& e = c.eval.train.meta_mode.epsilon;
                             return e ? fmt(*e) : std::string("auto");
                           }}},
        {"tasks_per_update", ML2O_SIZE(eval.train.tasks_per_update)},
        {"curriculum", Key{[](ExperimentConfig& c, std::string_view v) {
                             if (v == "fixed") {
                               c.eval.train.curriculum.kind = Curriculum::Kind::Fixed;
                             } else if (v == "doubling") {
                               c.eval.train.curriculum.kind = Curriculum::Kind::Doubling;
                             } else {
                               throw BadValue{"curriculum must be fixed or doubling"};
                             }
                           },
                           [](const ExperimentConfig& c) {
                             return std::string(c.eval.train.curriculum.kind ==
                                                        Curriculum::Kind::Fixed
                                                    ? "fixed"
                                                    : "doubling");
                           }}},
        {"curriculum_threshold", ML2O_NUM(eval.train.curriculum.threshold, to_double)},
        {"curriculum_max", ML2O_SIZE(eval.train.curriculum.max_task_epochs)},
        {"checkpoint_every", ML2O_SIZE(eval.train.checkpoint_every)},
    };
    add_distribution_keys(
        train, [](ExperimentConfig& c) -> TaskDistribution& { return c.eval.train_dist; },
        [](const ExperimentConfig& c) -> const TaskDistribution& { return c.eval.train_dist; });
    t.emplace_back("train", std::move(train));

    std::vector<std::pair<std::string, Key>> adapt{
        {"steps", ML2O_SIZE(eval.train.adapt_steps)},
        {"alpha", ML2O_NUM(eval.adapt_alpha, to_double)},
        {"unroll", ML2O_SIZE(eval.adapt_unroll)},
        {"grad_mode", Key{[](ExperimentConfig& c, std::string_view v) {
                            c.eval.adapt_options.grad_mode = to_inner_mode(v);
                          },
                          [](const ExperimentConfig& c) {
                            return c.eval.adapt_options.grad_mode.name();
                          }}},
        {"clip_norm", ML2O_NUM(eval.adapt_options.clip_norm, to_double)},
        {"fixed_task", ML2O_NUM(eval.adapt_options.fixed_task, to_bool)},
    };
    add_distribution_keys(
        adapt, [](ExperimentConfig& c) -> TaskDistribution& { return c.eval.adapt_dist; },
        [](const ExperimentConfig& c) -> const TaskDistribution& { return c.eval.adapt_dist; });
    t.emplace_back("adapt", std::move(adapt));

    std::vector<std::pair<std::string, Key>> test{
        {"horizon", ML2O_SIZE(eval.horizon)},
        {"n_tasks", ML2O_SIZE(eval.n_tasks)},
    };
    add_distribution_keys(
        test, [](ExperimentConfig& c) -> TaskDistribution& { return c.eval.test_dist; },
        [](const ExperimentConfig& c) -> const TaskDistribution& { return c.eval.test_dist; });
    t.emplace_back("test", std::move(test));

    std::vector<std::pair<std::string, Key>> eval{
        {"n_seeds", ML2O_SIZE(eval.n_seeds)},
        {"base_seed",
         Key{[](ExperimentConfig& c, std::string_view v) { c.eval.base_seed = to_u64(v); },
             [](const ExperimentConfig& c) { return fmt(c.eval.base_seed); }}},
        {"jobs", ML2O_SIZE(eval.jobs)},
        {"sigmas", Key{[](ExperimentConfig& c, std::string_view v) {
                         c.sigmas = to_list<double>(v, to_double);
                       },
                       [](const ExperimentConfig& c) { return fmt_list(c.sigmas); }}},
        {"adapt_sigmas", Key{[](ExperimentConfig& c, std::string_view v) {
                               c.adapt_sigmas = to_list<double>(v, to_double);
                             },
                             [](const ExperimentConfig& c) { return fmt_list(c.adapt_sigmas); }}},
        {"alphas", Key{[](ExperimentConfig& c, std::string_view v) {
                         c.alphas = to_list<double>(v, to_double);
                       },
                       [](const ExperimentConfig& c) { return fmt_list(c.alphas); }}},
    };
    t.emplace_back("eval", std::move(eval));

    std::vector<std::pair<std::string, Key>> verify{
        {"seed", Key{[](ExperimentConfig& c, std::string_view v) { c.verify.seed = to_u64(v); },
                     [](const ExperimentConfig& c) { return fmt(c.verify.seed); }}},
        {"grad_instances", ML2O_SIZE(verify.grad_instances)},
        {"grad_dim", ML2O_SIZE(verify.grad_dim)},
        {"grad_unroll", ML2O_SIZE(verify.grad_unroll)},
        {"grad_hidden", ML2O_SIZE(verify.grad_hidden)},
        {"grad_tolerance", ML2O_NUM(verify.grad_tolerance, to_double)},
        {"jacobian_instances", ML2O_SIZE(verify.jacobian_instances)},
        {"jacobian_dim", ML2O_SIZE(verify.jacobian_dim)},
        {"jacobian_unroll", ML2O_SIZE(verify.jacobian_unroll)},
        {"jacobian_hidden", ML2O_SIZE(verify.jacobian_hidden)},
        {"jacobian_tolerance", ML2O_NUM(verify.jacobian_tolerance, to_double)},
        {"gap_radius", ML2O_NUM(verify.gap_radius, to_double)},
        {"gap_probes", ML2O_SIZE(verify.gap_probes)},
        {"gap_sigma", ML2O_NUM(verify.gap_sigma, to_double)},
        {"gap_identical", ML2O_NUM(verify.gap_identical, to_bool)},
        {"growth_horizons", Key{[](ExperimentConfig& c, std::string_view v) {
                                  c.verify.growth_horizons = to_list<std::size_t>(v, to_size);
                                },
                                [](const ExperimentConfig& c) {
                                  return fmt_list(c.verify.growth_horizons);
                                }}},
        {"growth_pairs", ML2O_SIZE(verify.growth_pairs)},
        {"growth_probes", ML2O_SIZE(verify.growth_probes)},
        {"growth_sigma", ML2O_NUM(verify.growth_sigma, to_double)},
        {"monotone_fraction", ML2O_NUM(verify.monotone_fraction, to_double)},
    };
    t.emplace_back("verify", std::move(verify));
    return t;
  }();
  return table;
}

#undef ML2O_NUM
#undef ML2O_SIZE

const Key* find_key(std::string_view section, std::string_view key) {
  for (const auto& [name, keys] : key_table()) {
    if (name != section) continue;
    for (const auto& [k, entry] : keys) {
      if (k == key) return &entry;
    }
  }
  return nullptr;
}

bool known_section(std::string_view section) {
  return std::any_of(key_table().begin(), key_table().end(),
                     [&](const auto& s) { return s.first == section; });
}

void require_positive_list(const std::vector<double>& values, const char* what) {
  if (values.empty()) throw ConfigError(std::string(what) + " must not be empty");
  for (double v : values) {
    if (!(v > 0.0)) throw ConfigError(std::string(what) + " entries must be positive");
  }
}

}  // namespace

bool ExperimentConfig::has_key(std::string_view section_key) const {
  return std::find(explicit_keys.begin(), explicit_keys.end(), section_key) !=
         explicit_keys.end();
}

void ExperimentConfig::validate() const {
  try {
    eval.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (!(eval.adapt_options.clip_norm >= 0.0)) throw ConfigError("adapt clip_norm must be >= 0");
  require_positive_list(sigmas, "eval sigmas");
  require_positive_list(adapt_sigmas, "eval adapt_sigmas");
  if (alphas.empty()) throw ConfigError("eval alphas must not be empty");
  for (double a : alphas) {
    if (!std::isfinite(a)) throw ConfigError("eval alphas must be finite");
  }
  const auto& v = verify;
  if (v.grad_instances < 1 || v.grad_dim < 1 || v.grad_unroll < 1 || v.grad_hidden < 1) {
    throw ConfigError("verify grad_* sizes must be >= 1");
  }
  if (v.jacobian_instances < 1 || v.jacobian_dim < 1 || v.jacobian_unroll < 1 ||
      v.jacobian_hidden < 1) {
    throw ConfigError("verify jacobian_* sizes must be >= 1");
  }
  if (!(v.grad_tolerance > 0.0) || !(v.jacobian_tolerance > 0.0)) {
    throw ConfigError("verify tolerances must be positive");
  }
  if (!(v.gap_radius >= 0.0) || !(v.gap_sigma > 0.0) || !(v.growth_sigma > 0.0)) {
    throw ConfigError("verify gap_radius must be >= 0 and sigmas positive");
  }
  if (v.gap_probes < 1 || v.growth_pairs < 1 || v.growth_probes < 1) {
    throw ConfigError("verify probe and pair counts must be >= 1");
  }
  if (v.growth_horizons.empty()) throw ConfigError("verify growth_horizons must not be empty");
  for (std::size_t i = 0; i < v.growth_horizons.size(); ++i) {
    if (v.growth_horizons[i] < 1 || (i > 0 && v.growth_horizons[i] <= v.growth_horizons[i - 1])) {
      throw ConfigError("verify growth_horizons must be >= 1 and strictly ascending");
    }
  }
  if (!(v.monotone_fraction >= 0.0 && v.monotone_fraction <= 1.0)) {
    throw ConfigError("verify monotone_fraction must lie in [0, 1]");
  }
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  ExperimentConfig cfg;
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> ConfigError {
    return ConfigError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    const auto hash = line.find_first_of("#;");
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!known_section(section)) throw fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw fail("expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (section.empty()) throw fail("key '" + key + "' appears before any section");
    const Key* entry = find_key(section, key);
    if (!entry) throw fail("unknown key '" + key + "' in section [" + section + "]");
    const std::string full = section + "." + key;
    if (!seen.insert(full).second) throw fail("duplicate key '" + full + "'");
    if (value.empty()) throw fail("empty value for '" + full + "'");
    try {
      entry->set(cfg, value);
    } catch (const BadValue& e) {
      throw fail(full + ": " + e.message);
    }
    cfg.explicit_keys.push_back(full);
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream out;
  bool first = true;
  for (const auto& [section, keys] : key_table()) {
    if (!first) out << '\n';
    first = false;
    out << '[' << section << "]\n";
    for (const auto& [key, entry] : keys) out << key << " = " << entry.get(cfg) << '\n';
  }
  return out.str();
}

}  // namespace ml2o
