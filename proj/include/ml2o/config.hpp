#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ml2o/eval.hpp"

namespace ml2o {

/// Settings of the `verify` suites.
struct VerifyConfig {
  std::uint64_t seed = 0;
  // grad suite
  std::size_t grad_instances = 20;
  std::size_t grad_dim = 3;
  std::size_t grad_unroll = 5;
  std::size_t grad_hidden = 4;
  double grad_tolerance = 1e-4;
  // jacobian suite
  std::size_t jacobian_instances = 20;
  std::size_t jacobian_dim = 2;
  std::size_t jacobian_unroll = 3;
  std::size_t jacobian_hidden = 3;
  double jacobian_tolerance = 1e-8;
  // gaps suite: task1 from the quadratic training mixture, task2 from N(0, gap_sigma²)
  double gap_radius = 1.0;
  std::size_t gap_probes = 64;
  double gap_sigma = 1.0;
  bool gap_identical = false;
  // growth suite
  std::vector<std::size_t> growth_horizons{1, 2, 5, 10, 20};
  std::size_t growth_pairs = 20;
  std::size_t growth_probes = 2;
  double growth_sigma = 1.0;
  double monotone_fraction = 0.9;
};

/// Everything a command needs; every field has a default.
struct ExperimentConfig {
  EvalConfig eval;
  std::vector<double> sigmas{10.0, 25.0, 50.0, 100.0, 200.0};
  std::vector<double> adapt_sigmas{10.0, 25.0, 50.0, 100.0, 200.0};
  std::vector<double> alphas = default_alpha_grid();
  VerifyConfig verify;
  /// Keys that appeared in the parsed document, as "section.key".
  std::vector<std::string> explicit_keys;

  bool has_key(std::string_view section_key) const;
  void validate() const;
};

/// Parses the sectioned key = value format. Unknown sections or keys, repeated
/// keys and malformed values raise ConfigError naming `source` and the line.
ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& cfg);

}  // namespace ml2o
