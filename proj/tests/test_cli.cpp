#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ml2o/cli.hpp"
#include "ml2o/eval.hpp"

namespace fs = std::filesystem;
using namespace ml2o;

namespace {

constexpr const char* kTinyConfig = R"([train]
epochs = 4
unroll = 5
hidden = 4
task_epochs = 2
[adapt]
steps = 1
alpha = 0.01
unroll = 5
clip_norm = 1
distribution = normal
sigma = 10
[test]
distribution = normal
sigma = 10
horizon = 8
[eval]
n_seeds = 2
sigmas = 10
adapt_sigmas = 10
alphas = 0,0.5,1
[verify]
grad_instances = 3
jacobian_instances = 3
gap_probes = 8
growth_pairs = 2
growth_horizons = 1,2
)";

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ml2o_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write_file(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path.string();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Drops the last CSV column (wall-clock time) from every line.
std::string without_wall_time(const std::string& csv) {
  std::istringstream in(csv);
  std::string out;
  for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

bool contains(const std::string& s, const std::string& part) {
  return s.find(part) != std::string::npos;
}

}  // namespace

TEST_CASE("usage errors exit with the config code") {
  CHECK(cli({}).code == kExitConfig);
  CHECK(cli({"frobnicate"}).code == kExitConfig);
  CHECK(cli({"verify", "--suite", "grad"}).code == kExitConfig);  // --out is required
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("config problems exit 2 and name the file") {
  const auto dir = fresh_dir("config");
  const auto missing = (dir / "nope.ini").string();
  const Run r = cli({"verify", "--suite", "grad", "-c", missing, "-o", (dir / "o").string()});
  CHECK(r.code == kExitConfig);
  CHECK(contains(r.err, missing));

  const auto bad = write_file(dir / "bad.ini", "[train]\nepochs = 3\nwat = 1\n");
  const Run u = cli({"meta-train", "-c", bad, "-o", (dir / "o2").string()});
  CHECK(u.code == kExitConfig);
  CHECK(contains(u.err, "bad.ini:3:"));

  const auto tiny = write_file(dir / "tiny.ini", kTinyConfig);
  CHECK(cli({"compare", "-c", tiny, "-o", (dir / "o3").string(), "--sigmas", "-1"}).code ==
        kExitConfig);
  fs::remove_all(dir);
}

TEST_CASE("verify suites") {
  const auto dir = fresh_dir("verify");
  const auto tiny = write_file(dir / "tiny.ini", kTinyConfig);
  for (const std::string suite : {"grad", "jacobian", "gaps", "growth"}) {
    CAPTURE(suite);
    const auto out = dir / suite;
    const Run r = cli({"verify", "--suite", suite, "-c", tiny, "-o", out.string()});
    CHECK(r.code == kExitOk);
    CHECK(fs::exists(out / "report.json"));
    CHECK(fs::exists(out / "resolved_config.ini"));
  }
  CHECK(fs::exists(dir / "growth" / "growth.csv"));

  const auto same = write_file(dir / "same.ini",
                               std::string(kTinyConfig) + "gap_identical = true\n");
  const Run r = cli({"verify", "--suite", "gaps", "-c", same, "-o", (dir / "same").string()});
  CHECK(r.code == kExitOk);
  const auto report = read_json(dir / "same" / "report.json");
  CHECK(report.at("delta12").get<double>() == 0.0);
  CHECK(report.at("delta12_tilde").get<double>() == 0.0);

  CHECK(cli({"verify", "--suite", "nope", "-c", tiny, "-o", (dir / "x").string()}).code ==
        kExitConfig);

  // an impossible tolerance fails and leaves the worst case behind
  const auto strict = write_file(dir / "strict.ini",
                                 std::string(kTinyConfig) + "grad_tolerance = 1e-300\n");
  const Run f = cli({"verify", "--suite", "grad", "-c", strict, "-o", (dir / "strict").string()});
  CHECK(f.code == kExitVerifyFailed);
  CHECK(fs::exists(dir / "strict" / "worst_case.json"));
  fs::remove_all(dir);
}

TEST_CASE("meta-train is reproducible and stays inside --out") {
  const auto root = fresh_dir("train");
  const auto cfg_dir = fresh_dir("train_cfg");
  const auto tiny = write_file(cfg_dir / "tiny.ini", kTinyConfig);
  const auto a = root / "a";
  const auto b = root / "b";
  CHECK(cli({"meta-train", "-c", tiny, "-o", a.string()}).code == kExitOk);
  CHECK(cli({"meta-train", "-c", tiny, "-o", b.string(), "-j", "1"}).code == kExitOk);
  CHECK(slurp(a / "checkpoint.ml2o") == slurp(b / "checkpoint.ml2o"));
  CHECK(without_wall_time(slurp(a / "train_log.csv")) ==
        without_wall_time(slurp(b / "train_log.csv")));
  CHECK(slurp(a / "resolved_config.ini") == slurp(b / "resolved_config.ini"));

  std::vector<fs::path> top;
  for (const auto& e : fs::directory_iterator(root)) top.push_back(e.path().filename());
  std::sort(top.begin(), top.end());
  CHECK(top == std::vector<fs::path>{"a", "b"});
  std::vector<fs::path> cfg_files;
  for (const auto& e : fs::directory_iterator(cfg_dir)) cfg_files.push_back(e.path().filename());
  CHECK(cfg_files == std::vector<fs::path>{"tiny.ini"});
  fs::remove_all(root);
  fs::remove_all(cfg_dir);
}

TEST_CASE("plain training warns about an explicit alpha") {
  const auto dir = fresh_dir("plain");
  const auto with_alpha = write_file(
      dir / "a.ini", "[train]\nepochs = 2\nunroll = 3\nhidden = 3\nalpha = 0.2\n");
  const Run r = cli({"meta-train", "--method", "plain", "-c", with_alpha, "-o",
                     (dir / "o").string()});
  CHECK(r.code == kExitOk);
  CHECK(contains(r.err, "train.alpha is ignored by plain training"));

  const auto no_alpha = write_file(dir / "b.ini", "[train]\nepochs = 2\nunroll = 3\nhidden = 3\n");
  const Run q = cli({"meta-train", "--method", "plain", "-c", no_alpha, "-o",
                     (dir / "p").string()});
  CHECK(q.code == kExitOk);
  CHECK_FALSE(contains(q.err, "ignored"));
  fs::remove_all(dir);
}

TEST_CASE("divergent training exits 3 and keeps the last good checkpoint") {
  const auto dir = fresh_dir("diverge");
  const auto cfg = write_file(dir / "d.ini",
                              "[train]\nepochs = 200\nunroll = 5\nhidden = 4\ntask_epochs = 3\n"
                              "outer = sgd\nsgd_beta = 1e12\nsgd_mu = 1e-12\n"
                              "distribution = normal\nsigma = 1000\n");
  const Run r = cli({"meta-train", "--method", "plain", "-c", cfg, "-o", (dir / "o").string()});
  CHECK(r.code == kExitDivergence);
  CHECK(fs::exists(dir / "o" / "checkpoint_last_good.ml2o"));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint workflow: adapt, evaluate, interpolate") {
  const auto dir = fresh_dir("workflow");
  const auto tiny = write_file(dir / "tiny.ini", kTinyConfig);
  REQUIRE(cli({"meta-train", "-c", tiny, "-o", (dir / "m").string()}).code == kExitOk);
  REQUIRE(cli({"meta-train", "--method", "plain", "-c", tiny, "-o", (dir / "p").string()}).code ==
          kExitOk);
  const auto ml = (dir / "m" / "checkpoint.ml2o").string();
  const auto plain = (dir / "p" / "checkpoint.ml2o").string();

  CHECK(cli({"adapt", "--checkpoint", ml, "-c", tiny, "-o", (dir / "ad").string()}).code ==
        kExitOk);
  CHECK(fs::exists(dir / "ad" / "adapted.ml2o"));
  CHECK(fs::exists(dir / "ad" / "adapt_log.csv"));

  CHECK(cli({"evaluate", "--checkpoint", ml, "-c", tiny, "-o", (dir / "ev").string()}).code ==
        kExitOk);
  CHECK(fs::exists(dir / "ev" / "summary.json"));
  CHECK(fs::exists(dir / "ev" / "records.csv"));

  const Run i = cli({"interpolate", "--w1", ml, "--w2", plain, "-c", tiny, "-o",
                     (dir / "in").string()});
  CHECK(i.code == kExitOk);
  CHECK(fs::exists(dir / "in" / "interpolation.json"));
  CHECK(fs::exists(dir / "in" / "curves" / "alpha_00.csv"));

  // identical endpoints give the same curve at every alpha
  const Run flat = cli({"interpolate", "--w1", ml, "--w2", ml, "-c", tiny, "-o",
                        (dir / "flat").string()});
  CHECK(flat.code == kExitOk);
  const std::string c0 = slurp(dir / "flat" / "curves" / "alpha_00.csv");
  CHECK(slurp(dir / "flat" / "curves" / "alpha_01.csv") == c0);
  CHECK(slurp(dir / "flat" / "curves" / "alpha_02.csv") == c0);

  // a checkpoint with a different hidden size cannot be blended
  const auto other_cfg = write_file(
      dir / "other.ini", "[train]\nepochs = 1\nunroll = 3\nhidden = 5\n");
  REQUIRE(cli({"meta-train", "-c", other_cfg, "-o", (dir / "w").string()}).code == kExitOk);
  const Run mismatch = cli({"interpolate", "--w1", ml, "--w2",
                            (dir / "w" / "checkpoint.ml2o").string(), "-c", tiny, "-o",
                            (dir / "mm").string()});
  CHECK(mismatch.code == kExitConfig);
  CHECK(contains(mismatch.err, "shape mismatch"));
  fs::remove_all(dir);
}

TEST_CASE("compare and sweep write tables") {
  const auto dir = fresh_dir("compare");
  const auto tiny = write_file(dir / "tiny.ini", kTinyConfig);
  const Run c = cli({"compare", "-c", tiny, "-o", (dir / "c").string()});
  CHECK(c.code == kExitOk);
  const auto table = table_from_json(read_json(dir / "c" / "comparison.json"));
  CHECK(table.cells.size() == 4);
  CHECK(fs::exists(dir / "c" / "comparison.csv"));
  CHECK(fs::exists(dir / "c" / "records.csv"));
  CHECK(contains(c.out, "vanilla"));

  const Run s = cli({"sweep", "-c", tiny, "-o", (dir / "s").string()});
  CHECK(s.code == kExitOk);
  CHECK(table_from_json(read_json(dir / "s" / "sweep.json")).cells.size() == 2);
  fs::remove_all(dir);
}
