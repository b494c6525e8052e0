#include "ml2o/optimizee.hpp"

#include <cmath>
#include <sstream>

namespace ml2o {

namespace {

void require_dim(const OptimizeeTask& task, const Vector& v, const char* what) {
  if (v.size() != task.dim()) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(task.dim()) +
                         ", got " + std::to_string(v.size()));
  }
}

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// ½‖Aθ−b‖² and Aᵀ(Aθ−b)
LossAndGrad least_squares(const OptimizeeTask& task, const Vector& theta) {
  Vector residual = matvec(task.a(), theta);
  residual -= task.b();
  return {0.5 * dot(residual, residual), matvec_transposed(task.a(), residual)};
}

}  // namespace

OptimizeeTask::OptimizeeTask(TaskKind kind, std::size_t dim, Matrix a, Vector b, double lambda)
    : kind_(kind), dim_(dim), a_(std::move(a)), b_(std::move(b)), lambda_(lambda) {
  if (kind_ != TaskKind::Rosenbrock) {
    if (a_.rows() != a_.cols() || a_.rows() != b_.size() || b_.empty()) {
      throw DimensionError("task: A must be d x d and b length d");
    }
    if (!(lambda_ >= 0.0)) throw Error("task: lambda must be nonnegative");
    gram_ = ml2o::gram(a_);
    atb_ = matvec_transposed(a_, b_);
  }
}

OptimizeeTask OptimizeeTask::lasso(Matrix a, Vector b, double lambda) {
  const std::size_t d = b.size();
  return {TaskKind::Lasso, d, std::move(a), std::move(b), lambda};
}

OptimizeeTask OptimizeeTask::quadratic(Matrix a, Vector b) {
  const std::size_t d = b.size();
  return {TaskKind::Quadratic, d, std::move(a), std::move(b), 0.0};
}

OptimizeeTask OptimizeeTask::rosenbrock() { return {TaskKind::Rosenbrock, 2, {}, {}, 0.0}; }

double OptimizeeTask::loss(const Vector& theta) const { return evaluate_task(*this, theta).loss; }

Vector OptimizeeTask::grad(const Vector& theta) const {
  return evaluate_task(*this, theta).grad;
}

Vector OptimizeeTask::hvp(const Vector& theta, const Vector& v) const {
  return task_hvp(*this, theta, v);
}

std::uint64_t OptimizeeTask::hash() const {
  std::uint64_t h = hash_label(to_string(kind_));
  const double header[] = {static_cast<double>(dim_), lambda_};
  h = fnv1a(std::as_bytes(std::span<const double>(header)), h);
  h = fnv1a(std::as_bytes(a_.flat()), h);
  h = fnv1a(std::as_bytes(b_.span()), h);
  return h;
}

LossAndGrad lasso_eval(const OptimizeeTask& task, const Vector& theta) {
  if (task.kind() != TaskKind::Lasso) throw Error("lasso_eval: task is not a LASSO task");
  require_dim(task, theta, "lasso_eval");
  LossAndGrad out = least_squares(task, theta);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    out.loss += task.lambda() * std::abs(theta[i]);
    out.grad[i] += task.lambda() * sign0(theta[i]);
  }
  return out;
}

LossAndGrad quadratic_eval(const OptimizeeTask& task, const Vector& theta) {
  if (task.kind() != TaskKind::Quadratic) throw Error("quadratic_eval: task is not quadratic");
  require_dim(task, theta, "quadratic_eval");
  return least_squares(task, theta);
}

LossAndGrad rosenbrock_eval(const OptimizeeTask& task, const Vector& theta) {
  if (task.kind() != TaskKind::Rosenbrock) throw Error("rosenbrock_eval: not a Rosenbrock task");
  require_dim(task, theta, "rosenbrock_eval");
  const double x = theta[0];
  const double y = theta[1];
  const double r = y - x * x;
  return {(x - 1.0) * (x - 1.0) + 100.0 * r * r,
          Vector{2.0 * (x - 1.0) - 400.0 * x * r, 200.0 * r}};
}

LossAndGrad evaluate_task(const OptimizeeTask& task, const Vector& theta) {
  switch (task.kind()) {
    case TaskKind::Lasso:
      return lasso_eval(task, theta);
    case TaskKind::Quadratic:
      return quadratic_eval(task, theta);
    case TaskKind::Rosenbrock:
      return rosenbrock_eval(task, theta);
  }
  throw Error("evaluate_task: unknown task kind");
}

Vector task_hvp(const OptimizeeTask& task, const Vector& theta, const Vector& v) {
  require_dim(task, theta, "task_hvp theta");
  require_dim(task, v, "task_hvp v");
  if (task.kind() == TaskKind::Rosenbrock) {
    const double x = theta[0];
    const double y = theta[1];
    const double hxx = 2.0 - 400.0 * (y - x * x) + 800.0 * x * x;
    const double hxy = -400.0 * x;
    const double hyy = 200.0;
    return Vector{hxx * v[0] + hxy * v[1], hxy * v[0] + hyy * v[1]};
  }
  // the ℓ₁ term has zero curvature away from the kinks
  return matvec(task.gram(), v);
}

TaskDistribution TaskDistribution::train_mixture(ProblemFamily family, std::size_t dim,
                                                 double lambda) {
  return {DistKind::TrainMixture, family, 0.0, dim, lambda};
}

TaskDistribution TaskDistribution::normal_sigma(ProblemFamily family, double sigma,
                                                std::size_t dim, double lambda) {
  return {DistKind::NormalSigma, family, sigma, dim, lambda};
}

TaskDistribution TaskDistribution::rosenbrock_init() {
  return {DistKind::RosenbrockInit, ProblemFamily::Lasso, 0.0, 2, 0.0};
}

std::size_t TaskDistribution::task_dim() const noexcept {
  return kind == DistKind::RosenbrockInit ? 2 : dim;
}

void TaskDistribution::validate() const {
  if (kind == DistKind::NormalSigma && !(sigma > 0.0)) {
    throw Error("task distribution: NormalSigma requires sigma > 0");
  }
  if (kind != DistKind::RosenbrockInit && dim == 0) {
    throw Error("task distribution: dim must be positive");
  }
  if (!(lambda >= 0.0)) throw Error("task distribution: lambda must be nonnegative");
}

std::string TaskDistribution::describe() const {
  std::ostringstream os;
  os << to_string(kind);
  if (kind != DistKind::RosenbrockInit) {
    os << "(" << to_string(family) << ", d=" << dim;
    if (kind == DistKind::NormalSigma) os << ", sigma=" << sigma;
    if (family == ProblemFamily::Lasso) os << ", lambda=" << lambda;
    os << ")";
  }
  return os.str();
}

TaskDistribution with_sigma(TaskDistribution dist, double sigma) {
  if (dist.kind == DistKind::NormalSigma) dist.sigma = sigma;
  return dist;
}

OptimizeeTask sample_task(const TaskDistribution& dist, RngStream& rng) {
  dist.validate();
  const std::uint64_t task_seed = rng.next_u64();
  if (dist.kind == DistKind::RosenbrockInit) {
    OptimizeeTask task = OptimizeeTask::rosenbrock();
    task.provenance_seed = task_seed;
    return task;
  }
  const RngStream task_rng(task_seed);
  RngStream a_rng = task_rng.split("A");
  RngStream b_rng = task_rng.split("b");
  const std::size_t d = dist.dim;
  const Vector entries = dist.kind == DistKind::TrainMixture
                             ? uniform_mixture_sample(a_rng, d * d, kTrainMixtureRanges)
                             : gauss_sample(a_rng, d * d, 0.0, dist.sigma);
  Matrix a(d, d);
  std::copy(entries.begin(), entries.end(), a.flat().begin());
  Vector b = gauss_sample(b_rng, d, 0.0, 1.0);
  OptimizeeTask task = dist.family == ProblemFamily::Lasso
                           ? OptimizeeTask::lasso(std::move(a), std::move(b), dist.lambda)
                           : OptimizeeTask::quadratic(std::move(a), std::move(b));
  task.provenance_seed = task_seed;
  return task;
}

Vector sample_theta0(const TaskDistribution& dist, RngStream& rng) {
  dist.validate();
  return gauss_sample(rng, dist.task_dim(), 0.0, 1.0);
}

nlohmann::json task_to_json(const OptimizeeTask& task) {
  nlohmann::json doc;
  doc["kind"] = to_string(task.kind());
  doc["dim"] = task.dim();
  if (task.kind() != TaskKind::Rosenbrock) {
    doc["A"] = std::vector<double>(task.a().flat().begin(), task.a().flat().end());
    doc["b"] = task.b().values();
    doc["lambda"] = task.lambda();
  }
  if (task.provenance_seed) doc["seed"] = *task.provenance_seed;
  return doc;
}

OptimizeeTask task_from_json(const nlohmann::json& doc) {
  const std::string kind = doc.at("kind").get<std::string>();
  std::optional<OptimizeeTask> task;
  if (kind == "rosenbrock") {
    task = OptimizeeTask::rosenbrock();
  } else {
    const auto d = doc.at("dim").get<std::size_t>();
    const auto flat = doc.at("A").get<std::vector<double>>();
    if (flat.size() != d * d) throw DimensionError("task json: A has wrong entry count");
    Matrix a(d, d);
    std::copy(flat.begin(), flat.end(), a.flat().begin());
    Vector b(doc.at("b").get<std::vector<double>>());
    if (kind == "lasso") {
      task = OptimizeeTask::lasso(std::move(a), std::move(b), doc.at("lambda").get<double>());
    } else if (kind == "quadratic") {
      task = OptimizeeTask::quadratic(std::move(a), std::move(b));
    } else {
      throw Error("task json: unknown kind '" + kind + "'");
    }
  }
  if (doc.contains("seed")) task->provenance_seed = doc.at("seed").get<std::uint64_t>();
  return *task;
}

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Lasso:
      return "lasso";
    case TaskKind::Quadratic:
      return "quadratic";
    case TaskKind::Rosenbrock:
      return "rosenbrock";
  }
  return "?";
}

const char* to_string(DistKind kind) {
  switch (kind) {
    case DistKind::TrainMixture:
      return "mixture";
    case DistKind::NormalSigma:
      return "normal";
    case DistKind::RosenbrockInit:
      return "rosenbrock";
  }
  return "?";
}

const char* to_string(ProblemFamily family) {
  return family == ProblemFamily::Lasso ? "lasso" : "quadratic";
}

}  // namespace ml2o
