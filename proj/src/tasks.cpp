// Synthetic desk-scale learning tasks.

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "mavfl/fl_engine.hpp"

namespace mavfl {

namespace {

// Logistic task: class means at +/- kClassSeparation * e1, isotropic unit
// noise plus a strong shared nuisance component along (e1 + e2)/sqrt(2).
// The mean-difference direction is therefore far from the Bayes direction and
// gradient descent needs many rounds to rotate towards it.
constexpr double kClassSeparation = 1.0;
constexpr double kNuisanceScale = 3.0;

constexpr int kMlpHidden = 8;
constexpr double kMlpInitScale = 0.5;

// Stream index reserved for data that does not belong to a vehicle shard.
constexpr std::uint64_t kSharedStream = 1ULL << 40;
constexpr std::uint64_t kTestStream = (1ULL << 40) + 1;

double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

LocalDataset quadratic_shard(int owner, int samples, const ModelParams& w_true, Rng& rng) {
  const auto d = w_true.size();
  LocalDataset out;
  out.owner_id = owner;
  out.features.resize(samples, d);
  out.labels.resize(samples);
  for (int i = 0; i < samples; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) out.features(i, j) = standard_normal(rng);
    out.labels(i) = out.features.row(i).dot(w_true) + 0.1 * standard_normal(rng);
  }
  return out;
}

LocalDataset logistic_shard(int owner, int samples, int dim, Rng& rng) {
  LocalDataset out;
  out.owner_id = owner;
  out.features.resize(samples, dim);
  out.labels.resize(samples);
  std::bernoulli_distribution coin(0.5);
  const double axis = dim >= 2 ? 1.0 / std::sqrt(2.0) : 1.0;
  for (int i = 0; i < samples; ++i) {
    const bool positive = coin(rng);
    const double sign = positive ? 1.0 : -1.0;
    const double nuisance = kNuisanceScale * standard_normal(rng);
    for (int j = 0; j < dim; ++j) out.features(i, j) = standard_normal(rng);
    out.features(i, 0) += sign * kClassSeparation + nuisance * axis;
    if (dim >= 2) out.features(i, 1) += nuisance * axis;
    out.labels(i) = positive ? 1.0 : 0.0;
  }
  return out;
}

LocalDataset quadrant_shard(int owner, int samples, int dim, Rng& rng) {
  LocalDataset out;
  out.owner_id = owner;
  out.features.resize(samples, dim);
  out.labels.resize(samples);
  for (int i = 0; i < samples; ++i) {
    for (int j = 0; j < dim; ++j) out.features(i, j) = standard_normal(rng);
    out.labels(i) = out.features(i, 0) * out.features(i, 1) > 0.0 ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace

TaskKind parse_task_kind(std::string_view name) {
  if (name == "quadratic") return TaskKind::quadratic;
  if (name == "logistic") return TaskKind::logistic;
  if (name == "tiny_mlp") return TaskKind::tiny_mlp;
  throw std::invalid_argument(fmt::format("unknown task kind '{}'", name));
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::quadratic: return "quadratic";
    case TaskKind::logistic: return "logistic";
    case TaskKind::tiny_mlp: return "tiny_mlp";
  }
  return "?";
}

std::size_t Task::shard_index(int vehicle_id) const {
  if (vehicle_id < 0) throw std::invalid_argument("vehicle ids must be non-negative");
  return static_cast<std::size_t>(vehicle_id) % shards.size();
}

std::vector<double> Task::uniform_weights() const {
  return std::vector<double>(shards.size(), 1.0 / static_cast<double>(shards.size()));
}

double Task::global_loss(const ModelParams& w) const {
  const auto weights = uniform_weights();
  return mavfl::global_loss(w, *model, shards, weights);
}

ModelParams Task::global_gradient(const ModelParams& w) const {
  ModelParams g = ModelParams::Zero(w.size());
  for (const auto& shard : shards) g += model->gradient(w, shard);
  return g / static_cast<double>(shards.size());
}

double Task::test_accuracy(const ModelParams& w) const {
  if (!model->is_classifier() || test_set.size() == 0) return std::nan("");
  return model->accuracy(w, test_set);
}

Task make_task(const TaskSpec& spec) {
  if (spec.num_vehicles < 1 || spec.samples_per_vehicle < 1 || spec.dim < 1) {
    throw std::invalid_argument("task sizes must be positive");
  }
  Task task;
  task.kind = spec.kind;
  switch (spec.kind) {
    case TaskKind::quadratic: {
      task.model = std::make_shared<LeastSquaresModel>(spec.dim);
      Rng shared = make_stream(spec.seed, Stream::task_data, kSharedStream);
      ModelParams w_true(spec.dim);
      for (int j = 0; j < spec.dim; ++j) w_true(j) = standard_normal(shared);
      for (int k = 0; k < spec.num_vehicles; ++k) {
        Rng rng = make_stream(spec.seed, Stream::task_data, static_cast<std::uint64_t>(k));
        task.shards.push_back(quadratic_shard(k, spec.samples_per_vehicle, w_true, rng));
      }
      task.initial = ModelParams::Zero(spec.dim);
      break;
    }
    case TaskKind::logistic: {
      task.model = std::make_shared<LogisticModel>(spec.dim);
      for (int k = 0; k < spec.num_vehicles; ++k) {
        Rng rng = make_stream(spec.seed, Stream::task_data, static_cast<std::uint64_t>(k));
        task.shards.push_back(logistic_shard(k, spec.samples_per_vehicle, spec.dim, rng));
      }
      Rng test = make_stream(spec.seed, Stream::task_data, kTestStream);
      task.test_set = logistic_shard(-1, spec.test_samples, spec.dim, test);
      task.initial = ModelParams::Zero(spec.dim + 1);
      break;
    }
    case TaskKind::tiny_mlp: {
      auto model = std::make_shared<TinyMlpModel>(spec.dim, kMlpHidden);
      if (model->dimension() > 1000) {
        throw std::invalid_argument("tiny_mlp input dimension too large for a 1000-parameter model");
      }
      task.model = model;
      for (int k = 0; k < spec.num_vehicles; ++k) {
        Rng rng = make_stream(spec.seed, Stream::task_data, static_cast<std::uint64_t>(k));
        task.shards.push_back(quadrant_shard(k, spec.samples_per_vehicle, spec.dim, rng));
      }
      Rng test = make_stream(spec.seed, Stream::task_data, kTestStream);
      task.test_set = quadrant_shard(-1, spec.test_samples, spec.dim, test);
      Rng init = make_stream(spec.seed, Stream::task_data, kSharedStream);
      task.initial.resize(static_cast<Eigen::Index>(model->dimension()));
      for (Eigen::Index i = 0; i < task.initial.size(); ++i) {
        task.initial(i) = kMlpInitScale * standard_normal(init);
      }
      break;
    }
  }
  return task;
}

Task make_quadratic_task(std::vector<LocalDataset> shards, ModelParams initial) {
  if (shards.empty()) throw std::invalid_argument("need at least one shard");
  const auto d = shards.front().features.cols();
  for (const auto& s : shards) {
    if (s.features.cols() != d || s.labels.size() != s.features.rows() || s.size() == 0) {
      throw std::invalid_argument("inconsistent least-squares shards");
    }
  }
  if (initial.size() != d) throw std::invalid_argument("initial model has the wrong dimension");
  Task task;
  task.kind = TaskKind::quadratic;
  task.model = std::make_shared<LeastSquaresModel>(static_cast<std::size_t>(d));
  task.shards = std::move(shards);
  task.initial = std::move(initial);
  return task;
}

Eigen::MatrixXd quadratic_hessian(const Task& task) {
  if (task.kind != TaskKind::quadratic) throw std::invalid_argument("not a least-squares task");
  const auto d = static_cast<Eigen::Index>(task.dimension());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
  for (const auto& s : task.shards) {
    h += s.features.transpose() * s.features / static_cast<double>(s.size());
  }
  return h / static_cast<double>(task.num_shards());
}

ModelParams quadratic_optimum(const Task& task) {
  const Eigen::MatrixXd h = quadratic_hessian(task);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(h.rows());
  for (const auto& s : task.shards) {
    rhs += s.features.transpose() * s.labels / static_cast<double>(s.size());
  }
  rhs /= static_cast<double>(task.num_shards());
  return h.ldlt().solve(rhs);
}

}  // namespace mavfl
