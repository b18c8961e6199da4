#pragma once

// Federated learning core: desk-scale learning tasks, local SGD with
// accumulated updates, dropout-aware aggregation and the success ratio.

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mavfl/rng.hpp"

namespace mavfl {

using ModelParams = Eigen::VectorXd;

struct LocalDataset {
  Eigen::MatrixXd features;  // n x d_in
  Eigen::VectorXd labels;    // n
  int owner_id = 0;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
};

struct TrainConfig {
  double learning_rate = 0.01;
  int local_epochs = 1;
  int batch_size = 32;
  /// One step per epoch on the whole dataset instead of shuffled mini-batches.
  bool full_batch = false;

  void validate() const;
};

/// Per-sample loss family. Losses and gradients are means over the rows
/// they are evaluated on.
class LossModel {
 public:
  virtual ~LossModel() = default;

  virtual std::size_t dimension() const = 0;
  virtual bool is_classifier() const { return false; }

  double loss(const ModelParams& w, const LocalDataset& data) const;
  ModelParams gradient(const ModelParams& w, const LocalDataset& data) const;
  ModelParams batch_gradient(const ModelParams& w, const LocalDataset& data,
                             std::span<const Eigen::Index> rows) const;
  /// Fraction of correctly classified rows; 0 for regression models.
  double accuracy(const ModelParams& w, const LocalDataset& data) const;

 protected:
  /// Mean loss over (x, y); fills `grad` with the mean gradient if non-null.
  virtual double evaluate(const ModelParams& w, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          ModelParams* grad) const = 0;
  virtual Eigen::VectorXd predict(const ModelParams& w, const Eigen::MatrixXd& x) const;
};

/// 0.5 (a.w - b)^2 per sample.
class LeastSquaresModel final : public LossModel {
 public:
  explicit LeastSquaresModel(std::size_t input_dim) : dim_(input_dim) {}
  std::size_t dimension() const override { return dim_; }

 protected:
  double evaluate(const ModelParams& w, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                  ModelParams* grad) const override;

 private:
  std::size_t dim_;
};

/// Binary logistic regression, weights followed by a bias term.
class LogisticModel final : public LossModel {
 public:
  explicit LogisticModel(std::size_t input_dim) : input_dim_(input_dim) {}
  std::size_t dimension() const override { return input_dim_ + 1; }
  bool is_classifier() const override { return true; }

 protected:
  double evaluate(const ModelParams& w, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                  ModelParams* grad) const override;
  Eigen::VectorXd predict(const ModelParams& w, const Eigen::MatrixXd& x) const override;

 private:
  std::size_t input_dim_;
};

/// One tanh hidden layer and a sigmoid output trained with cross-entropy.
/// Parameter layout: W1 (hidden x d_in, row-major), b1, w2, b2.
class TinyMlpModel final : public LossModel {
 public:
  TinyMlpModel(std::size_t input_dim, std::size_t hidden) : input_dim_(input_dim), hidden_(hidden) {}
  std::size_t dimension() const override { return hidden_ * (input_dim_ + 2) + 1; }
  bool is_classifier() const override { return true; }

 protected:
  double evaluate(const ModelParams& w, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                  ModelParams* grad) const override;
  Eigen::VectorXd predict(const ModelParams& w, const Eigen::MatrixXd& x) const override;

 private:
  std::size_t input_dim_;
  std::size_t hidden_;
};

enum class TaskKind { quadratic, logistic, tiny_mlp };

TaskKind parse_task_kind(std::string_view name);
std::string_view to_string(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::logistic;
  std::uint64_t seed = 1;
  int num_vehicles = 20;  // number of data shards
  int samples_per_vehicle = 600;
  int dim = 10;           // input dimension
  int test_samples = 2000;
};

/// A learning problem split into local shards. A vehicle with id k trains on
/// shard k mod num_shards; the global objective weighs shards uniformly.
struct Task {
  TaskKind kind = TaskKind::quadratic;
  std::shared_ptr<const LossModel> model;
  std::vector<LocalDataset> shards;
  LocalDataset test_set;  // empty for regression tasks
  ModelParams initial;

  std::size_t dimension() const { return model->dimension(); }
  std::size_t num_shards() const { return shards.size(); }
  std::size_t shard_index(int vehicle_id) const;
  const LocalDataset& shard_for(int vehicle_id) const { return shards[shard_index(vehicle_id)]; }
  std::vector<double> uniform_weights() const;
  /// F(w) with uniform shard weights.
  double global_loss(const ModelParams& w) const;
  ModelParams global_gradient(const ModelParams& w) const;
  /// Test-set accuracy for classifiers, NaN otherwise.
  double test_accuracy(const ModelParams& w) const;
};

Task make_task(const TaskSpec& spec);

/// Least-squares task over explicit (A_k, b_k) shards, starting from `initial`.
Task make_quadratic_task(std::vector<LocalDataset> shards, ModelParams initial);

/// Closed-form minimiser of the uniform-weight least-squares objective.
ModelParams quadratic_optimum(const Task& task);
/// Hessian of the uniform-weight least-squares objective.
Eigen::MatrixXd quadratic_hessian(const Task& task);

struct LocalTrainResult {
  ModelParams update;                       // g = sum over epochs of g^e
  std::vector<ModelParams> epoch_gradients; // g^{e} for e = 0..E-1
  std::vector<ModelParams> epoch_models;    // w^{e} for e = 0..E
  const ModelParams& final_model() const { return epoch_models.back(); }
};

/// E epochs of local SGD from w. Within an epoch every mini-batch step moves
/// the model by lr * (batch fraction) * batch gradient, and the epoch gradient
/// is the matching fraction-weighted sum, so final = w - lr * update holds.
/// Throws DivergedError on non-finite gradients.
LocalTrainResult local_update(const ModelParams& w, const LocalDataset& data,
                              const LossModel& model, const TrainConfig& cfg, Rng& rng);

/// w - lr * mean of the surviving updates, summed in ascending id order.
/// With no survivors the model is returned unchanged.
ModelParams aggregate(const ModelParams& w, const std::map<int, ModelParams>& updates,
                      const std::map<int, int>& indicators, double learning_rate);

/// |survivors| / |selected|. Throws std::domain_error for an empty selection
/// and std::invalid_argument if survivors is not a subset.
double success_ratio(const std::set<int>& selected, const std::set<int>& survivors);

/// Weighted average of per-dataset mean losses. Weights must sum to 1 (1e-9).
double global_loss(const ModelParams& w, const LossModel& model,
                   std::span<const LocalDataset> datasets, std::span<const double> weights);

struct RoundOutcome {
  std::set<int> selected;
  std::set<int> survivors;
  double ratio = 0.0;
  ModelParams new_global;
  std::map<int, double> aggregation_weights;
};

}  // namespace mavfl
