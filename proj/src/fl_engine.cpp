#include "mavfl/fl_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "mavfl/errors.hpp"

namespace mavfl {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void require_finite(const ModelParams& v, const char* what) {
  if (!v.allFinite()) throw DivergedError(fmt::format("non-finite {} during local training", what));
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (local_epochs < 1) throw std::invalid_argument("need at least one local epoch");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
}

// ---------------------------------------------------------------------------
// LossModel

double LossModel::loss(const ModelParams& w, const LocalDataset& data) const {
  return evaluate(w, data.features, data.labels, nullptr);
}

ModelParams LossModel::gradient(const ModelParams& w, const LocalDataset& data) const {
  ModelParams g;
  evaluate(w, data.features, data.labels, &g);
  return g;
}

ModelParams LossModel::batch_gradient(const ModelParams& w, const LocalDataset& data,
                                      std::span<const Eigen::Index> rows) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), data.features.cols());
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    x.row(r) = data.features.row(rows[i]);
    y(r) = data.labels(rows[i]);
  }
  ModelParams g;
  evaluate(w, x, y, &g);
  return g;
}

double LossModel::accuracy(const ModelParams& w, const LocalDataset& data) const {
  if (!is_classifier() || data.size() == 0) return 0.0;
  const Eigen::VectorXd prob = predict(w, data.features);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < prob.size(); ++i) {
    if ((prob(i) >= 0.5) == (data.labels(i) > 0.5)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Eigen::VectorXd LossModel::predict(const ModelParams&, const Eigen::MatrixXd& x) const {
  return Eigen::VectorXd::Zero(x.rows());
}

double LeastSquaresModel::evaluate(const ModelParams& w, const Eigen::MatrixXd& x,
                                   const Eigen::VectorXd& y, ModelParams* grad) const {
  const double n = static_cast<double>(x.rows());
  const Eigen::VectorXd residual = x * w - y;
  if (grad) *grad = x.transpose() * residual / n;
  return 0.5 * residual.squaredNorm() / n;
}

double LogisticModel::evaluate(const ModelParams& w, const Eigen::MatrixXd& x,
                               const Eigen::VectorXd& y, ModelParams* grad) const {
  const auto d = static_cast<Eigen::Index>(input_dim_);
  const double n = static_cast<double>(x.rows());
  const Eigen::VectorXd z = (x * w.head(d)).array() + w(d);
  double total = 0.0;
  Eigen::VectorXd residual(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    total += softplus(z(i)) - y(i) * z(i);
    residual(i) = sigmoid(z(i)) - y(i);
  }
  if (grad) {
    grad->resize(d + 1);
    grad->head(d) = x.transpose() * residual / n;
    (*grad)(d) = residual.sum() / n;
  }
  return total / n;
}

Eigen::VectorXd LogisticModel::predict(const ModelParams& w, const Eigen::MatrixXd& x) const {
  const auto d = static_cast<Eigen::Index>(input_dim_);
  const Eigen::VectorXd z = (x * w.head(d)).array() + w(d);
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

double TinyMlpModel::evaluate(const ModelParams& w, const Eigen::MatrixXd& x,
                              const Eigen::VectorXd& y, ModelParams* grad) const {
  const auto d = static_cast<Eigen::Index>(input_dim_);
  const auto h = static_cast<Eigen::Index>(hidden_);
  const double n = static_cast<double>(x.rows());
  Eigen::Map<const RowMajor> w1(w.data(), h, d);
  const auto b1 = w.segment(h * d, h);
  const auto w2 = w.segment(h * d + h, h);
  const double b2 = w(h * d + 2 * h);

  const Eigen::MatrixXd act = ((x * w1.transpose()).rowwise() + b1.transpose()).array().tanh();
  const Eigen::VectorXd z = (act * w2).array() + b2;
  double total = 0.0;
  Eigen::VectorXd residual(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    total += softplus(z(i)) - y(i) * z(i);
    residual(i) = (sigmoid(z(i)) - y(i)) / n;
  }
  if (grad) {
    grad->resize(static_cast<Eigen::Index>(dimension()));
    const Eigen::MatrixXd d_act =
        (residual * w2.transpose()).array() * (1.0 - act.array().square());
    Eigen::Map<RowMajor> g1(grad->data(), h, d);
    g1 = d_act.transpose() * x;
    grad->segment(h * d, h) = d_act.colwise().sum().transpose();
    grad->segment(h * d + h, h) = act.transpose() * residual;
    (*grad)(h * d + 2 * h) = residual.sum();
  }
  return total / n;
}

Eigen::VectorXd TinyMlpModel::predict(const ModelParams& w, const Eigen::MatrixXd& x) const {
  const auto d = static_cast<Eigen::Index>(input_dim_);
  const auto h = static_cast<Eigen::Index>(hidden_);
  Eigen::Map<const RowMajor> w1(w.data(), h, d);
  const auto b1 = w.segment(h * d, h);
  const auto w2 = w.segment(h * d + h, h);
  const double b2 = w(h * d + 2 * h);
  const Eigen::MatrixXd act = ((x * w1.transpose()).rowwise() + b1.transpose()).array().tanh();
  const Eigen::VectorXd z = (act * w2).array() + b2;
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

// ---------------------------------------------------------------------------
// Training and aggregation

LocalTrainResult local_update(const ModelParams& w, const LocalDataset& data,
                              const LossModel& model, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (static_cast<std::size_t>(w.size()) != model.dimension()) {
    throw std::invalid_argument(fmt::format("model has {} parameters, task expects {}", w.size(),
                                            model.dimension()));
  }
  if (data.size() == 0) throw std::invalid_argument("local dataset is empty");

  const auto n = static_cast<Eigen::Index>(data.size());
  LocalTrainResult result;
  result.update = ModelParams::Zero(w.size());
  result.epoch_models.reserve(static_cast<std::size_t>(cfg.local_epochs) + 1);
  result.epoch_models.push_back(w);

  ModelParams current = w;
  std::vector<Eigen::Index> order(data.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const bool full = cfg.full_batch || cfg.batch_size >= n;

  for (int e = 0; e < cfg.local_epochs; ++e) {
    ModelParams epoch_grad = ModelParams::Zero(w.size());
    if (full) {
      epoch_grad = model.gradient(current, data);
      require_finite(epoch_grad, "gradient");
      current -= cfg.learning_rate * epoch_grad;
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
        const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - start);
        std::span<const Eigen::Index> rows(order.data() + start, static_cast<std::size_t>(len));
        const double frac = static_cast<double>(len) / static_cast<double>(n);
        const ModelParams g = model.batch_gradient(current, data, rows);
        require_finite(g, "gradient");
        current -= cfg.learning_rate * frac * g;
        epoch_grad += frac * g;
      }
    }
    require_finite(current, "model");
    result.update += epoch_grad;
    result.epoch_gradients.push_back(epoch_grad);
    result.epoch_models.push_back(current);
  }
  return result;
}

ModelParams aggregate(const ModelParams& w, const std::map<int, ModelParams>& updates,
                      const std::map<int, int>& indicators, double learning_rate) {
  ModelParams sum = ModelParams::Zero(w.size());
  int survivors = 0;
  for (const auto& [id, g] : updates) {
    auto it = indicators.find(id);
    if (it == indicators.end()) {
      throw std::invalid_argument(fmt::format("no dropout indicator for vehicle {}", id));
    }
    if (it->second == 1) {
      sum += g;
      ++survivors;
    }
  }
  if (survivors == 0) return w;
  return w - learning_rate * (sum / static_cast<double>(survivors));
}

double success_ratio(const std::set<int>& selected, const std::set<int>& survivors) {
  if (selected.empty()) throw std::domain_error("success ratio undefined for an empty selection");
  if (!std::includes(selected.begin(), selected.end(), survivors.begin(), survivors.end())) {
    throw std::invalid_argument("survivors must be a subset of the selected vehicles");
  }
  return static_cast<double>(survivors.size()) / static_cast<double>(selected.size());
}

double global_loss(const ModelParams& w, const LossModel& model,
                   std::span<const LocalDataset> datasets, std::span<const double> weights) {
  if (datasets.size() != weights.size()) {
    throw std::invalid_argument("one weight per dataset required");
  }
  const double total_weight = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total_weight - 1.0) > 1e-9) {
    throw std::invalid_argument(fmt::format("aggregation weights sum to {}, expected 1", total_weight));
  }
  double value = 0.0;
  for (std::size_t k = 0; k < datasets.size(); ++k) value += weights[k] * model.loss(w, datasets[k]);
  return value;
}

}  // namespace mavfl
