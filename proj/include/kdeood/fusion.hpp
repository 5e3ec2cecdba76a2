#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdeood/error.hpp"
#include "kdeood/matrix.hpp"

namespace kdeood {

enum class Label : std::uint8_t { negative = 0, positive = 1 };

/// Per-sample per-layer scores, optionally labelled (positive = in-distribution).
struct ScoreTable {
  std::vector<std::string> sample_ids;
  std::vector<std::string> layer_ids;  // canonical layer order
  Matrix<double> scores;               // n x L
  std::vector<Label> labels;           // empty when unlabelled

  std::size_t rows() const noexcept { return scores.rows(); }
  std::size_t n_layers() const noexcept { return scores.cols(); }
  bool labelled() const noexcept { return !labels.empty(); }
};

inline void validate(const ScoreTable& table) {
  detail::require(table.n_layers() >= 1, ErrorKind::invalid_argument, "score table has no layers");
  detail::require(table.layer_ids.empty() || table.layer_ids.size() == table.n_layers(),
                  ErrorKind::dimension, "score table layer ids do not match column count");
  detail::require(table.sample_ids.empty() || table.sample_ids.size() == table.rows(),
                  ErrorKind::dimension, "score table sample ids do not match row count");
  detail::require(table.labels.empty() || table.labels.size() == table.rows(),
                  ErrorKind::dimension, "score table labels do not match row count");
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (double v : table.scores.row(r)) {
      if (!std::isfinite(v)) {
        detail::fail(ErrorKind::non_finite, "score table: non-finite score in row " + std::to_string(r));
      }
    }
  }
}

struct TrainConfig {
  double learning_rate = 0.1;
  std::uint32_t max_epochs = 2000;
  double l2_penalty = 0.0;
  double convergence_tol = 1e-7;  // on the max-norm of the gradient
  std::uint64_t seed = 0;
  bool standardize = true;        // false: regress on raw scores

  void validate() const {
    detail::require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::usage,
                    "fusion learning_rate must be positive");
    detail::require(l2_penalty >= 0.0 && std::isfinite(l2_penalty), ErrorKind::usage,
                    "fusion l2_penalty must be non-negative");
    detail::require(convergence_tol > 0.0, ErrorKind::usage, "fusion convergence_tol must be positive");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"max_epochs", c.max_epochs},
       {"l2_penalty", c.l2_penalty},       {"convergence_tol", c.convergence_tol},
       {"seed", c.seed},                   {"standardize", c.standardize}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.l2_penalty = j.value("l2_penalty", c.l2_penalty);
  c.convergence_tol = j.value("convergence_tol", c.convergence_tol);
  c.seed = j.value("seed", c.seed);
  c.standardize = j.value("standardize", c.standardize);
}

/// Per-layer z-score transform fitted on training rows.
struct Standardizer {
  static constexpr double kStddevFloor = 1e-12;

  std::vector<double> mean;
  std::vector<double> stddev;

  static Standardizer identity(std::size_t n_layers) {
    return {std::vector<double>(n_layers, 0.0), std::vector<double>(n_layers, 1.0)};
  }

  static Standardizer fit(const Matrix<double>& scores) {
    const std::size_t n = scores.rows();
    const std::size_t L = scores.cols();
    Standardizer s{std::vector<double>(L, 0.0), std::vector<double>(L, 0.0)};
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t l = 0; l < L; ++l) s.mean[l] += scores(r, l);
    }
    for (auto& m : s.mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t l = 0; l < L; ++l) {
        const double d = scores(r, l) - s.mean[l];
        s.stddev[l] += d * d;
      }
    }
    for (auto& v : s.stddev) v = std::max(std::sqrt(v / static_cast<double>(n)), kStddevFloor);
    return s;
  }

  std::size_t size() const noexcept { return mean.size(); }

  double apply(std::size_t layer, double raw) const noexcept {
    return (raw - mean[layer]) / stddev[layer];
  }

  Matrix<double> apply(const Matrix<double>& scores) const {
    Matrix<double> out(scores.rows(), scores.cols());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
      for (std::size_t l = 0; l < scores.cols(); ++l) out(r, l) = apply(l, scores(r, l));
    }
    return out;
  }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

struct LogisticParams {
  std::vector<double> alpha;
  double bias = 0.0;

  friend bool operator==(const LogisticParams&, const LogisticParams&) = default;
};

struct TrainingSummary {
  std::uint32_t epochs = 0;
  bool converged = false;
  double final_loss = 0.0;
  double train_accuracy = 0.0;  // fraction of rows with sign(logit) matching the label

  friend bool operator==(const TrainingSummary&, const TrainingSummary&) = default;
};

/// Logistic-regression combiner of per-layer scores.
struct FusionModel {
  std::vector<double> alpha;
  double bias = 0.0;
  Standardizer standardizer;
  TrainConfig train_config;
  TrainingSummary summary;

  std::size_t n_layers() const noexcept { return alpha.size(); }

  friend bool operator==(const FusionModel&, const FusionModel&) = default;
};

inline nlohmann::json to_json(const FusionModel& m) {
  return {{"alpha", m.alpha},
          {"bias", m.bias},
          {"standardizer", {{"mean", m.standardizer.mean}, {"stddev", m.standardizer.stddev}}},
          {"train_config", m.train_config},
          {"summary",
           {{"epochs", m.summary.epochs},
            {"converged", m.summary.converged},
            {"final_loss", m.summary.final_loss},
            {"train_accuracy", m.summary.train_accuracy}}}};
}

namespace detail {

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(t)) without overflow.
inline double softplus(double t) noexcept {
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

inline double logit(std::span<const double> alpha, double bias, std::span<const double> x) noexcept {
  double z = bias;
  for (std::size_t l = 0; l < alpha.size(); ++l) z += alpha[l] * x[l];
  return z;
}

}  // namespace detail

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> grad_alpha;
  double grad_bias = 0.0;
};

/// Mean binary cross-entropy plus (l2/2)*|alpha|^2 over already-transformed
/// features, and its analytic gradient. The bias is not penalized.
inline LossAndGradient logistic_loss_and_gradient(const LogisticParams& p,
                                                  const Matrix<double>& features,
                                                  std::span<const Label> labels, double l2) {
  const std::size_t n = features.rows();
  const std::size_t L = features.cols();
  LossAndGradient out;
  out.grad_alpha.assign(L, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto x = features.row(r);
    const double z = detail::logit(p.alpha, p.bias, x);
    const bool pos = labels[r] == Label::positive;
    out.loss += pos ? detail::softplus(-z) : detail::softplus(z);
    const double residual = detail::sigmoid(z) - (pos ? 1.0 : 0.0);
    for (std::size_t l = 0; l < L; ++l) out.grad_alpha[l] += residual * x[l];
    out.grad_bias += residual;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss *= inv_n;
  out.grad_bias *= inv_n;
  double sq = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    out.grad_alpha[l] = out.grad_alpha[l] * inv_n + l2 * p.alpha[l];
    sq += p.alpha[l] * p.alpha[l];
  }
  out.loss += 0.5 * l2 * sq;
  return out;
}

/// Called once per epoch with the loss at the start of that epoch.
using EpochObserver = std::function<void(std::uint32_t epoch, double loss)>;

/// Fit alpha and bias by full-batch gradient descent from zero. Deterministic.
inline FusionModel train_fusion(const ScoreTable& train, const TrainConfig& config,
                                const EpochObserver& observer = {}) {
  config.validate();
  validate(train);
  detail::require(train.labelled(), ErrorKind::invalid_argument, "train_fusion: table is unlabelled");
  const auto n_pos = std::count(train.labels.begin(), train.labels.end(), Label::positive);
  detail::require(n_pos >= 1 && n_pos < static_cast<std::ptrdiff_t>(train.rows()),
                  ErrorKind::invalid_argument,
                  "train_fusion: need at least one positive and one negative row");

  FusionModel model;
  model.train_config = config;
  model.standardizer = config.standardize ? Standardizer::fit(train.scores)
                                          : Standardizer::identity(train.n_layers());
  const Matrix<double> features = model.standardizer.apply(train.scores);

  LogisticParams p{std::vector<double>(train.n_layers(), 0.0), 0.0};
  LossAndGradient lg;
  std::uint32_t epoch = 0;
  for (;; ++epoch) {
    lg = logistic_loss_and_gradient(p, features, train.labels, config.l2_penalty);
    if (observer) observer(epoch, lg.loss);
    double max_abs = std::abs(lg.grad_bias);
    for (double g : lg.grad_alpha) max_abs = std::max(max_abs, std::abs(g));
    if (max_abs < config.convergence_tol) {
      model.summary.converged = true;
      break;
    }
    if (epoch == config.max_epochs) break;
    for (std::size_t l = 0; l < p.alpha.size(); ++l) p.alpha[l] -= config.learning_rate * lg.grad_alpha[l];
    p.bias -= config.learning_rate * lg.grad_bias;
  }
  model.alpha = std::move(p.alpha);
  model.bias = p.bias;
  model.summary.epochs = epoch;
  model.summary.final_loss = lg.loss;

  std::size_t correct = 0;
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const bool predicted_pos = detail::logit(model.alpha, model.bias, features.row(r)) >= 0.0;
    correct += predicted_pos == (train.labels[r] == Label::positive);
  }
  model.summary.train_accuracy = static_cast<double>(correct) / static_cast<double>(features.rows());
  return model;
}

/// Fused confidence of one sample: alpha . standardize(scores) + bias (a
/// logit; larger means more in-distribution).
inline double confidence(const FusionModel& model, std::span<const double> layer_scores) {
  if (layer_scores.size() != model.n_layers()) {
    detail::fail(ErrorKind::dimension, "confidence: got " + std::to_string(layer_scores.size()) +
                                           " layer scores, model has " +
                                           std::to_string(model.n_layers()));
  }
  double z = model.bias;
  for (std::size_t l = 0; l < model.alpha.size(); ++l) {
    const double v = layer_scores[l];
    if (!std::isfinite(v)) detail::fail(ErrorKind::non_finite, "confidence: non-finite layer score");
    z += model.alpha[l] * model.standardizer.apply(l, v);
  }
  return z;
}

inline std::vector<double> confidence_batch(const FusionModel& model, const ScoreTable& table) {
  std::vector<double> out(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) out[r] = confidence(model, table.scores.row(r));
  return out;
}

}  // namespace kdeood
