#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "kdeood/bandwidth.hpp"
#include "kdeood/error.hpp"
#include "kdeood/kernel.hpp"
#include "kdeood/matrix.hpp"
#include "kdeood/parallel.hpp"

namespace kdeood {

/// Fitted density model for one layer: reference rows with per-row kNN
/// bandwidths. Immutable after fit_layer; safe to score concurrently.
struct LayerKdeModel {
  std::string layer_id;
  FeatureMatrix reference;          // N x C
  std::vector<double> bandwidths;   // N, all > 0
  DistanceMetric metric = kDefaultMetric;
  std::uint32_t k_used = 0;

  std::size_t size() const noexcept { return reference.rows(); }
  std::size_t dim() const noexcept { return reference.cols(); }

  friend bool operator==(const LayerKdeModel&, const LayerKdeModel&) = default;
};

inline void validate(const LayerKdeModel& model) {
  const std::string ctx = "layer model '" + model.layer_id + "'";
  detail::require(model.size() >= 2, ErrorKind::invalid_argument, ctx + ": needs N >= 2");
  detail::require(model.dim() >= 1, ErrorKind::invalid_argument, ctx + ": zero channels");
  detail::require(model.bandwidths.size() == model.size(), ErrorKind::dimension,
                  ctx + ": bandwidth count does not match reference rows");
  for (double s : model.bandwidths) {
    detail::require(s > 0.0 && std::isfinite(s), ErrorKind::invalid_argument,
                    ctx + ": bandwidths must be positive and finite");
  }
}

inline LayerKdeModel fit_layer(FeatureMatrix reference, std::size_t k, DistanceMetric metric,
                               std::string layer_id = {},
                               std::size_t workers = default_worker_count()) {
  auto sigma = knn_bandwidths(reference, k, metric, workers);
  return {std::move(layer_id), std::move(reference), std::move(sigma), metric,
          static_cast<std::uint32_t>(k)};
}

namespace detail {

template <typename T>
double score_unchecked(const LayerKdeModel& model, std::span<const T> x) noexcept {
  double sum = 0.0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const double d = distance_unchecked(x, model.reference.row(i), model.metric);
    sum += gaussian_kernel_unchecked(d, model.bandwidths[i]);
  }
  return sum / static_cast<double>(model.size());
}

inline double loo_score_unchecked(const LayerKdeModel& model, std::size_t i) noexcept {
  const auto xi = model.reference.row(i);
  double sum = 0.0;
  for (std::size_t j = 0; j < model.size(); ++j) {
    if (j == i) continue;
    const double d = distance_unchecked(xi, model.reference.row(j), model.metric);
    sum += gaussian_kernel_unchecked(d, model.bandwidths[j]);
  }
  return sum / static_cast<double>(model.size() - 1);
}

inline void check_dim(const LayerKdeModel& model, std::size_t got) {
  if (got != model.dim()) {
    fail(ErrorKind::dimension, "layer '" + model.layer_id + "': input has " + std::to_string(got) +
                                   " channels, model expects " + std::to_string(model.dim()));
  }
}

}  // namespace detail

/// Mean over reference rows of K(d(x, ref_i); sigma_i). Terms are summed in
/// ascending reference order, so the result is bit-reproducible.
template <std::ranges::contiguous_range R>
double score(const LayerKdeModel& model, const R& x) {
  const std::span xs(std::ranges::data(x), std::ranges::size(x));
  detail::check_dim(model, xs.size());
  return detail::score_unchecked(model, std::span<const std::ranges::range_value_t<R>>(xs));
}

/// Leave-one-out score of reference row i: its own kernel term is dropped
/// and the remaining N-1 terms are averaged.
inline double loo_score(const LayerKdeModel& model, std::size_t i) {
  detail::require(model.size() >= 3, ErrorKind::invalid_argument,
                  "loo_score needs N >= 3, model has " + std::to_string(model.size()));
  detail::require(i < model.size(), ErrorKind::invalid_argument,
                  "loo_score: index " + std::to_string(i) + " out of range [0, " +
                      std::to_string(model.size()) + ")");
  return detail::loo_score_unchecked(model, i);
}

/// Row-wise score. Output is identical for every worker count.
template <typename T>
std::vector<double> score_batch(const LayerKdeModel& model, const Matrix<T>& rows,
                                std::size_t workers = default_worker_count()) {
  detail::check_dim(model, rows.cols());
  std::vector<double> out(rows.rows());
  parallel_for(rows.rows(), workers,
               [&](std::size_t r) { out[r] = detail::score_unchecked(model, rows.row(r)); });
  return out;
}

/// Position of each evaluated row inside the reference set, if it is one.
using ReferenceMembership = std::vector<std::optional<std::size_t>>;

/// Like score_batch, but rows that are reference members (by index, not by
/// value) get loo_score instead. `membership` may be empty (no members).
template <typename T>
std::vector<double> score_batch_excluding_self(const LayerKdeModel& model, const Matrix<T>& rows,
                                               const ReferenceMembership& membership,
                                               std::size_t workers = default_worker_count()) {
  detail::check_dim(model, rows.cols());
  detail::require(membership.empty() || membership.size() == rows.rows(), ErrorKind::dimension,
                  "membership length does not match row count");
  for (const auto& m : membership) {
    if (!m) continue;
    if (*m >= model.size()) {
      detail::fail(ErrorKind::invalid_argument, "membership index out of reference range");
    }
    if (model.size() < 3) {
      detail::fail(ErrorKind::invalid_argument, "leave-one-out scoring needs N >= 3");
    }
  }
  std::vector<double> out(rows.rows());
  parallel_for(rows.rows(), workers, [&](std::size_t r) {
    if (!membership.empty() && membership[r]) {
      out[r] = detail::loo_score_unchecked(model, *membership[r]);
    } else {
      out[r] = detail::score_unchecked(model, rows.row(r));
    }
  });
  return out;
}

}  // namespace kdeood
