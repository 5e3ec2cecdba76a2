#pragma once

#include <cmath>
#include <cstdint>
#include <ranges>
#include <numbers>
#include <span>
#include <string>
#include <string_view>

#include "kdeood/error.hpp"

namespace kdeood {

enum class DistanceMetric : std::uint8_t { l1 = 1, l2 = 2 };

inline constexpr DistanceMetric kDefaultMetric = DistanceMetric::l1;

inline std::string_view to_string(DistanceMetric m) {
  return m == DistanceMetric::l1 ? "l1" : "l2";
}

inline DistanceMetric parse_metric(std::string_view s) {
  if (s == "l1" || s == "L1") return DistanceMetric::l1;
  if (s == "l2" || s == "L2") return DistanceMetric::l2;
  detail::fail(ErrorKind::usage, "unknown distance metric '" + std::string(s) + "' (expected l1|l2)");
}

/// Floor substituted for a zero k-th neighbour distance (duplicate features).
inline constexpr double kBandwidthFloor = 1e-12;

namespace detail {

// Unchecked distance; callers guarantee equal lengths. Accumulates in double
// in ascending coordinate order.
template <typename A, typename B>
inline double distance_unchecked(std::span<const A> a, std::span<const B> b,
                                 DistanceMetric metric) noexcept {
  double acc = 0.0;
  if (metric == DistanceMetric::l1) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    }
    return acc;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace detail

/// L1 or L2 distance between two equal-length vectors.
template <std::ranges::contiguous_range RA, std::ranges::contiguous_range RB>
double distance(const RA& ra, const RB& rb, DistanceMetric metric) {
  const std::span a(std::ranges::data(ra), std::ranges::size(ra));
  const std::span b(std::ranges::data(rb), std::ranges::size(rb));
  if (a.size() != b.size() || a.empty()) {
    detail::fail(ErrorKind::dimension, "distance: vector lengths " + std::to_string(a.size()) +
                                           " and " + std::to_string(b.size()) +
                                           " must match and be non-zero");
  }
  return detail::distance_unchecked(std::span<const std::ranges::range_value_t<RA>>(a),
                                    std::span<const std::ranges::range_value_t<RB>>(b), metric);
}

namespace detail {

inline double gaussian_kernel_unchecked(double d, double sigma) noexcept {
  const double z = d / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace detail

/// Zero-mean 1-D Gaussian pdf with standard deviation `sigma`, evaluated at d.
inline double gaussian_kernel(double d, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    detail::fail(ErrorKind::invalid_argument,
                 "gaussian_kernel: sigma must be positive and finite, got " + std::to_string(sigma));
  }
  if (!(d >= 0.0) || !std::isfinite(d)) {
    detail::fail(ErrorKind::invalid_argument,
                 "gaussian_kernel: distance must be non-negative and finite, got " + std::to_string(d));
  }
  return detail::gaussian_kernel_unchecked(d, sigma);
}

}  // namespace kdeood
