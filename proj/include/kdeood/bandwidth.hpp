#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "kdeood/error.hpp"
#include "kdeood/kernel.hpp"
#include "kdeood/matrix.hpp"
#include "kdeood/parallel.hpp"

namespace kdeood {

namespace detail {

inline void check_k(std::size_t n_reference, std::size_t k) {
  require(n_reference >= 2, ErrorKind::invalid_argument,
          "kNN bandwidths need at least 2 reference rows, got " + std::to_string(n_reference));
  require(k >= 1 && k <= n_reference - 1, ErrorKind::invalid_argument,
          "k = " + std::to_string(k) + " out of range [1, " + std::to_string(n_reference - 1) + "]");
}

inline double floor_bandwidth(double sigma) noexcept {
  return sigma > 0.0 ? sigma : kBandwidthFloor;
}

}  // namespace detail

/// For every reference row, the distances to all other reference rows in
/// ascending order. Lets several k values be evaluated from one O(N^2) pass.
class NeighborDistances {
 public:
  NeighborDistances(const FeatureMatrix& reference, DistanceMetric metric,
                    std::size_t workers = default_worker_count())
      : n_(reference.rows()), sorted_(n_ * (n_ == 0 ? 0 : n_ - 1)) {
    detail::require(n_ >= 2, ErrorKind::invalid_argument,
                    "kNN bandwidths need at least 2 reference rows, got " + std::to_string(n_));
    parallel_for(n_, workers, [&](std::size_t i) {
      double* out = sorted_.data() + i * (n_ - 1);
      const auto xi = reference.row(i);
      std::size_t pos = 0;
      for (std::size_t j = 0; j < n_; ++j) {
        if (j == i) continue;
        out[pos++] = detail::distance_unchecked(xi, reference.row(j), metric);
      }
      std::sort(out, out + (n_ - 1));
    });
  }

  std::size_t size() const noexcept { return n_; }

  /// k-th smallest distance from row i to the other rows (k is 1-based).
  double kth(std::size_t i, std::size_t k) const { return sorted_[i * (n_ - 1) + (k - 1)]; }

  std::vector<double> bandwidths(std::size_t k) const {
    detail::check_k(n_, k);
    std::vector<double> sigma(n_);
    for (std::size_t i = 0; i < n_; ++i) sigma[i] = detail::floor_bandwidth(kth(i, k));
    return sigma;
  }

 private:
  std::size_t n_;
  std::vector<double> sorted_;  // n x (n-1)
};

/// sigma_i = k-th smallest distance from reference row i to the other rows,
/// floored at kBandwidthFloor when that distance is zero.
inline std::vector<double> knn_bandwidths(const FeatureMatrix& reference, std::size_t k,
                                          DistanceMetric metric,
                                          std::size_t workers = default_worker_count()) {
  const std::size_t n = reference.rows();
  detail::check_k(n, k);
  std::vector<double> sigma(n);
  parallel_for(n, workers, [&](std::size_t i) {
    std::vector<double> d;
    d.reserve(n - 1);
    const auto xi = reference.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) d.push_back(detail::distance_unchecked(xi, reference.row(j), metric));
    }
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
    sigma[i] = detail::floor_bandwidth(d[k - 1]);
  });
  return sigma;
}

}  // namespace kdeood
