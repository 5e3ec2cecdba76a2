#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kdeood/bandwidth.hpp"
#include "kdeood/error.hpp"
#include "kdeood/kde.hpp"
#include "kdeood/matrix.hpp"
#include "kdeood/parallel.hpp"

namespace kdeood {

/// Candidate neighbour counts for bandwidth selection; strictly increasing.
struct KCandidateSet {
  std::vector<std::size_t> values{10, 20, 50, 100, 200, 300, 350, 400, 450, 500};

  void validate() const {
    detail::require(!values.empty(), ErrorKind::invalid_argument, "k candidate set is empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
      detail::require(values[i] >= 1, ErrorKind::invalid_argument, "k candidates must be >= 1");
      if (i > 0) {
        detail::require(values[i] > values[i - 1], ErrorKind::invalid_argument,
                        "k candidates must be strictly increasing");
      }
    }
  }

  /// Candidates usable with n reference rows (k <= n - 1).
  std::vector<std::size_t> surviving(std::size_t n_reference) const {
    std::vector<std::size_t> out;
    for (std::size_t k : values) {
      if (n_reference >= 2 && k <= n_reference - 1) out.push_back(k);
    }
    return out;
  }

  friend bool operator==(const KCandidateSet&, const KCandidateSet&) = default;
};

struct KSelectionReport {
  std::string layer_id;
  std::vector<std::pair<std::size_t, double>> objectives;  // surviving candidates, ascending k
  std::size_t chosen_k = 0;

  double best_objective() const {
    for (const auto& [k, v] : objectives) {
      if (k == chosen_k) return v;
    }
    detail::fail(ErrorKind::invalid_argument, "chosen k missing from report");
  }
};

inline nlohmann::ordered_json to_json(const KSelectionReport& report) {
  nlohmann::ordered_json objectives = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.objectives) objectives[std::to_string(k)] = v;
  return {{"layer_id", report.layer_id}, {"objectives", objectives}, {"chosen_k", report.chosen_k}};
}

/// Inputs to the selection objective for one layer.
struct KSelectionInputs {
  const FeatureMatrix& reference;
  const FeatureMatrix& in_dist_eval;
  const FeatureMatrix& perturbed_eval;
  /// Per in_dist_eval row: its reference position if it is a reference member.
  /// Members are scored leave-one-out. Empty means no members.
  const ReferenceMembership& in_dist_membership;
};

/// Pick k maximizing sum(score(in_dist_eval)) - sum(score(perturbed_eval)).
/// Candidates with k > N-1 are pruned; ties go to the smaller k. Objective
/// values equal those from fit_layer + score_batch_excluding_self bit-for-bit.
inline KSelectionReport select_k(const KSelectionInputs& in, const KCandidateSet& candidates,
                                 DistanceMetric metric, std::string layer_id = {},
                                 std::size_t workers = default_worker_count()) {
  candidates.validate();
  const std::size_t n = in.reference.rows();
  const auto ks = candidates.surviving(n);
  if (ks.empty()) {
    detail::fail(ErrorKind::invalid_argument,
                 "select_k: no candidate k <= N-1 = " + std::to_string(n >= 1 ? n - 1 : 0));
  }
  detail::require(in.in_dist_eval.rows() > 0 && in.perturbed_eval.rows() > 0,
                  ErrorKind::invalid_argument, "select_k: evaluation sets must be non-empty");
  detail::require(in.in_dist_eval.cols() == in.reference.cols() &&
                      in.perturbed_eval.cols() == in.reference.cols(),
                  ErrorKind::dimension, "select_k: evaluation sets must match reference width");
  const auto& membership = in.in_dist_membership;
  detail::require(membership.empty() || membership.size() == in.in_dist_eval.rows(),
                  ErrorKind::dimension, "select_k: membership length does not match eval rows");
  bool any_member = false;
  for (const auto& m : membership) {
    if (!m) continue;
    any_member = true;
    if (*m >= n) detail::fail(ErrorKind::invalid_argument, "select_k: membership index out of range");
  }
  if (any_member && n < 3) {
    detail::fail(ErrorKind::invalid_argument, "select_k: leave-one-out scoring needs N >= 3");
  }

  const NeighborDistances neighbors(in.reference, metric, workers);

  // Distances do not depend on k: compute once, reuse for every candidate.
  auto distance_table = [&](const FeatureMatrix& rows) {
    std::vector<double> table(rows.rows() * n);
    parallel_for(rows.rows(), workers, [&](std::size_t r) {
      const auto x = rows.row(r);
      for (std::size_t i = 0; i < n; ++i) {
        table[r * n + i] = detail::distance_unchecked(x, in.reference.row(i), metric);
      }
    });
    return table;
  };
  const auto d_in = distance_table(in.in_dist_eval);
  const auto d_pert = distance_table(in.perturbed_eval);
  std::vector<double> d_ref;
  if (any_member) d_ref = distance_table(in.reference);

  auto summed_scores = [&](const std::vector<double>& table, std::size_t rows,
                           const std::vector<double>& sigma, bool use_membership) {
    std::vector<double> scores(rows);
    parallel_for(rows, workers, [&](std::size_t r) {
      if (use_membership && !membership.empty() && membership[r]) {
        const std::size_t self = *membership[r];
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (j == self) continue;
          sum += detail::gaussian_kernel_unchecked(d_ref[self * n + j], sigma[j]);
        }
        scores[r] = sum / static_cast<double>(n - 1);
        return;
      }
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum += detail::gaussian_kernel_unchecked(table[r * n + i], sigma[i]);
      }
      scores[r] = sum / static_cast<double>(n);
    });
    double total = 0.0;
    for (double s : scores) total += s;
    return total;
  };

  KSelectionReport report;
  report.layer_id = std::move(layer_id);
  double best = 0.0;
  for (std::size_t k : ks) {
    const auto sigma = neighbors.bandwidths(k);
    const double objective = summed_scores(d_in, in.in_dist_eval.rows(), sigma, true) -
                             summed_scores(d_pert, in.perturbed_eval.rows(), sigma, false);
    report.objectives.emplace_back(k, objective);
    if (report.chosen_k == 0 || objective > best) {
      best = objective;
      report.chosen_k = k;
    }
  }
  return report;
}

/// Convenience form with no reference members among the in-distribution rows.
inline KSelectionReport select_k(const FeatureMatrix& reference, const FeatureMatrix& in_dist_eval,
                                 const FeatureMatrix& perturbed_eval,
                                 const KCandidateSet& candidates, DistanceMetric metric,
                                 std::string layer_id = {},
                                 std::size_t workers = default_worker_count()) {
  const ReferenceMembership none;
  return select_k({reference, in_dist_eval, perturbed_eval, none}, candidates, metric,
                  std::move(layer_id), workers);
}

}  // namespace kdeood
