#pragma once

// OOD detection metrics. In-distribution samples are the positive class and
// a sample is predicted positive when its score >= threshold.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdeood/error.hpp"

namespace kdeood {

struct RocPoint {
  double threshold;  // +inf for the leading (0, 0) point
  double tpr;
  double fpr;

  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

namespace detail {

inline void check_scores(std::span<const double> pos, std::span<const double> neg,
                         const char* what) {
  if (pos.empty() || neg.empty()) {
    fail(ErrorKind::invalid_argument, std::string(what) + ": positive and negative scores must be non-empty");
  }
  for (auto list : {pos, neg}) {
    for (double v : list) {
      if (!std::isfinite(v)) fail(ErrorKind::non_finite, std::string(what) + ": non-finite score");
    }
  }
}

struct SweepStep {
  double threshold;
  std::uint64_t tp;
  std::uint64_t fp;
};

// Cumulative (TP, FP) at every distinct score, thresholds descending.
inline std::vector<SweepStep> threshold_sweep(std::span<const double> pos, std::span<const double> neg) {
  std::vector<double> p(pos.begin(), pos.end());
  std::vector<double> n(neg.begin(), neg.end());
  std::sort(p.begin(), p.end(), std::greater<>());
  std::sort(n.begin(), n.end(), std::greater<>());
  std::vector<SweepStep> steps;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < p.size() || j < n.size()) {
    double t;
    if (j == n.size() || (i < p.size() && p[i] >= n[j])) {
      t = p[i];
    } else {
      t = n[j];
    }
    while (i < p.size() && p[i] == t) ++i;
    while (j < n.size() && n[j] == t) ++j;
    steps.push_back({t, i, j});
  }
  return steps;
}

}  // namespace detail

/// ROC points from threshold +inf down to the smallest score: (0,0) first,
/// then one point per distinct score value, ending at (1,1).
inline std::vector<RocPoint> roc_curve(std::span<const double> pos, std::span<const double> neg) {
  detail::check_scores(pos, neg, "roc_curve");
  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());
  std::vector<RocPoint> points;
  points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  for (const auto& s : detail::threshold_sweep(pos, neg)) {
    points.push_back({s.threshold, static_cast<double>(s.tp) / np, static_cast<double>(s.fp) / nn});
  }
  return points;
}

/// FPR (percent) at the largest threshold reaching TPR >= target_tpr, which
/// is the smallest FPR meeting the constraint. With `interpolate`, FPR is
/// interpolated linearly between the two ROC points bracketing target_tpr.
inline double fpr_at_tpr(std::span<const double> pos, std::span<const double> neg,
                         double target_tpr = 0.95, bool interpolate = false) {
  detail::require(target_tpr > 0.0 && target_tpr <= 1.0, ErrorKind::invalid_argument,
                  "fpr_at_tpr: target TPR must lie in (0, 1]");
  const auto roc = roc_curve(pos, neg);
  for (std::size_t i = 1; i < roc.size(); ++i) {
    if (roc[i].tpr >= target_tpr) {
      const auto& hi = roc[i];
      if (!interpolate || hi.tpr == target_tpr) return 100.0 * hi.fpr;
      const auto& lo = roc[i - 1];
      const double w = (target_tpr - lo.tpr) / (hi.tpr - lo.tpr);
      return 100.0 * (lo.fpr + w * (hi.fpr - lo.fpr));
    }
  }
  return 100.0;  // unreachable: the last point has TPR = 1
}

/// Misclassification probability (percent) at an operating point.
inline double detection_error(double tpr, double fpr) {
  detail::require(tpr >= 0.0 && tpr <= 1.0 && fpr >= 0.0 && fpr <= 1.0,
                  ErrorKind::invalid_argument, "detection_error: tpr and fpr must lie in [0, 1]");
  // Scaled to percent first: 100 * 0.95 rounds to exactly 95, so the
  // textbook operating point yields exactly 2.5.
  return 0.5 * (100.0 - 100.0 * tpr + 100.0 * fpr);
}

/// Area under the ROC curve (percent), Mann-Whitney form with half credit
/// for ties. Counts are kept as integers, so the result is exact up to the
/// final division.
inline double auroc(std::span<const double> pos, std::span<const double> neg) {
  detail::check_scores(pos, neg, "auroc");
  std::vector<double> n(neg.begin(), neg.end());
  std::sort(n.begin(), n.end());
  std::uint64_t twice_wins = 0;
  for (double p : pos) {
    const auto lo = std::lower_bound(n.begin(), n.end(), p);
    const auto hi = std::upper_bound(lo, n.end(), p);
    twice_wins += 2 * static_cast<std::uint64_t>(lo - n.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  const double pairs = static_cast<double>(pos.size()) * static_cast<double>(neg.size());
  return 100.0 * static_cast<double>(twice_wins) / (2.0 * pairs);
}

/// Area under the precision-recall curve (percent), positives = in-distribution.
/// Step-wise: sum over distinct thresholds of (recall gain) * precision.
inline double aupr(std::span<const double> pos, std::span<const double> neg) {
  detail::check_scores(pos, neg, "aupr");
  const double np = static_cast<double>(pos.size());
  double area = 0.0;
  double prev_recall = 0.0;
  for (const auto& s : detail::threshold_sweep(pos, neg)) {
    const double recall = static_cast<double>(s.tp) / np;
    const double precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return 100.0 * area;
}

struct EvalReport {
  double fpr_at_95_tpr = 0.0;    // percent
  double detection_error = 0.0;  // percent, at the 95% TPR operating point
  double auroc = 0.0;            // percent
  double aupr = 0.0;             // percent
  std::vector<RocPoint> roc_points;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline constexpr double kTargetTpr = 0.95;

/// All metrics at once. Detection error is taken at the nominal 95% TPR
/// operating point with the FPR reported there.
inline EvalReport evaluate(std::span<const double> pos, std::span<const double> neg,
                           bool interpolate_fpr = false) {
  EvalReport r;
  r.roc_points = roc_curve(pos, neg);
  r.fpr_at_95_tpr = fpr_at_tpr(pos, neg, kTargetTpr, interpolate_fpr);
  r.detection_error = detection_error(kTargetTpr, r.fpr_at_95_tpr / 100.0);
  r.auroc = auroc(pos, neg);
  r.aupr = aupr(pos, neg);
  r.n_pos = pos.size();
  r.n_neg = neg.size();
  return r;
}

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

/// Percent with two decimals for display. The exact binary value is rounded
/// to nearest, ties to even.
inline std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline nlohmann::ordered_json to_json(const EvalReport& r, bool include_roc = true) {
  nlohmann::ordered_json j{{"fpr_at_95_tpr", r.fpr_at_95_tpr},
                           {"detection_error", r.detection_error},
                           {"auroc", r.auroc},
                           {"aupr", r.aupr},
                           {"counts", {{"n_pos", r.n_pos}, {"n_neg", r.n_neg}}}};
  if (include_roc) {
    auto pts = nlohmann::ordered_json::array();
    for (const auto& p : r.roc_points) {
      nlohmann::ordered_json t = std::isinf(p.threshold) ? nlohmann::ordered_json(nullptr)
                                                         : nlohmann::ordered_json(p.threshold);
      pts.push_back({{"threshold", t}, {"tpr", p.tpr}, {"fpr", p.fpr}});
    }
    j["roc_points"] = std::move(pts);
  }
  return j;
}

/// "threshold,tpr,fpr" lines, one per ROC point.
inline std::string roc_csv(std::span<const RocPoint> points) {
  std::string out = "threshold,tpr,fpr\n";
  for (const auto& p : points) {
    out += format_double(p.threshold) + "," + format_double(p.tpr) + "," + format_double(p.fpr) + "\n";
  }
  return out;
}

}  // namespace kdeood
