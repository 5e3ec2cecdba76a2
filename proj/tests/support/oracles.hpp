#pragma once

// Reference implementations used only by tests. Each follows the textbook
// definition with plain loops and shares no code with the library paths it
// checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline double dist(const std::vector<double>& a, const std::vector<double>& b, bool l2) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += l2 ? d * d : std::fabs(d);
  }
  return l2 ? std::sqrt(s) : s;
}

inline double gauss(double d, double sigma) {
  const double pi = 3.14159265358979323846;
  return 1.0 / (sigma * std::sqrt(2.0 * pi)) * std::exp(-(d * d) / (2.0 * sigma * sigma));
}

/// k-th smallest distance to the other rows, via a full sort.
inline std::vector<double> knn_sigma(const Rows& ref, std::size_t k, bool l2) {
  std::vector<double> out;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (j != i) d.push_back(dist(ref[i], ref[j], l2));
    }
    std::sort(d.begin(), d.end());
    out.push_back(d[k - 1] == 0.0 ? 1e-12 : d[k - 1]);
  }
  return out;
}

/// Average of Gaussian kernel terms over every reference row, optionally
/// skipping one index.
inline double kde(const Rows& ref, const std::vector<double>& sigma, const std::vector<double>& x,
                  bool l2, std::ptrdiff_t skip = -1) {
  double s = 0.0;
  std::size_t terms = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (static_cast<std::ptrdiff_t>(i) == skip) continue;
    s += gauss(dist(x, ref[i], l2), sigma[i]);
    ++terms;
  }
  return s / static_cast<double>(terms);
}

/// Exhaustive argmax of sum(in) - sum(perturbed) over candidates k <= N-1.
/// `member[r]` >= 0 marks in-distribution row r as reference row member[r].
inline std::size_t select_k(const Rows& ref, const Rows& in, const Rows& pert,
                            const std::vector<std::size_t>& candidates, bool l2,
                            const std::vector<std::ptrdiff_t>& member = {},
                            std::vector<double>* objectives = nullptr) {
  std::size_t best_k = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k : candidates) {
    if (k > ref.size() - 1) continue;
    const auto sigma = knn_sigma(ref, k, l2);
    double sum_in = 0.0;
    for (std::size_t r = 0; r < in.size(); ++r) {
      const std::ptrdiff_t m = member.empty() ? -1 : member[r];
      sum_in += m >= 0 ? kde(ref, sigma, ref[m], l2, m) : kde(ref, sigma, in[r], l2);
    }
    double sum_pert = 0.0;
    for (const auto& x : pert) sum_pert += kde(ref, sigma, x, l2);
    const double obj = sum_in - sum_pert;
    if (objectives) objectives->push_back(obj);
    if (obj > best) {
      best = obj;
      best_k = k;
    }
  }
  return best_k;
}

/// Pairwise Mann-Whitney AUROC in percent.
inline double auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double s = 0.0;
  for (double p : pos) {
    for (double n : neg) s += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return 100.0 * s / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct Confusion {
  double threshold;
  std::size_t tp, fp, fn, tn;
};

/// Full confusion matrix at every distinct score, thresholds descending.
inline std::vector<Confusion> sweep(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::set<double, std::greater<>> thresholds(pos.begin(), pos.end());
  thresholds.insert(neg.begin(), neg.end());
  std::vector<Confusion> out;
  for (double t : thresholds) {
    Confusion c{t, 0, 0, 0, 0};
    for (double p : pos) (p >= t ? c.tp : c.fn)++;
    for (double n : neg) (n >= t ? c.fp : c.tn)++;
    out.push_back(c);
  }
  return out;
}

/// Minimal FPR (percent) over thresholds with TPR >= target.
inline double fpr_at_tpr(const std::vector<double>& pos, const std::vector<double>& neg, double target) {
  double best = 100.0;
  for (const auto& c : sweep(pos, neg)) {
    const double tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const double fpr = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
    if (tpr >= target) best = std::min(best, 100.0 * fpr);
  }
  return best;
}

/// Step-wise area under precision-recall (percent).
inline double aupr(const std::vector<double>& pos, const std::vector<double>& neg) {
  double area = 0.0;
  double prev_recall = 0.0;
  for (const auto& c : sweep(pos, neg)) {
    const double recall = static_cast<double>(c.tp) / static_cast<double>(pos.size());
    if (c.tp + c.fp == 0) continue;
    const double precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return 100.0 * area;
}

/// Trapezoidal area (percent) under ROC points given as (fpr, tpr).
inline double trapezoid(const std::vector<std::pair<double, double>>& fpr_tpr) {
  double a = 0.0;
  for (std::size_t i = 1; i < fpr_tpr.size(); ++i) {
    a += (fpr_tpr[i].first - fpr_tpr[i - 1].first) * (fpr_tpr[i].second + fpr_tpr[i - 1].second) / 2.0;
  }
  return 100.0 * a;
}

}  // namespace oracle
