#include <gtest/gtest.h>

#include <random>

#include "kdeood/k_selection.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace kdeood;

TEST(KnnBandwidths, OneDimensionalK2) {
  EXPECT_EQ(knn_bandwidths(FeatureMatrix{{0}, {1}, {3}}, 2, DistanceMetric::l1),
            (std::vector<double>{3, 2, 3}));
}

TEST(KnnBandwidths, KEqualsNMinusOneIsMaxDistance) {
  std::mt19937_64 rng(5);
  const auto ref = testing_support::random_matrix(12, 3, rng);
  const auto sigma = knn_bandwidths(ref, 11, DistanceMetric::l2);
  for (std::size_t i = 0; i < ref.rows(); ++i) {
    double mx = 0.0;
    for (std::size_t j = 0; j < ref.rows(); ++j) mx = std::max(mx, distance(ref.row(i), ref.row(j), DistanceMetric::l2));
    EXPECT_EQ(sigma[i], mx);
  }
}

TEST(KnnBandwidths, MatchesFullSortOracleForEveryK) {
  std::mt19937_64 rng(30);
  const auto ref = testing_support::random_matrix(30, 5, rng);
  const auto rows = testing_support::to_rows(ref);
  for (auto metric : {DistanceMetric::l1, DistanceMetric::l2}) {
    const NeighborDistances nd(ref, metric);
    for (std::size_t k = 1; k <= 29; ++k) {
      const auto expected = oracle::knn_sigma(rows, k, metric == DistanceMetric::l2);
      EXPECT_EQ(knn_bandwidths(ref, k, metric), expected) << "k=" << k;
      EXPECT_EQ(nd.bandwidths(k), expected) << "k=" << k;
    }
  }
}

TEST(KnnBandwidths, OutOfRangeK) {
  const FeatureMatrix ref{{0}, {1}, {3}};
  EXPECT_THROW(knn_bandwidths(ref, 0, DistanceMetric::l1), Error);
  EXPECT_THROW(knn_bandwidths(ref, 3, DistanceMetric::l1), Error);
}

TEST(KCandidateSet, DefaultsAndValidation) {
  KCandidateSet k;
  EXPECT_EQ(k.values, (std::vector<std::size_t>{10, 20, 50, 100, 200, 300, 350, 400, 450, 500}));
  EXPECT_NO_THROW(k.validate());
  EXPECT_THROW((KCandidateSet{{10, 10}}.validate()), Error);
  EXPECT_THROW((KCandidateSet{{0, 5}}.validate()), Error);
  EXPECT_THROW((KCandidateSet{{}}.validate()), Error);
}

TEST(SelectK, IdenticalEvalSetsTieToSmallestK) {
  std::mt19937_64 rng(1);
  const auto ref = testing_support::normal_matrix(60, 4, rng);
  const auto eval = testing_support::normal_matrix(30, 4, rng);
  const auto report = select_k(ref, eval, eval, KCandidateSet{}, DistanceMetric::l1);
  for (const auto& [k, obj] : report.objectives) EXPECT_EQ(obj, 0.0) << k;
  EXPECT_EQ(report.chosen_k, 10U);
}

TEST(SelectK, PrunesCandidatesAboveNMinusOne) {
  std::mt19937_64 rng(2);
  const auto ref = testing_support::normal_matrix(40, 4, rng);
  const auto in = testing_support::normal_matrix(20, 4, rng);
  const auto pert = testing_support::normal_matrix(20, 4, rng, 3.0);
  const auto report = select_k(ref, in, pert, KCandidateSet{}, DistanceMetric::l1);
  ASSERT_EQ(report.objectives.size(), 2U);
  EXPECT_EQ(report.objectives[0].first, 10U);
  EXPECT_EQ(report.objectives[1].first, 20U);
}

TEST(SelectK, ErrorsWhenNothingSurvivesOrEvalEmpty) {
  std::mt19937_64 rng(3);
  const auto ref = testing_support::normal_matrix(8, 2, rng);
  const auto in = testing_support::normal_matrix(5, 2, rng);
  EXPECT_THROW(select_k(ref, in, in, KCandidateSet{}, DistanceMetric::l1), Error);
  const FeatureMatrix empty(0, 2);
  EXPECT_THROW(select_k(ref, empty, in, KCandidateSet{{2, 3}}, DistanceMetric::l1), Error);
  EXPECT_THROW(select_k(ref, in, empty, KCandidateSet{{2, 3}}, DistanceMetric::l1), Error);
}

TEST(SelectK, ShiftedGaussiansMatchExhaustiveOracle) {
  std::mt19937_64 rng(44);
  const auto ref = testing_support::normal_matrix(120, 4, rng);
  const auto in = testing_support::normal_matrix(200, 4, rng);
  const auto pert = testing_support::normal_matrix(200, 4, rng, 5.0);
  const KCandidateSet cands{{1, 2, 5, 10, 20, 50, 100}};
  for (auto metric : {DistanceMetric::l1, DistanceMetric::l2}) {
    const auto report = select_k(ref, in, pert, cands, metric);
    std::vector<double> objectives;
    const auto expected = oracle::select_k(testing_support::to_rows(ref), testing_support::to_rows(in),
                                           testing_support::to_rows(pert), cands.values,
                                           metric == DistanceMetric::l2, {}, &objectives);
    EXPECT_EQ(report.chosen_k, expected);
    ASSERT_EQ(report.objectives.size(), objectives.size());
    for (std::size_t i = 0; i < objectives.size(); ++i) {
      EXPECT_NEAR(report.objectives[i].second, objectives[i], 1e-9 * std::abs(objectives[i]) + 1e-12);
    }
  }
}

TEST(SelectK, LeaveOneOutMembersMatchOracle) {
  std::mt19937_64 rng(45);
  const auto ref = testing_support::normal_matrix(50, 3, rng);
  // Eval rows: the reference itself (members) plus a few outsiders.
  FeatureMatrix in(55, 3);
  ReferenceMembership membership(55);
  std::vector<std::ptrdiff_t> member_oracle(55, -1);
  for (std::size_t i = 0; i < 50; ++i) {
    std::ranges::copy(ref.row(i), in.row(i).begin());
    membership[i] = i;
    member_oracle[i] = static_cast<std::ptrdiff_t>(i);
  }
  const auto extra = testing_support::normal_matrix(5, 3, rng);
  for (std::size_t i = 0; i < 5; ++i) std::ranges::copy(extra.row(i), in.row(50 + i).begin());
  const auto pert = testing_support::normal_matrix(40, 3, rng, 1.5);
  const KCandidateSet cands{{1, 3, 5, 10, 20, 49, 50}};
  const auto report = select_k({ref, in, pert, membership}, cands, DistanceMetric::l1);
  std::vector<double> objectives;
  const auto expected = oracle::select_k(testing_support::to_rows(ref), testing_support::to_rows(in),
                                         testing_support::to_rows(pert), cands.values, false,
                                         member_oracle, &objectives);
  EXPECT_EQ(report.chosen_k, expected);
  ASSERT_EQ(report.objectives.size(), objectives.size());
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    EXPECT_NEAR(report.objectives[i].second, objectives[i], 1e-9 * std::abs(objectives[i]) + 1e-12);
  }
}

TEST(SelectK, ObjectiveEqualsComposedModuleCallsBitExact) {
  std::mt19937_64 rng(46);
  const auto ref = testing_support::normal_matrix(30, 3, rng);
  const auto in = testing_support::normal_matrix(20, 3, rng);
  const auto pert = testing_support::normal_matrix(20, 3, rng, 2.0);
  const auto report = select_k(ref, in, pert, KCandidateSet{{2, 5, 9}}, DistanceMetric::l2);
  for (const auto& [k, obj] : report.objectives) {
    const auto model = fit_layer(ref, k, DistanceMetric::l2);
    double s_in = 0.0, s_pert = 0.0;
    for (double s : score_batch(model, in)) s_in += s;
    for (double s : score_batch(model, pert)) s_pert += s;
    EXPECT_EQ(obj, s_in - s_pert);
  }
  double best = report.objectives.front().second;
  for (const auto& [k, obj] : report.objectives) best = std::max(best, obj);
  EXPECT_EQ(report.best_objective(), best);
}

TEST(SelectK, ReproducibleAcrossWorkerCounts) {
  std::mt19937_64 rng(47);
  const auto ref = testing_support::normal_matrix(80, 5, rng);
  const auto in = testing_support::normal_matrix(60, 5, rng);
  const auto pert = testing_support::normal_matrix(60, 5, rng, 1.0);
  const auto a = select_k(ref, in, pert, KCandidateSet{}, DistanceMetric::l1, "x", 1);
  const auto b = select_k(ref, in, pert, KCandidateSet{}, DistanceMetric::l1, "x", 7);
  EXPECT_EQ(a.objectives, b.objectives);
  EXPECT_EQ(a.chosen_k, b.chosen_k);
}

TEST(SelectK, ReportJsonKeepsCandidateOrder) {
  KSelectionReport r{"layer1", {{10, 1.5}, {20, 2.5}, {100, -1.0}}, 20};
  EXPECT_EQ(to_json(r).dump(), R"({"layer_id":"layer1","objectives":{"10":1.5,"20":2.5,"100":-1.0},"chosen_k":20})");
}
