#include <gtest/gtest.h>

#include "kdeood/pipeline.hpp"
#include "kdeood/synthetic.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace kdeood;
using testing_support::TempDir;

namespace {

synthetic::Benchmark small_benchmark() {
  synthetic::BenchmarkSpec spec;
  spec.channels = 4;
  spec.train_rows = 300;
  spec.test_rows = 80;
  spec.ood_rows = 80;
  spec.ood_shift = 2.0;
  return synthetic::make_benchmark(spec);
}

// Writes the benchmark into `dir` and returns a config pointing at it.
PipelineConfig write_benchmark(const TempDir& dir, const synthetic::Benchmark& b) {
  write_dataset(b.train, DatasetRole::in_distribution_train, dir.file("train.kdef"));
  write_dataset(b.test, DatasetRole::in_distribution_test, dir.file("test.kdef"));
  write_dataset(b.perturbed, DatasetRole::perturbed, dir.file("perturbed.kdef"));
  PipelineConfig c;
  for (const auto& o : b.ood) {
    write_dataset(o, DatasetRole::ood, dir.file(o.dataset_name + ".kdef"));
    c.ood.push_back({o.dataset_name, dir.file(o.dataset_name + ".kdef")});
  }
  c.in_dist = dir.file("train.kdef");
  c.perturbed = dir.file("perturbed.kdef");
  c.n = 100;
  c.seed = 11;
  c.k_candidates = KCandidateSet{{5, 10, 20, 50}};
  c.out = dir.file("run");
  return c;
}

}  // namespace

TEST(Config, JsonRoundTripAndOverrides) {
  PipelineConfig c;
  c.in_dist = "a.kdef";
  c.ood = {{"x", "x.kdef"}, {"y", "y.kdef"}};
  c.metric = DistanceMetric::l2;
  c.regime = NegativeRegime::held_out_ood;
  c.target = "x";
  c.fusion.l2_penalty = 0.5;
  c.k_selection_mode = KSelectionMode::full;
  PipelineConfig back;
  merge_config_json(nlohmann::json::parse(to_json(c).dump()), back);
  EXPECT_EQ(back, c);

  PipelineConfig partial;
  merge_config_json(nlohmann::json{{"n", 42}, {"fusion", {{"max_epochs", 5}}}}, partial);
  EXPECT_EQ(partial.n, 42U);
  EXPECT_EQ(partial.fusion.max_epochs, 5U);
  EXPECT_EQ(partial.fusion.learning_rate, 0.1);
  EXPECT_THROW(merge_config_json(nlohmann::json{{"metric", "cosine"}}, partial), Error);
  EXPECT_THROW(merge_config_json(nlohmann::json{{"n", "many"}}, partial), Error);
}

TEST(Pipeline, FitIsStructurallySoundAndMatchesOracleK) {
  TempDir dir("pipe");
  const auto b = small_benchmark();
  const auto config = write_benchmark(dir, b);
  const auto fit = cmd_fit(config);
  ASSERT_EQ(fit.model.layers.size(), 3U);
  ASSERT_EQ(fit.reports.size(), 3U);
  EXPECT_TRUE(std::filesystem::exists(model_path(config)));
  EXPECT_TRUE(std::filesystem::exists(dir.file("run/k_selection.json")));

  const std::span<const std::uint32_t> idx(fit.model.subset.indices);
  std::vector<std::ptrdiff_t> member(idx.size());
  for (std::size_t p = 0; p < idx.size(); ++p) member[p] = static_cast<std::ptrdiff_t>(p);
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& layer = fit.model.layers[l];
    EXPECT_EQ(layer.size(), 100U);
    EXPECT_TRUE(std::ranges::count(config.k_candidates.values, layer.k_used) == 1);
    EXPECT_EQ(layer.k_used, fit.reports[l].chosen_k);
    const auto ref = testing_support::to_rows(b.train.layers[l].values.select_rows(idx));
    const auto pert = testing_support::to_rows(b.perturbed.layers[l].values.select_rows(idx));
    EXPECT_EQ(layer.k_used, oracle::select_k(ref, ref, pert, config.k_candidates.values, false, member))
        << "layer " << l;
  }
}

TEST(Pipeline, FitIsByteDeterministic) {
  TempDir dir("pipe");
  const auto config = write_benchmark(dir, small_benchmark());
  cmd_fit(config);
  const auto first = read_file_bytes(model_path(config));
  cmd_fit(config);
  EXPECT_EQ(read_file_bytes(model_path(config)), first);
}

TEST(Pipeline, FitErrors) {
  TempDir dir("pipe");
  auto config = write_benchmark(dir, small_benchmark());
  auto too_big = config;
  too_big.n = 301;
  EXPECT_THROW(cmd_fit(too_big), Error);
  auto no_pert = config;
  no_pert.perturbed.clear();
  try {
    cmd_fit(no_pert);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::precondition);
  }
}

TEST(Pipeline, AdversarialFusionAndEvaluation) {
  TempDir dir("pipe");
  const auto config = write_benchmark(dir, small_benchmark());
  cmd_fit(config);
  const auto model = cmd_train_fusion(config, model_path(config));
  ASSERT_TRUE(model.fusion.has_value());
  EXPECT_GT(model.fusion->summary.train_accuracy, 0.5);
  EXPECT_EQ(model.provenance.negative_sources, std::vector<std::string>{"perturbed"});
  EXPECT_TRUE(std::filesystem::exists(dir.file("run/fusion.json")));
  EXPECT_EQ(read_model_file(model_path(config)), model);

  const auto outputs = cmd_evaluate(config, model_path(config), dir.file("test.kdef"), config.ood);
  ASSERT_EQ(outputs.size(), 3U);
  for (const auto& o : outputs) {
    EXPECT_TRUE(std::filesystem::exists(dir.file("run/eval_" + o.name + ".json")));
    EXPECT_TRUE(std::filesystem::exists(dir.file("run/roc_" + o.name + ".csv")));
    EXPECT_EQ(o.layer_auroc.size(), 3U);
  }

  // Report equals the metric functions applied to cmd_score output.
  const auto test_csv = parse_score_csv(read_file_text(cmd_score(config, model_path(config), dir.file("test.kdef"))));
  const auto ood_csv = parse_score_csv(read_file_text(cmd_score(config, model_path(config), config.ood[0].path)));
  const auto manual = evaluate(test_csv.confidence, ood_csv.confidence);
  EXPECT_EQ(outputs[0].fused, manual);
}

TEST(Pipeline, ScoreComposesModuleCalls) {
  TempDir dir("pipe");
  const auto b = small_benchmark();
  const auto config = write_benchmark(dir, b);
  cmd_fit(config);
  const auto model = cmd_train_fusion(config, model_path(config));
  const auto parsed = parse_score_csv(read_file_text(cmd_score(config, model_path(config), dir.file("test.kdef"))));
  ASSERT_EQ(parsed.table.rows(), b.test.n_samples());
  EXPECT_EQ(parsed.table.layer_ids, model.layer_ids());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto col = score_batch(model.layers[l], b.test.layers[l].values);
    for (std::size_t r = 0; r < col.size(); ++r) {
      EXPECT_EQ(parsed.table.scores(r, l), col[r]);
      EXPECT_GT(col[r], 0.0);
    }
  }
  const auto conf = confidence_batch(*model.fusion, parsed.table);
  EXPECT_EQ(parsed.confidence, conf);
  EXPECT_EQ(parsed.table.sample_ids[3], "test:3");
}

TEST(Pipeline, ScoringTrainingFileAndSingleRow) {
  TempDir dir("pipe");
  auto b = small_benchmark();
  const auto config = write_benchmark(dir, b);
  cmd_fit(config);
  cmd_train_fusion(config, model_path(config));
  const auto train = parse_score_csv(read_file_text(cmd_score(config, model_path(config), config.in_dist)));
  for (double v : train.table.scores.data()) EXPECT_TRUE(std::isfinite(v) && v > 0.0);

  LayerFeatureSet one = b.test;
  one.dataset_name = "one";
  const std::vector<std::uint32_t> first{0};
  for (auto& layer : one.layers) layer.values = layer.values.select_rows(std::span(first));
  write_dataset(one, DatasetRole::ood, dir.file("one.kdef"));
  const auto single = parse_score_csv(read_file_text(cmd_score(config, model_path(config), dir.file("one.kdef"))));
  EXPECT_EQ(single.table.rows(), 1U);
}

TEST(Pipeline, ScoreRequiresFusionAndMatchingLayers) {
  TempDir dir("pipe");
  auto b = small_benchmark();
  const auto config = write_benchmark(dir, b);
  cmd_fit(config);
  EXPECT_THROW(cmd_score(config, model_path(config), dir.file("test.kdef")), Error);
  cmd_train_fusion(config, model_path(config));
  LayerFeatureSet renamed = b.test;
  renamed.layers[1].id = "other";
  write_dataset(renamed, DatasetRole::ood, dir.file("renamed.kdef"));
  try {
    cmd_score(config, model_path(config), dir.file("renamed.kdef"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(Pipeline, HeldOutRegimeExcludesTarget) {
  TempDir dir("pipe");
  auto config = write_benchmark(dir, small_benchmark());
  cmd_fit(config);
  config.regime = NegativeRegime::held_out_ood;
  config.target = "ood_a";
  const auto model = cmd_train_fusion(config, model_path(config));
  EXPECT_EQ(model.provenance.target, "ood_a");
  EXPECT_EQ(model.provenance.negative_sources, (std::vector<std::string>{"ood_b", "ood_c"}));

  // Rebuild the training table the same way and check no target row enters.
  const auto in = load_dataset(config.in_dist).features;
  std::vector<LayerFeatureSet> negs;
  for (const auto& src : negative_sources(config)) negs.push_back(load_dataset(src.path).features);
  const auto table = build_fusion_training_table(model, in, {&negs[0], &negs[1]});
  EXPECT_EQ(table.rows(), 300U + 160U);
  for (const auto& id : table.sample_ids) EXPECT_NE(id.rfind("ood_a:", 0), 0U) << id;
}

TEST(Pipeline, PositivesUseLeaveOneOutForMembers) {
  TempDir dir("pipe");
  const auto b = small_benchmark();
  const auto config = write_benchmark(dir, b);
  const auto fit = cmd_fit(config);
  const auto table = build_fusion_training_table(fit.model, b.train, {&b.perturbed});
  const auto& subset = fit.model.subset.indices;
  for (std::size_t p = 0; p < 5; ++p) {
    EXPECT_EQ(table.scores(subset[p], 0), loo_score(fit.model.layers[0], p));
  }
}

TEST(Pipeline, RegimePrerequisites) {
  PipelineConfig c;
  c.perturbed.clear();
  EXPECT_THROW(negative_sources(c), Error);
  c.regime = NegativeRegime::held_out_ood;
  c.ood = {{"a", "a.kdef"}};
  c.target = "a";
  EXPECT_THROW(negative_sources(c), Error);
  c.ood.push_back({"b", "b.kdef"});
  c.target = "";
  EXPECT_THROW(negative_sources(c), Error);
  c.target = "zzz";
  EXPECT_THROW(negative_sources(c), Error);
  c.target = "b";
  EXPECT_EQ(negative_sources(c), (std::vector<NamedPath>{{"a", "a.kdef"}}));
}

TEST(Pipeline, TestAgainstItselfIsFifty) {
  TempDir dir("pipe");
  const auto config = write_benchmark(dir, small_benchmark());
  cmd_fit(config);
  cmd_train_fusion(config, model_path(config));
  const auto out = cmd_evaluate(config, model_path(config), dir.file("test.kdef"), {{"self", dir.file("test.kdef")}});
  EXPECT_EQ(out[0].fused.auroc, 50.0);
}

TEST(Pipeline, FullSelectionModeRuns) {
  TempDir dir("pipe");
  auto config = write_benchmark(dir, small_benchmark());
  config.k_selection_mode = KSelectionMode::full;
  const auto fit = cmd_fit(config);
  EXPECT_EQ(fit.reports.size(), 3U);
}

TEST(ScoreCsv, RoundTrip) {
  ScoredSet s;
  s.table.layer_ids = {"a", "b"};
  s.table.sample_ids = {"x:0", "x:1"};
  s.table.scores = Matrix<double>{{0.1, 1e-300}, {3.25, 0.2}};
  s.confidence = {-1.5, 2.0 / 3.0};
  const auto text = score_csv(s);
  const auto back = parse_score_csv(text);
  EXPECT_EQ(back.table.scores, s.table.scores);
  EXPECT_EQ(back.confidence, s.confidence);
  EXPECT_EQ(score_csv(back), text);
}
