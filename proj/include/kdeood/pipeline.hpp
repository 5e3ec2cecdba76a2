#pragma once

// End-to-end detector pipeline, from reference subsampling through fusion
// training to evaluation reports.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdeood/binary_io.hpp"
#include "kdeood/error.hpp"
#include "kdeood/feature_store.hpp"
#include "kdeood/fusion.hpp"
#include "kdeood/k_selection.hpp"
#include "kdeood/kde.hpp"
#include "kdeood/metrics.hpp"
#include "kdeood/model_file.hpp"
#include "kdeood/parallel.hpp"

namespace kdeood {

/// Which rows enter the k-selection objective.
enum class KSelectionMode {
  subset,  // the N reference rows (leave-one-out) and their perturbed counterparts
  full,    // every in-distribution training row and every perturbed row
};

struct NamedPath {
  std::string name;
  std::string path;

  friend bool operator==(const NamedPath&, const NamedPath&) = default;
};

struct PipelineConfig {
  std::string in_dist;                 // in-distribution training features
  std::string perturbed;               // perturbed counterparts; empty if absent
  std::vector<NamedPath> ood;          // named OOD feature files
  std::uint64_t n = 1000;              // reference subsample size
  std::uint64_t seed = 0;
  DistanceMetric metric = kDefaultMetric;
  KCandidateSet k_candidates;
  KSelectionMode k_selection_mode = KSelectionMode::subset;
  TrainConfig fusion;
  NegativeRegime regime = NegativeRegime::adversarial;
  std::string target;                  // held-out-ood: OOD set excluded from training
  std::string out = ".";
  bool interpolate_fpr = false;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json ood = nlohmann::ordered_json::object();
  for (const auto& o : c.ood) ood[o.name] = o.path;
  nlohmann::json fusion = c.fusion;
  return {{"in_dist", c.in_dist},
          {"perturbed", c.perturbed},
          {"ood", ood},
          {"n", c.n},
          {"seed", c.seed},
          {"metric", std::string(to_string(c.metric))},
          {"k_candidates", c.k_candidates.values},
          {"k_selection_mode", c.k_selection_mode == KSelectionMode::full ? "full" : "subset"},
          {"fusion", nlohmann::ordered_json::parse(fusion.dump())},
          {"regime", to_string(c.regime)},
          {"target", c.target},
          {"out", c.out},
          {"interpolate_fpr", c.interpolate_fpr}};
}

/// Apply keys present in `j` on top of `c`.
inline void merge_config_json(const nlohmann::json& j, PipelineConfig& c) {
  try {
    if (j.contains("in_dist")) j.at("in_dist").get_to(c.in_dist);
    if (j.contains("perturbed")) j.at("perturbed").get_to(c.perturbed);
    if (j.contains("ood")) {
      c.ood.clear();
      for (const auto& [name, path] : j.at("ood").items()) c.ood.push_back({name, path.get<std::string>()});
    }
    if (j.contains("n")) j.at("n").get_to(c.n);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("metric")) c.metric = parse_metric(j.at("metric").get<std::string>());
    if (j.contains("k_candidates")) j.at("k_candidates").get_to(c.k_candidates.values);
    if (j.contains("k_selection_mode")) {
      const auto m = j.at("k_selection_mode").get<std::string>();
      if (m == "subset") {
        c.k_selection_mode = KSelectionMode::subset;
      } else if (m == "full") {
        c.k_selection_mode = KSelectionMode::full;
      } else {
        detail::fail(ErrorKind::usage, "k_selection_mode must be subset|full");
      }
    }
    if (j.contains("fusion")) {
      TrainConfig t = c.fusion;
      nlohmann::json merged = t;
      merged.update(j.at("fusion"));
      merged.get_to(c.fusion);
    }
    if (j.contains("regime")) c.regime = parse_regime(j.at("regime").get<std::string>());
    if (j.contains("target")) j.at("target").get_to(c.target);
    if (j.contains("out")) j.at("out").get_to(c.out);
    if (j.contains("interpolate_fpr")) j.at("interpolate_fpr").get_to(c.interpolate_fpr);
  } catch (const nlohmann::json::exception& e) {
    detail::fail(ErrorKind::usage, std::string("config: ") + e.what());
  }
}

inline PipelineConfig load_config(const std::string& path) {
  PipelineConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_text(path));
  } catch (const nlohmann::json::exception& e) {
    detail::fail(ErrorKind::usage, path + ": " + e.what());
  }
  merge_config_json(j, c);
  return c;
}

inline std::string model_path(const PipelineConfig& c) {
  return (std::filesystem::path(c.out) / "model.kdem").string();
}

// ---------------------------------------------------------------------------
// In-memory stages

namespace detail {

inline void check_layers_match(const std::vector<std::string>& expected, const LayerFeatureSet& set) {
  const auto got = set.layer_ids();
  if (got != expected) {
    std::string e;
    for (const auto& id : expected) e += (e.empty() ? "" : ",") + id;
    std::string g;
    for (const auto& id : got) g += (g.empty() ? "" : ",") + id;
    fail(ErrorKind::dimension, "dataset '" + set.dataset_name + "' layers [" + g +
                                   "] do not match model layers [" + e + "]");
  }
}

// For each in-distribution training row, its position in the reference subset.
inline ReferenceMembership membership_of(const ReferenceSubset& subset, std::size_t rows) {
  ReferenceMembership m(rows);
  for (std::size_t p = 0; p < subset.indices.size(); ++p) m[subset.indices[p]] = p;
  return m;
}

}  // namespace detail

struct FitResult {
  PipelineModel model;
  std::vector<KSelectionReport> reports;
};

/// Evaluation rows for the k-selection objective of one layer.
struct SelectionRows {
  FeatureMatrix in_dist;
  FeatureMatrix perturbed;
  ReferenceMembership membership;
};

inline SelectionRows selection_rows(const FeatureMatrix& in_dist, const FeatureMatrix& perturbed,
                                    const ReferenceSubset& subset, KSelectionMode mode) {
  SelectionRows rows;
  const std::span<const std::uint32_t> idx(subset.indices);
  if (mode == KSelectionMode::full) {
    rows.in_dist = in_dist;
    rows.perturbed = perturbed;
    rows.membership = detail::membership_of(subset, in_dist.rows());
    return rows;
  }
  rows.in_dist = in_dist.select_rows(idx);
  rows.membership.resize(idx.size());
  for (std::size_t p = 0; p < idx.size(); ++p) rows.membership[p] = p;
  // Perturbed rows are counterparts of training rows when the counts agree.
  rows.perturbed = perturbed.rows() == in_dist.rows() ? perturbed.select_rows(idx) : perturbed;
  return rows;
}

/// Subsample references, select k per layer and fit every layer model.
inline FitResult fit_pipeline(const Dataset& in_dist, const Dataset& perturbed,
                              const PipelineConfig& config,
                              std::size_t workers = default_worker_count()) {
  detail::require(config.n >= 2, ErrorKind::usage, "N must be >= 2");
  detail::check_layers_match(in_dist.features.layer_ids(), perturbed.features);
  const std::size_t m = in_dist.features.n_samples();
  if (config.n > m) {
    detail::fail(ErrorKind::invalid_argument, "N = " + std::to_string(config.n) +
                                                  " exceeds the in-distribution size M = " + std::to_string(m));
  }
  FitResult result;
  auto& model = result.model;
  model.subset = subsample(m, config.n, config.seed);
  model.in_dist_checksum = in_dist.manifest.checksum;
  model.config_json = to_json(config).dump(2);

  const std::span<const std::uint32_t> idx(model.subset.indices);
  for (std::size_t l = 0; l < in_dist.features.n_layers(); ++l) {
    const auto& layer = in_dist.features.layers[l];
    FeatureMatrix reference = layer.values.select_rows(idx);
    const auto rows = selection_rows(layer.values, perturbed.features.layers[l].values, model.subset,
                                     config.k_selection_mode);
    auto report = select_k({reference, rows.in_dist, rows.perturbed, rows.membership},
                           config.k_candidates, config.metric, layer.id, workers);
    model.layers.push_back(fit_layer(std::move(reference), report.chosen_k, config.metric, layer.id, workers));
    result.reports.push_back(std::move(report));
  }
  return result;
}

/// Per-layer scores for every row of `set`. Rows listed in `membership` are
/// scored leave-one-out. Sample ids are "<dataset>:<row>".
inline ScoreTable score_layers(const PipelineModel& model, const LayerFeatureSet& set,
                               const ReferenceMembership& membership = {},
                               std::size_t workers = default_worker_count()) {
  detail::check_layers_match(model.layer_ids(), set);
  ScoreTable t;
  t.layer_ids = model.layer_ids();
  t.scores = Matrix<double>(set.n_samples(), model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto col = score_batch_excluding_self(model.layers[l], set.layers[l].values, membership, workers);
    for (std::size_t r = 0; r < col.size(); ++r) t.scores(r, l) = col[r];
  }
  t.sample_ids.reserve(set.n_samples());
  for (std::size_t r = 0; r < set.n_samples(); ++r) t.sample_ids.push_back(set.dataset_name + ":" + std::to_string(r));
  return t;
}

inline void append_rows(ScoreTable& dst, const ScoreTable& src, Label label) {
  Matrix<double> merged(dst.rows() + src.rows(), src.n_layers());
  for (std::size_t r = 0; r < dst.rows(); ++r) std::ranges::copy(dst.scores.row(r), merged.row(r).begin());
  for (std::size_t r = 0; r < src.rows(); ++r) std::ranges::copy(src.scores.row(r), merged.row(dst.rows() + r).begin());
  dst.scores = std::move(merged);
  dst.sample_ids.insert(dst.sample_ids.end(), src.sample_ids.begin(), src.sample_ids.end());
  dst.labels.insert(dst.labels.end(), src.rows(), label);
  if (dst.layer_ids.empty()) dst.layer_ids = src.layer_ids;
}

/// Labelled fusion training table: positives are the in-distribution training
/// rows (reference members scored leave-one-out), negatives are `negatives`.
inline ScoreTable build_fusion_training_table(const PipelineModel& model, const LayerFeatureSet& in_dist,
                                              const std::vector<const LayerFeatureSet*>& negatives,
                                              std::size_t workers = default_worker_count()) {
  detail::require(!negatives.empty(), ErrorKind::precondition, "fusion training needs negative samples");
  detail::require(in_dist.n_samples() == model.subset.population, ErrorKind::precondition,
                  "in-distribution file does not match the fitted model (row count)");
  ScoreTable table;
  const auto membership = detail::membership_of(model.subset, in_dist.n_samples());
  append_rows(table, score_layers(model, in_dist, membership, workers), Label::positive);
  for (const auto* neg : negatives) append_rows(table, score_layers(model, *neg, {}, workers), Label::negative);
  return table;
}

/// Negative datasets for the configured regime. Held-out-ood pools every OOD
/// set except the target.
inline std::vector<NamedPath> negative_sources(const PipelineConfig& config) {
  if (config.regime == NegativeRegime::adversarial) {
    detail::require(!config.perturbed.empty(), ErrorKind::precondition,
                    "adversarial regime requires a perturbed feature file (--perturbed)");
    return {{"perturbed", config.perturbed}};
  }
  detail::require(config.ood.size() >= 2, ErrorKind::precondition,
                  "held-out-ood regime requires at least 2 OOD datasets (--ood name=path)");
  detail::require(!config.target.empty(), ErrorKind::precondition,
                  "held-out-ood regime requires --target naming the evaluated OOD set");
  const bool has_target = std::ranges::any_of(config.ood, [&](const auto& o) { return o.name == config.target; });
  detail::require(has_target, ErrorKind::precondition,
                  "held-out-ood target '" + config.target + "' is not among the OOD datasets");
  std::vector<NamedPath> out;
  for (const auto& o : config.ood) {
    if (o.name != config.target) out.push_back(o);
  }
  return out;
}

inline void train_pipeline_fusion(PipelineModel& model, const LayerFeatureSet& in_dist,
                                  const std::vector<std::pair<std::string, LayerFeatureSet>>& negatives,
                                  const PipelineConfig& config,
                                  std::size_t workers = default_worker_count()) {
  std::vector<const LayerFeatureSet*> sets;
  for (const auto& [name, set] : negatives) sets.push_back(&set);
  const auto table = build_fusion_training_table(model, in_dist, sets, workers);
  model.fusion = train_fusion(table, config.fusion);
  model.provenance.regime = config.regime;
  model.provenance.target = config.regime == NegativeRegime::held_out_ood ? config.target : std::string{};
  model.provenance.negative_sources.clear();
  for (const auto& [name, set] : negatives) model.provenance.negative_sources.push_back(name);
}

/// Per-layer scores plus the fused confidence for every row.
struct ScoredSet {
  ScoreTable table;
  std::vector<double> confidence;
};

inline ScoredSet score_pipeline(const PipelineModel& model, const LayerFeatureSet& set,
                                std::size_t workers = default_worker_count()) {
  detail::require(model.fusion.has_value(), ErrorKind::precondition,
                  "model has no fusion weights; run train-fusion first");
  ScoredSet s;
  s.table = score_layers(model, set, {}, workers);
  s.confidence = confidence_batch(*model.fusion, s.table);
  return s;
}

// ---------------------------------------------------------------------------
// Score table CSV: "sample_id,<layer ids...>,confidence"

inline std::string score_csv(const ScoredSet& s) {
  std::string out = "sample_id";
  for (const auto& id : s.table.layer_ids) out += "," + id;
  out += ",confidence\n";
  for (std::size_t r = 0; r < s.table.rows(); ++r) {
    out += s.table.sample_ids[r];
    for (double v : s.table.scores.row(r)) out += "," + format_double(v);
    out += "," + format_double(s.confidence[r]) + "\n";
  }
  return out;
}

inline ScoredSet parse_score_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  detail::require(static_cast<bool>(std::getline(in, line)), ErrorKind::format, "score csv: empty");
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream ss(l);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    return f;
  };
  const auto header = split(line);
  detail::require(header.size() >= 3 && header.front() == "sample_id" && header.back() == "confidence",
                  ErrorKind::format, "score csv: bad header");
  ScoredSet s;
  s.table.layer_ids.assign(header.begin() + 1, header.end() - 1);
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    detail::require(f.size() == header.size(), ErrorKind::format, "score csv: ragged row");
    s.table.sample_ids.push_back(f.front());
    for (std::size_t i = 1; i + 1 < f.size(); ++i) values.push_back(std::stod(f[i]));
    s.confidence.push_back(std::stod(f.back()));
  }
  s.table.scores = Matrix<double>(s.confidence.size(), s.table.layer_ids.size(), std::move(values));
  return s;
}

// ---------------------------------------------------------------------------
// File-level commands. Each writes into config.out.

namespace detail {

inline void ensure_out_dir(const PipelineConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(c.out, ec);
  if (ec) fail(ErrorKind::io, "cannot create output directory '" + c.out + "': " + ec.message());
}

inline std::string out_file(const PipelineConfig& c, const std::string& name) {
  return (std::filesystem::path(c.out) / name).string();
}

inline std::string reports_json(const std::vector<KSelectionReport>& reports) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr.dump(2) + "\n";
}

inline Dataset load_in_dist(const PipelineConfig& c) {
  require(!c.in_dist.empty(), ErrorKind::usage, "no in-distribution features given (--in-dist)");
  return load_dataset(c.in_dist, DatasetRole::in_distribution_train);
}

inline Dataset load_perturbed(const PipelineConfig& c) {
  require(!c.perturbed.empty(), ErrorKind::precondition,
          "k selection requires a perturbed feature file (--perturbed)");
  return load_dataset(c.perturbed, DatasetRole::perturbed);
}

}  // namespace detail

/// Writes model.kdem and k_selection.json.
inline FitResult cmd_fit(const PipelineConfig& config) {
  const auto in_dist = detail::load_in_dist(config);
  const auto perturbed = detail::load_perturbed(config);
  auto result = fit_pipeline(in_dist, perturbed, config);
  detail::ensure_out_dir(config);
  write_model_file(result.model, model_path(config));
  write_file_text(detail::out_file(config, "k_selection.json"), detail::reports_json(result.reports));
  return result;
}

/// Standalone k selection report (k_selection.json); no model is written.
inline std::vector<KSelectionReport> cmd_select_k(const PipelineConfig& config) {
  const auto result = fit_pipeline(detail::load_in_dist(config), detail::load_perturbed(config), config);
  detail::ensure_out_dir(config);
  write_file_text(detail::out_file(config, "k_selection.json"), detail::reports_json(result.reports));
  return result.reports;
}

/// Adds fusion weights to the model at `model_file`; writes fusion.json.
inline PipelineModel cmd_train_fusion(const PipelineConfig& config, const std::string& model_file) {
  auto model = read_model_file(model_file);
  const auto sources = negative_sources(config);
  const auto in_dist = detail::load_in_dist(config);
  detail::require(in_dist.manifest.checksum == model.in_dist_checksum, ErrorKind::precondition,
                  "in-distribution file '" + config.in_dist + "' is not the one the model was fitted on");
  std::vector<std::pair<std::string, LayerFeatureSet>> negatives;
  for (const auto& src : sources) {
    const auto role = config.regime == NegativeRegime::adversarial ? DatasetRole::perturbed : DatasetRole::ood;
    negatives.emplace_back(src.name, load_dataset(src.path, role).features);
  }
  train_pipeline_fusion(model, in_dist.features, negatives, config);
  detail::ensure_out_dir(config);
  write_model_file(model, model_file);
  auto j = to_json(*model.fusion);
  j["layer_ids"] = model.layer_ids();
  j["regime"] = to_string(model.provenance.regime);
  j["target"] = model.provenance.target;
  j["negative_sources"] = model.provenance.negative_sources;
  write_file_text(detail::out_file(config, "fusion.json"), j.dump(2) + "\n");
  return model;
}

/// Scores one feature file; writes <stem>.scores.csv. Returns the output path.
inline std::string cmd_score(const PipelineConfig& config, const std::string& model_file,
                             const std::string& features) {
  const auto model = read_model_file(model_file);
  const auto set = load_dataset(features, DatasetRole::ood).features;
  const auto scored = score_pipeline(model, set);
  detail::ensure_out_dir(config);
  const auto path = detail::out_file(config, std::filesystem::path(features).stem().string() + ".scores.csv");
  write_file_text(path, score_csv(scored));
  return path;
}

struct EvaluationOutput {
  std::string name;
  EvalReport fused;
  std::vector<std::pair<std::string, double>> layer_auroc;
};

/// Fused confidences on `in_dist_test` are positives, each OOD set supplies
/// negatives. Writes eval_<name>.json and roc_<name>.csv per OOD set.
inline std::vector<EvaluationOutput> cmd_evaluate(const PipelineConfig& config, const std::string& model_file,
                                                  const std::string& in_dist_test,
                                                  const std::vector<NamedPath>& ood) {
  detail::require(!ood.empty(), ErrorKind::usage, "evaluate needs at least one --ood name=path");
  const auto model = read_model_file(model_file);
  const auto test = load_dataset(in_dist_test, DatasetRole::in_distribution_test).features;
  const auto pos = score_pipeline(model, test);
  detail::ensure_out_dir(config);
  std::vector<EvaluationOutput> outputs;
  for (const auto& o : ood) {
    const auto neg = score_pipeline(model, load_dataset(o.path, DatasetRole::ood).features);
    EvaluationOutput out;
    out.name = o.name;
    out.fused = evaluate(pos.confidence, neg.confidence, config.interpolate_fpr);
    auto j = to_json(out.fused);
    nlohmann::ordered_json per_layer = nlohmann::ordered_json::object();
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      std::vector<double> p(pos.table.rows());
      std::vector<double> n(neg.table.rows());
      for (std::size_t r = 0; r < p.size(); ++r) p[r] = pos.table.scores(r, l);
      for (std::size_t r = 0; r < n.size(); ++r) n[r] = neg.table.scores(r, l);
      const double a = auroc(p, n);
      out.layer_auroc.emplace_back(model.layers[l].layer_id, a);
      per_layer[model.layers[l].layer_id] = a;
    }
    j["per_layer_auroc"] = per_layer;
    j["ood"] = o.name;
    write_file_text(detail::out_file(config, "eval_" + o.name + ".json"), j.dump(2) + "\n");
    write_file_text(detail::out_file(config, "roc_" + o.name + ".csv"), roc_csv(out.fused.roc_points));
    outputs.push_back(std::move(out));
  }
  return outputs;
}

}  // namespace kdeood
