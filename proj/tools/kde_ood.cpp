// kde_ood: command-line driver for the KDE out-of-distribution detector.
//
//   kde_ood fit          --in-dist train.kdef --perturbed adv.kdef --out run/
//   kde_ood train-fusion --in-dist train.kdef --perturbed adv.kdef --out run/
//   kde_ood score        --out run/ --input test.kdef
//   kde_ood evaluate     --out run/ --in-dist-test test.kdef --ood svhn=svhn.kdef
//   kde_ood select-k     --in-dist train.kdef --perturbed adv.kdef --out run/
//
// Every flag mirrors a key of the JSON file given by --config and overrides it.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kdeood/error.hpp"
#include "kdeood/pipeline.hpp"

namespace {

using kdeood::ErrorKind;

struct Flags {
  std::string config;
  std::string in_dist;
  std::string perturbed;
  std::vector<std::string> ood;
  std::uint64_t n = 0;
  std::uint64_t seed = 0;
  std::string metric;
  std::string regime;
  std::string target;
  std::string out;
  std::vector<std::size_t> k_candidates;
  std::string k_selection_mode;
  double learning_rate = 0;
  std::uint32_t max_epochs = 0;
  double l2_penalty = 0;
  bool raw_scores = false;
  bool interpolate_fpr = false;

  std::string model;
  std::string input;
  std::string in_dist_test;
};

std::vector<kdeood::NamedPath> parse_named_paths(const std::vector<std::string>& specs) {
  std::vector<kdeood::NamedPath> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      kdeood::detail::fail(ErrorKind::usage, "--ood expects name=path, got '" + s + "'");
    }
    out.push_back({s.substr(0, eq), s.substr(eq + 1)});
  }
  return out;
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file; flags override its keys");
  cmd->add_option("--in-dist", f.in_dist, "in-distribution training features (KDEF)");
  cmd->add_option("--perturbed", f.perturbed, "perturbed in-distribution features (KDEF)");
  cmd->add_option("--ood", f.ood, "OOD features as name=path (repeatable)");
  cmd->add_option("--n", f.n, "reference subsample size N");
  cmd->add_option("--seed", f.seed, "subsampling seed");
  cmd->add_option("--metric", f.metric, "distance metric")->check(CLI::IsMember({"l1", "l2"}));
  cmd->add_option("--regime", f.regime, "fusion negatives")
      ->check(CLI::IsMember({"adversarial", "held-out-ood"}));
  cmd->add_option("--target", f.target, "held-out-ood: OOD set excluded from fusion training");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--k-candidates", f.k_candidates, "candidate k values")->delimiter(',');
  cmd->add_option("--k-selection-mode", f.k_selection_mode, "rows used to select k")
      ->check(CLI::IsMember({"subset", "full"}));
  cmd->add_option("--learning-rate", f.learning_rate, "fusion gradient-descent step");
  cmd->add_option("--max-epochs", f.max_epochs, "fusion epoch limit");
  cmd->add_option("--l2", f.l2_penalty, "fusion L2 penalty on alpha");
  cmd->add_flag("--raw-scores", f.raw_scores, "fusion on raw (unstandardized) layer scores");
  cmd->add_flag("--interpolate-fpr", f.interpolate_fpr, "interpolate FPR at 95% TPR between ROC points");
  cmd->add_option("--model", f.model, "model file (default <out>/model.kdem)");
}

kdeood::PipelineConfig resolve_config(const CLI::App* cmd, const Flags& f) {
  kdeood::PipelineConfig c;
  if (!f.config.empty()) c = kdeood::load_config(f.config);
  auto given = [&](const char* name) { return cmd->count(name) > 0; };
  if (given("--in-dist")) c.in_dist = f.in_dist;
  if (given("--perturbed")) c.perturbed = f.perturbed;
  if (given("--ood")) c.ood = parse_named_paths(f.ood);
  if (given("--n")) c.n = f.n;
  if (given("--seed")) c.seed = f.seed;
  if (given("--metric")) c.metric = kdeood::parse_metric(f.metric);
  if (given("--regime")) c.regime = kdeood::parse_regime(f.regime);
  if (given("--target")) c.target = f.target;
  if (given("--out")) c.out = f.out;
  if (given("--k-candidates")) c.k_candidates.values = f.k_candidates;
  if (given("--k-selection-mode")) {
    c.k_selection_mode = f.k_selection_mode == "full" ? kdeood::KSelectionMode::full
                                                      : kdeood::KSelectionMode::subset;
  }
  if (given("--learning-rate")) c.fusion.learning_rate = f.learning_rate;
  if (given("--max-epochs")) c.fusion.max_epochs = f.max_epochs;
  if (given("--l2")) c.fusion.l2_penalty = f.l2_penalty;
  if (given("--raw-scores")) c.fusion.standardize = false;
  if (given("--interpolate-fpr")) c.interpolate_fpr = true;
  return c;
}

std::string model_file(const Flags& f, const kdeood::PipelineConfig& c) {
  return f.model.empty() ? kdeood::model_path(c) : f.model;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KDE-based out-of-distribution detection over per-layer deep features"};
  app.require_subcommand(1);
  Flags f;

  auto* fit = app.add_subcommand("fit", "subsample references, select k per layer, fit layer models");
  auto* train = app.add_subcommand("train-fusion", "train the logistic fusion of layer scores");
  auto* score = app.add_subcommand("score", "per-layer scores and fused confidence for a feature file");
  auto* eval = app.add_subcommand("evaluate", "OOD metrics of in-distribution test vs OOD sets");
  auto* select = app.add_subcommand("select-k", "report the k selection objective per layer");
  for (auto* cmd : {fit, train, score, eval, select}) add_common(cmd, f);
  score->add_option("--input", f.input, "feature file to score")->required();
  eval->add_option("--in-dist-test", f.in_dist_test, "in-distribution test features")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (fit->parsed()) {
      const auto c = resolve_config(fit, f);
      const auto result = kdeood::cmd_fit(c);
      for (const auto& r : result.reports) {
        std::cout << "layer " << r.layer_id << ": k = " << r.chosen_k << "\n";
      }
      std::cout << "wrote " << kdeood::model_path(c) << "\n";
    } else if (train->parsed()) {
      const auto c = resolve_config(train, f);
      const auto model = kdeood::cmd_train_fusion(c, model_file(f, c));
      std::cout << "fusion trained (" << kdeood::to_string(model.provenance.regime)
                << "), training accuracy " << kdeood::format_percent(100.0 * model.fusion->summary.train_accuracy)
                << "%, epochs " << model.fusion->summary.epochs << "\n";
    } else if (score->parsed()) {
      const auto c = resolve_config(score, f);
      std::cout << "wrote " << kdeood::cmd_score(c, model_file(f, c), f.input) << "\n";
    } else if (eval->parsed()) {
      const auto c = resolve_config(eval, f);
      for (const auto& o : kdeood::cmd_evaluate(c, model_file(f, c), f.in_dist_test, c.ood)) {
        std::cout << o.name << ": FPR@95TPR " << kdeood::format_percent(o.fused.fpr_at_95_tpr)
                  << "  Perr " << kdeood::format_percent(o.fused.detection_error) << "  AUROC "
                  << kdeood::format_percent(o.fused.auroc) << "  AUPR "
                  << kdeood::format_percent(o.fused.aupr) << "\n";
      }
    } else if (select->parsed()) {
      const auto c = resolve_config(select, f);
      for (const auto& r : kdeood::cmd_select_k(c)) {
        std::cout << "layer " << r.layer_id << ": k = " << r.chosen_k << "\n";
      }
    }
  } catch (const kdeood::Error& e) {
    std::cerr << "error (" << kdeood::to_string(e.kind()) << "): " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
