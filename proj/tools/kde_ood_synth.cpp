// Writes the synthetic benchmark feature files (with manifests) and a sample
// config into a directory, for trying out the kde_ood CLI.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kdeood/pipeline.hpp"
#include "kdeood/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic KDEF feature files"};
  std::string dir = "synthetic";
  kdeood::synthetic::BenchmarkSpec spec;
  app.add_option("--dir", dir, "output directory");
  app.add_option("--channels", spec.channels, "channels per layer");
  app.add_option("--train-rows", spec.train_rows, "in-distribution training rows");
  app.add_option("--test-rows", spec.test_rows, "in-distribution test rows");
  app.add_option("--ood-rows", spec.ood_rows, "rows per OOD set");
  app.add_option("--shift", spec.ood_shift, "OOD mean shift per coordinate");
  app.add_option("--seed", spec.seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(dir);
    const auto b = kdeood::synthetic::make_benchmark(spec);
    auto path = [&](const std::string& name) { return (std::filesystem::path(dir) / (name + ".kdef")).string(); };
    using kdeood::DatasetRole;
    kdeood::write_dataset(b.train, DatasetRole::in_distribution_train, path("train"));
    kdeood::write_dataset(b.test, DatasetRole::in_distribution_test, path("test"));
    kdeood::write_dataset(b.perturbed, DatasetRole::perturbed, path("perturbed"));
    kdeood::PipelineConfig config;
    config.in_dist = path("train");
    config.perturbed = path("perturbed");
    config.n = 500;
    config.out = (std::filesystem::path(dir) / "run").string();
    for (const auto& o : b.ood) {
      kdeood::write_dataset(o, DatasetRole::ood, path(o.dataset_name));
      config.ood.push_back({o.dataset_name, path(o.dataset_name)});
    }
    config.target = "ood_a";
    kdeood::write_file_text((std::filesystem::path(dir) / "config.json").string(),
                            kdeood::to_json(config).dump(2) + "\n");
    std::cout << "wrote synthetic benchmark to " << dir << "\n";
  } catch (const kdeood::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  }
  return 0;
}
