#pragma once

// Deterministic synthetic feature sets for tests and demos. Gaussian draws
// use Box-Muller over mt19937_64 so files are identical across platforms.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "kdeood/feature_store.hpp"

namespace kdeood::synthetic {

class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : engine_(seed) {}

  double uniform01() {  // (0, 1)
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform01()));
    const double theta = 2.0 * std::numbers::pi * uniform01();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct LayerShape {
  std::string id;
  std::size_t channels = 16;
  double shift = 0.0;  // added to every coordinate's mean
  double scale = 1.0;  // standard deviation
};

/// Rows x channels of N(shift, scale^2) per layer, independent across layers.
inline LayerFeatureSet gaussian_set(const std::string& name, std::size_t rows,
                                    const std::vector<LayerShape>& layers, std::uint64_t seed) {
  NormalSource src(seed);
  LayerFeatureSet set;
  set.dataset_name = name;
  for (const auto& shape : layers) {
    FeatureMatrix m(rows, shape.channels);
    for (float& v : m.data()) v = static_cast<float>(shape.shift + shape.scale * src.normal());
    set.layers.push_back({shape.id, std::move(m)});
  }
  return set;
}

/// Row-aligned perturbed copy: every coordinate moves by +/- epsilon.
inline LayerFeatureSet sign_perturbed(const LayerFeatureSet& base, const std::string& name,
                                      double epsilon, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  LayerFeatureSet out = base;
  out.dataset_name = name;
  for (auto& layer : out.layers) {
    for (float& v : layer.values.data()) {
      v = static_cast<float>(v + ((engine() >> 63) != 0 ? epsilon : -epsilon));
    }
  }
  return out;
}

/// The standard benchmark: 3 layers of 16 channels, in-distribution N(0, I),
/// OOD sets shifted by layer-dependent amounts.
struct Benchmark {
  LayerFeatureSet train;
  LayerFeatureSet test;
  LayerFeatureSet perturbed;
  std::vector<LayerFeatureSet> ood;  // "ood_a" (primary target), "ood_b", "ood_c"
};

struct BenchmarkSpec {
  std::size_t channels = 16;
  std::size_t train_rows = 2000;
  std::size_t test_rows = 500;
  std::size_t ood_rows = 500;
  double ood_shift = 1.0;         // per-coordinate mean shift of the primary target, layer 1
  std::vector<double> layer_weights{1.0, 0.6, 0.35};  // shift multiplier per layer
  double perturb_epsilon = 0.5;
  std::uint64_t seed = 7;
};

inline Benchmark make_benchmark(const BenchmarkSpec& spec = {}) {
  auto shapes = [&](double shift) {
    std::vector<LayerShape> s;
    for (std::size_t l = 0; l < spec.layer_weights.size(); ++l) {
      s.push_back({"layer" + std::to_string(l + 1), spec.channels, shift * spec.layer_weights[l], 1.0});
    }
    return s;
  };
  Benchmark b;
  b.train = gaussian_set("train", spec.train_rows, shapes(0.0), spec.seed);
  b.test = gaussian_set("test", spec.test_rows, shapes(0.0), spec.seed + 1);
  b.perturbed = sign_perturbed(b.train, "perturbed", spec.perturb_epsilon, spec.seed + 2);
  b.ood.push_back(gaussian_set("ood_a", spec.ood_rows, shapes(spec.ood_shift), spec.seed + 3));
  b.ood.push_back(gaussian_set("ood_b", spec.ood_rows, shapes(0.8 * spec.ood_shift), spec.seed + 4));
  b.ood.push_back(gaussian_set("ood_c", spec.ood_rows, shapes(-1.2 * spec.ood_shift), spec.seed + 5));
  return b;
}

}  // namespace kdeood::synthetic
