#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "kdeood/matrix.hpp"
#include "support/oracles.hpp"

namespace testing_support {

inline kdeood::FeatureMatrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                           double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  kdeood::FeatureMatrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(u(rng));
  return m;
}

inline kdeood::FeatureMatrix normal_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                           double mean = 0.0, double sd = 1.0) {
  std::normal_distribution<double> n(mean, sd);
  kdeood::FeatureMatrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(n(rng));
  return m;
}

inline oracle::Rows to_rows(const kdeood::FeatureMatrix& m) {
  oracle::Rows out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("kdeood_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
