#pragma once

// Feature file format ("KDEF", version 1), all integers little-endian:
//
//   magic      4 bytes  "KDEF"
//   version    u16      1
//   layers     u16      L >= 1
//   L times:
//     id_len   u16, then id_len bytes of UTF-8 layer id
//     rows     u32      n_samples (identical across layers)
//     cols     u32      n_channels
//     payload  rows*cols IEEE-754 binary32, row-major
//   checksum   u64      FNV-1a over every preceding byte
//
// Size = 8 + sum_l (2 + |id_l| + 8 + 4*rows*cols_l) + 8.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "kdeood/binary_io.hpp"
#include "kdeood/error.hpp"
#include "kdeood/matrix.hpp"

namespace kdeood {

inline constexpr char kFeatureMagic[4] = {'K', 'D', 'E', 'F'};
inline constexpr std::uint16_t kFeatureFormatVersion = 1;

struct Layer {
  std::string id;
  FeatureMatrix values;  // n_samples x n_channels

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Per-layer channel-mean feature vectors for one dataset. Layer order is
/// the canonical order used by every model fitted on it.
struct LayerFeatureSet {
  std::string dataset_name;
  std::vector<Layer> layers;

  std::size_t n_samples() const { return layers.empty() ? 0 : layers.front().values.rows(); }
  std::size_t n_layers() const { return layers.size(); }

  std::vector<std::string> layer_ids() const {
    std::vector<std::string> ids;
    ids.reserve(layers.size());
    for (const auto& l : layers) ids.push_back(l.id);
    return ids;
  }

  friend bool operator==(const LayerFeatureSet&, const LayerFeatureSet&) = default;
};

/// Throws unless `set` satisfies every LayerFeatureSet invariant.
inline void validate(const LayerFeatureSet& set) {
  const std::string ctx = "feature set '" + set.dataset_name + "'";
  detail::require(!set.layers.empty(), ErrorKind::invalid_argument, ctx + ": no layers");
  detail::require(set.layers.size() <= 0xFFFF, ErrorKind::invalid_argument,
                  ctx + ": too many layers");
  const std::size_t rows = set.layers.front().values.rows();
  std::unordered_set<std::string> seen;
  for (const auto& layer : set.layers) {
    const std::string lctx = ctx + " layer '" + layer.id + "'";
    detail::require(!layer.id.empty(), ErrorKind::invalid_argument, ctx + ": empty layer id");
    detail::require(seen.insert(layer.id).second, ErrorKind::invalid_argument,
                    lctx + ": duplicate layer id");
    detail::require(layer.values.rows() >= 1, ErrorKind::invalid_argument, lctx + ": no rows");
    detail::require(layer.values.cols() >= 1, ErrorKind::invalid_argument, lctx + ": no channels");
    detail::require(layer.values.rows() == rows, ErrorKind::dimension,
                    lctx + ": has " + std::to_string(layer.values.rows()) + " rows, expected " +
                        std::to_string(rows));
    for (std::size_t r = 0; r < layer.values.rows(); ++r) {
      for (float v : layer.values.row(r)) {
        if (!std::isfinite(v)) {
          detail::fail(ErrorKind::non_finite, lctx + ": non-finite value in row " + std::to_string(r));
        }
      }
    }
  }
}

/// Serialize a validated set to the KDEF byte layout.
inline std::vector<std::uint8_t> encode_feature_file(const LayerFeatureSet& set) {
  validate(set);
  ByteWriter w;
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(kFeatureMagic), 4});
  w.put<std::uint16_t>(kFeatureFormatVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(set.layers.size()));
  for (const auto& layer : set.layers) {
    w.put_string16(layer.id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.values.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.values.cols()));
    w.put_array<float>(layer.values.data());
  }
  w.put_checksum();
  return w.release();
}

/// Parse KDEF bytes. Errors name the byte offset or layer id.
inline LayerFeatureSet decode_feature_file(std::span<const std::uint8_t> bytes,
                                           const std::string& context,
                                           std::string dataset_name = {}) {
  ByteReader header(bytes, context);
  auto magic = header.get_bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kFeatureMagic))) {
    detail::fail(ErrorKind::format, context + ": malformed header: bad magic at byte offset 0");
  }
  const auto version = header.get<std::uint16_t>("format version");
  if (version != kFeatureFormatVersion) {
    detail::fail(ErrorKind::format, context + ": malformed header: unsupported format version " +
                                        std::to_string(version) + " at byte offset 4");
  }
  verify_trailing_checksum(bytes, context);

  ByteReader r(bytes.first(bytes.size() - sizeof(std::uint64_t)), context);
  r.get_bytes(6, "header");
  const auto n_layers = r.get<std::uint16_t>("layer count");
  if (n_layers == 0) r.fail(ErrorKind::format, "malformed header: zero layers");

  LayerFeatureSet set;
  set.dataset_name = std::move(dataset_name);
  set.layers.reserve(n_layers);
  for (std::uint16_t l = 0; l < n_layers; ++l) {
    Layer layer;
    layer.id = r.get_string16("layer id");
    const auto rows = r.get<std::uint32_t>("n_samples");
    const auto cols = r.get<std::uint32_t>("n_channels");
    const std::uint64_t count = std::uint64_t{rows} * cols;
    if (count * sizeof(float) > r.remaining()) {
      r.fail(ErrorKind::format, "layer '" + layer.id + "' payload of " + std::to_string(count) +
                                    " values exceeds file size");
    }
    std::vector<float> payload(count);
    r.get_array<float>(payload, "payload");
    layer.values = FeatureMatrix(rows, cols, std::move(payload));
    set.layers.push_back(std::move(layer));
  }
  if (r.remaining() != 0) {
    r.fail(ErrorKind::format, std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
  try {
    validate(set);
  } catch (const Error& e) {
    detail::fail(e.kind(), context + ": " + e.what());
  }
  return set;
}

inline void write_feature_file(const LayerFeatureSet& set, const std::string& path) {
  const auto bytes = encode_feature_file(set);
  write_file_bytes(path, bytes);
}

inline LayerFeatureSet read_feature_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return decode_feature_file(bytes, path, std::filesystem::path(path).stem().string());
}

// ---------------------------------------------------------------------------
// Manifest sidecar

enum class DatasetRole { in_distribution_train, in_distribution_test, perturbed, ood };

NLOHMANN_JSON_SERIALIZE_ENUM(DatasetRole, {
                                              {DatasetRole::in_distribution_train, "in_distribution_train"},
                                              {DatasetRole::in_distribution_test, "in_distribution_test"},
                                              {DatasetRole::perturbed, "perturbed"},
                                              {DatasetRole::ood, "ood"},
                                          })

struct DatasetManifest {
  std::string dataset_name;
  DatasetRole role = DatasetRole::in_distribution_train;
  std::string source_path;
  std::uint64_t n_samples = 0;
  std::vector<std::string> layer_ids;
  std::uint64_t checksum = 0;  // trailing FNV-1a of the feature file

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"dataset_name", m.dataset_name}, {"role", m.role},
                     {"source_path", m.source_path},   {"n_samples", m.n_samples},
                     {"layer_ids", m.layer_ids},       {"checksum", m.checksum}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
  j.at("dataset_name").get_to(m.dataset_name);
  j.at("role").get_to(m.role);
  j.at("source_path").get_to(m.source_path);
  j.at("n_samples").get_to(m.n_samples);
  j.at("layer_ids").get_to(m.layer_ids);
  j.at("checksum").get_to(m.checksum);
}

inline std::string manifest_path_for(const std::string& feature_path) {
  return feature_path + ".json";
}

/// A feature file loaded together with its checksum and manifest.
struct Dataset {
  LayerFeatureSet features;
  DatasetManifest manifest;
};

inline DatasetManifest make_manifest(const LayerFeatureSet& set, DatasetRole role,
                                     const std::string& source_path, std::uint64_t checksum) {
  return {set.dataset_name, role, source_path, set.n_samples(), set.layer_ids(), checksum};
}

/// Write features plus a JSON manifest sidecar at `path + ".json"`.
inline DatasetManifest write_dataset(const LayerFeatureSet& set, DatasetRole role,
                                     const std::string& path) {
  const auto bytes = encode_feature_file(set);
  write_file_bytes(path, bytes);
  std::uint64_t checksum;
  std::memcpy(&checksum, bytes.data() + bytes.size() - sizeof(checksum), sizeof(checksum));
  auto manifest = make_manifest(set, role, path, checksum);
  write_file_text(manifest_path_for(path), nlohmann::json(manifest).dump(2) + "\n");
  return manifest;
}

/// Load a feature file. If a manifest sidecar exists it must agree with the
/// payload; otherwise one is synthesized with `default_role`.
inline Dataset load_dataset(const std::string& path,
                            DatasetRole default_role = DatasetRole::in_distribution_train) {
  const auto bytes = read_file_bytes(path);
  const std::string stem = std::filesystem::path(path).stem().string();
  Dataset ds;
  ds.features = decode_feature_file(bytes, path, stem);
  std::uint64_t checksum;
  std::memcpy(&checksum, bytes.data() + bytes.size() - sizeof(checksum), sizeof(checksum));

  const std::string mpath = manifest_path_for(path);
  if (std::filesystem::exists(mpath)) {
    DatasetManifest m;
    try {
      nlohmann::json::parse(read_file_text(mpath)).get_to(m);
    } catch (const nlohmann::json::exception& e) {
      detail::fail(ErrorKind::format, mpath + ": " + e.what());
    }
    detail::require(m.n_samples == ds.features.n_samples(), ErrorKind::format,
                    mpath + ": n_samples " + std::to_string(m.n_samples) +
                        " does not match payload (" + std::to_string(ds.features.n_samples()) + ")");
    detail::require(m.checksum == checksum, ErrorKind::checksum,
                    mpath + ": manifest checksum does not match feature file");
    detail::require(m.layer_ids == ds.features.layer_ids(), ErrorKind::format,
                    mpath + ": layer ids do not match feature file");
    ds.features.dataset_name = m.dataset_name;
    ds.manifest = std::move(m);
  } else {
    ds.manifest = make_manifest(ds.features, default_role, path, checksum);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Reference subsampling

/// N distinct indices into a training set of size M.
struct ReferenceSubset {
  std::vector<std::uint32_t> indices;  // draw order
  std::uint64_t seed = 0;
  std::uint64_t population = 0;        // M

  std::size_t size() const noexcept { return indices.size(); }
  friend bool operator==(const ReferenceSubset&, const ReferenceSubset&) = default;
};

/// Uniform integer in [0, range) from a 64-bit engine by rejection of the
/// low 2^64 mod range values, so every residue is equally likely. Unlike
/// std::uniform_int_distribution, the result is identical on every platform.
inline std::uint64_t uniform_below(std::mt19937_64& engine, std::uint64_t range) {
  const std::uint64_t threshold = (0 - range) % range;
  for (;;) {
    const std::uint64_t x = engine();
    if (x >= threshold) return x % range;
  }
}

/// Draw N of M indices uniformly without replacement: partial Fisher-Yates
/// over [0, M) driven by mt19937_64(seed). Deterministic in (seed, N, M).
inline ReferenceSubset subsample(std::uint64_t population, std::uint64_t n, std::uint64_t seed) {
  detail::require(n >= 1, ErrorKind::invalid_argument, "subsample: N must be >= 1");
  detail::require(n <= population, ErrorKind::invalid_argument,
                  "subsample: N = " + std::to_string(n) + " exceeds M = " + std::to_string(population));
  detail::require(population <= 0xFFFFFFFFULL, ErrorKind::invalid_argument,
                  "subsample: M exceeds u32 index range");
  std::vector<std::uint32_t> pool(population);
  std::iota(pool.begin(), pool.end(), 0U);
  std::mt19937_64 engine(seed);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t j = i + uniform_below(engine, population - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  return {std::move(pool), seed, population};
}

inline ReferenceSubset subsample(const DatasetManifest& manifest, std::uint64_t n,
                                 std::uint64_t seed) {
  return subsample(manifest.n_samples, n, seed);
}

}  // namespace kdeood
