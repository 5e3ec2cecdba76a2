#pragma once

// Pipeline model file ("KDEM", version 1), little-endian:
//
//   magic     4 bytes "KDEM"
//   version   u16     1
//   sections  u16     count
//   per section: tag (4 ASCII bytes), u64 payload length, payload
//     SUBS  reference subset: u64 seed, u64 M, u64 in-dist file checksum,
//           u32 N, N x u32 indices (draw order)
//     LAYR  one per layer, canonical order: u16+bytes layer id, u8 metric
//           (1 = L1, 2 = L2), u32 k, u32 N, u32 C, N*C binary32 reference
//           rows, N binary64 bandwidths
//     FUSN  optional fusion model (see encode_fusion)
//     CONF  u32+bytes UTF-8 JSON config snapshot
//   checksum  u64 FNV-1a over all preceding bytes

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kdeood/binary_io.hpp"
#include "kdeood/error.hpp"
#include "kdeood/feature_store.hpp"
#include "kdeood/fusion.hpp"
#include "kdeood/kde.hpp"

namespace kdeood {

inline constexpr char kModelMagic[4] = {'K', 'D', 'E', 'M'};
inline constexpr std::uint16_t kModelFormatVersion = 1;

enum class NegativeRegime : std::uint8_t { adversarial = 1, held_out_ood = 2 };

inline std::string to_string(NegativeRegime r) {
  return r == NegativeRegime::adversarial ? "adversarial" : "held-out-ood";
}

inline NegativeRegime parse_regime(const std::string& s) {
  if (s == "adversarial") return NegativeRegime::adversarial;
  if (s == "held-out-ood" || s == "held_out_ood") return NegativeRegime::held_out_ood;
  detail::fail(ErrorKind::usage, "unknown regime '" + s + "' (expected adversarial|held-out-ood)");
}

/// Where the fusion negatives came from.
struct FusionProvenance {
  NegativeRegime regime = NegativeRegime::adversarial;
  std::string target;                        // held-out target, empty otherwise
  std::vector<std::string> negative_sources; // dataset names pooled as negatives

  friend bool operator==(const FusionProvenance&, const FusionProvenance&) = default;
};

struct PipelineModel {
  ReferenceSubset subset;
  std::uint64_t in_dist_checksum = 0;
  std::vector<LayerKdeModel> layers;
  std::optional<FusionModel> fusion;
  FusionProvenance provenance;  // meaningful only when fusion is set
  std::string config_json;

  std::vector<std::string> layer_ids() const {
    std::vector<std::string> ids;
    for (const auto& l : layers) ids.push_back(l.layer_id);
    return ids;
  }

  friend bool operator==(const PipelineModel&, const PipelineModel&) = default;
};

namespace detail {

inline void put_section(ByteWriter& w, const char (&tag)[5], const ByteWriter& payload) {
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(tag), 4});
  w.put<std::uint64_t>(payload.size());
  w.put_bytes(payload.bytes());
}

inline ByteWriter encode_subset(const PipelineModel& m) {
  ByteWriter w;
  w.put<std::uint64_t>(m.subset.seed);
  w.put<std::uint64_t>(m.subset.population);
  w.put<std::uint64_t>(m.in_dist_checksum);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.subset.indices.size()));
  w.put_array<std::uint32_t>(m.subset.indices);
  return w;
}

inline ByteWriter encode_layer(const LayerKdeModel& l) {
  ByteWriter w;
  w.put_string16(l.layer_id);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(l.metric));
  w.put<std::uint32_t>(l.k_used);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(l.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(l.dim()));
  w.put_array<float>(l.reference.data());
  w.put_array<double>(l.bandwidths);
  return w;
}

// u32 L, L alpha, bias, L means, L stddevs (all f64); train config
// (f64 lr, u32 max_epochs, f64 l2, f64 tol, u64 seed, u8 standardize);
// summary (u32 epochs, u8 converged, f64 loss, f64 accuracy); provenance
// (u8 regime, u16+bytes target, u32 count, count x (u16+bytes name)).
inline ByteWriter encode_fusion(const FusionModel& f, const FusionProvenance& prov) {
  ByteWriter w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.alpha.size()));
  w.put_array<double>(f.alpha);
  w.put<double>(f.bias);
  w.put_array<double>(f.standardizer.mean);
  w.put_array<double>(f.standardizer.stddev);
  const auto& c = f.train_config;
  w.put<double>(c.learning_rate);
  w.put<std::uint32_t>(c.max_epochs);
  w.put<double>(c.l2_penalty);
  w.put<double>(c.convergence_tol);
  w.put<std::uint64_t>(c.seed);
  w.put<std::uint8_t>(c.standardize ? 1 : 0);
  w.put<std::uint32_t>(f.summary.epochs);
  w.put<std::uint8_t>(f.summary.converged ? 1 : 0);
  w.put<double>(f.summary.final_loss);
  w.put<double>(f.summary.train_accuracy);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(prov.regime));
  w.put_string16(prov.target);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(prov.negative_sources.size()));
  for (const auto& s : prov.negative_sources) w.put_string16(s);
  return w;
}

template <typename T>
std::vector<T> get_vector(ByteReader& r, std::size_t n, std::string_view what) {
  if (n * sizeof(T) > r.remaining()) r.fail(ErrorKind::format, std::string(what) + " length exceeds section");
  std::vector<T> v(n);
  r.get_array<T>(v, what);
  return v;
}

inline void decode_subset(ByteReader& r, PipelineModel& m) {
  m.subset.seed = r.get<std::uint64_t>("subset seed");
  m.subset.population = r.get<std::uint64_t>("subset population");
  m.in_dist_checksum = r.get<std::uint64_t>("in-dist checksum");
  const auto n = r.get<std::uint32_t>("subset size");
  m.subset.indices = get_vector<std::uint32_t>(r, n, "subset indices");
}

inline LayerKdeModel decode_layer(ByteReader& r) {
  LayerKdeModel l;
  l.layer_id = r.get_string16("layer id");
  const auto metric = r.get<std::uint8_t>("metric");
  if (metric != 1 && metric != 2) r.fail(ErrorKind::format, "unknown metric code " + std::to_string(metric));
  l.metric = static_cast<DistanceMetric>(metric);
  l.k_used = r.get<std::uint32_t>("k");
  const auto n = r.get<std::uint32_t>("reference rows");
  const auto c = r.get<std::uint32_t>("reference cols");
  l.reference = FeatureMatrix(n, c, get_vector<float>(r, std::size_t{n} * c, "reference rows"));
  l.bandwidths = get_vector<double>(r, n, "bandwidths");
  return l;
}

inline void decode_fusion(ByteReader& r, PipelineModel& m) {
  FusionModel f;
  const auto L = r.get<std::uint32_t>("fusion layer count");
  f.alpha = get_vector<double>(r, L, "alpha");
  f.bias = r.get<double>("bias");
  f.standardizer.mean = get_vector<double>(r, L, "standardizer mean");
  f.standardizer.stddev = get_vector<double>(r, L, "standardizer stddev");
  auto& c = f.train_config;
  c.learning_rate = r.get<double>("learning rate");
  c.max_epochs = r.get<std::uint32_t>("max epochs");
  c.l2_penalty = r.get<double>("l2 penalty");
  c.convergence_tol = r.get<double>("convergence tol");
  c.seed = r.get<std::uint64_t>("fusion seed");
  c.standardize = r.get<std::uint8_t>("standardize flag") != 0;
  f.summary.epochs = r.get<std::uint32_t>("epochs");
  f.summary.converged = r.get<std::uint8_t>("converged") != 0;
  f.summary.final_loss = r.get<double>("final loss");
  f.summary.train_accuracy = r.get<double>("train accuracy");
  const auto regime = r.get<std::uint8_t>("regime");
  if (regime != 1 && regime != 2) r.fail(ErrorKind::format, "unknown regime code");
  m.provenance.regime = static_cast<NegativeRegime>(regime);
  m.provenance.target = r.get_string16("target");
  const auto count = r.get<std::uint32_t>("negative source count");
  m.provenance.negative_sources.clear();
  for (std::uint32_t i = 0; i < count; ++i) m.provenance.negative_sources.push_back(r.get_string16("source"));
  m.fusion = std::move(f);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_model(const PipelineModel& m) {
  detail::require(!m.layers.empty(), ErrorKind::invalid_argument, "model has no layers");
  for (const auto& l : m.layers) validate(l);
  if (m.fusion) {
    detail::require(m.fusion->n_layers() == m.layers.size(), ErrorKind::dimension,
                    "fusion layer count does not match KDE layers");
  }
  ByteWriter w;
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(kModelMagic), 4});
  w.put<std::uint16_t>(kModelFormatVersion);
  const std::size_t sections = 2 + m.layers.size() + (m.fusion ? 1 : 0);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(sections));
  detail::put_section(w, "SUBS", detail::encode_subset(m));
  for (const auto& l : m.layers) detail::put_section(w, "LAYR", detail::encode_layer(l));
  if (m.fusion) detail::put_section(w, "FUSN", detail::encode_fusion(*m.fusion, m.provenance));
  ByteWriter conf;
  conf.put_string32(m.config_json);
  detail::put_section(w, "CONF", conf);
  w.put_checksum();
  return w.release();
}

inline PipelineModel decode_model(std::span<const std::uint8_t> bytes, const std::string& context) {
  ByteReader header(bytes, context);
  auto magic = header.get_bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kModelMagic))) {
    detail::fail(ErrorKind::format, context + ": malformed header: bad magic at byte offset 0");
  }
  const auto version = header.get<std::uint16_t>("format version");
  if (version != kModelFormatVersion) {
    detail::fail(ErrorKind::format, context + ": unsupported model format version " + std::to_string(version));
  }
  verify_trailing_checksum(bytes, context);

  ByteReader r(bytes.first(bytes.size() - sizeof(std::uint64_t)), context);
  r.get_bytes(6, "header");
  const auto sections = r.get<std::uint16_t>("section count");
  PipelineModel m;
  bool have_subset = false;
  bool have_conf = false;
  for (std::uint16_t s = 0; s < sections; ++s) {
    auto tag_bytes = r.get_bytes(4, "section tag");
    const std::string tag(tag_bytes.begin(), tag_bytes.end());
    const auto len = r.get<std::uint64_t>("section length");
    if (len > r.remaining()) r.fail(ErrorKind::format, "section '" + tag + "' length exceeds file");
    ByteReader sec(r.get_bytes(len, "section payload"), context + " section " + tag);
    if (tag == "SUBS") {
      detail::decode_subset(sec, m);
      have_subset = true;
    } else if (tag == "LAYR") {
      m.layers.push_back(detail::decode_layer(sec));
    } else if (tag == "FUSN") {
      detail::decode_fusion(sec, m);
    } else if (tag == "CONF") {
      m.config_json = sec.get_string32("config snapshot");
      have_conf = true;
    } else {
      r.fail(ErrorKind::format, "unknown section tag '" + tag + "'");
    }
    if (sec.remaining() != 0) sec.fail(ErrorKind::format, "trailing bytes in section");
  }
  if (r.remaining() != 0) r.fail(ErrorKind::format, "unexpected trailing bytes");
  if (!have_subset || !have_conf || m.layers.empty()) {
    detail::fail(ErrorKind::format, context + ": model file is missing required sections");
  }
  for (const auto& l : m.layers) validate(l);
  if (m.fusion && m.fusion->n_layers() != m.layers.size()) {
    detail::fail(ErrorKind::format, context + ": fusion layer count does not match KDE layers");
  }
  return m;
}

inline void write_model_file(const PipelineModel& m, const std::string& path) {
  write_file_bytes(path, encode_model(m));
}

inline PipelineModel read_model_file(const std::string& path) {
  return decode_model(read_file_bytes(path), path);
}

}  // namespace kdeood
