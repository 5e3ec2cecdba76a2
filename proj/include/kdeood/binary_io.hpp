#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "kdeood/error.hpp"

namespace kdeood {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// 64-bit FNV-1a hash, resumable through `state`.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                             std::uint64_t state = kFnvOffsetBasis) noexcept {
  for (std::uint8_t b : bytes) {
    state ^= b;
    state *= kFnvPrime;
  }
  return state;
}

/// Append-only little-endian encoder.
class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_array(std::span<const T> values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    buf_.insert(buf_.end(), p, p + values.size_bytes());
  }

  void put_bytes(std::span<const std::uint8_t> bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  }

  /// u16 length prefix + raw UTF-8 bytes.
  void put_string16(std::string_view s) {
    detail::require(s.size() <= 0xFFFF, ErrorKind::invalid_argument,
                    "string too long for u16 length prefix");
    put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    put_bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }

  /// u32 length prefix + raw bytes.
  void put_string32(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }

  void put_checksum() { put<std::uint64_t>(fnv1a64(buf_)); }

  std::size_t size() const noexcept { return buf_.size(); }
  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
  std::vector<std::uint8_t> release() noexcept { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian decoder. Failures report the byte offset.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get(std::string_view what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_array(std::span<T> out, std::string_view what) {
    need(out.size_bytes(), what);
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }

  std::string get_string16(std::string_view what) {
    const auto len = get<std::uint16_t>(what);
    return get_raw_string(len, what);
  }

  std::string get_string32(std::string_view what) {
    const auto len = get<std::uint32_t>(what);
    return get_raw_string(len, what);
  }

  std::span<const std::uint8_t> get_bytes(std::size_t n, std::string_view what) {
    need(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  [[noreturn]] void fail(ErrorKind kind, std::string_view what) const {
    detail::fail(kind, context_ + ": " + std::string(what) + " at byte offset " +
                           std::to_string(pos_));
  }

 private:
  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n) {
      fail(ErrorKind::format, "truncated while reading " + std::string(what) + " (need " +
                                  std::to_string(n) + " bytes, have " +
                                  std::to_string(remaining()) + ")");
    }
  }

  std::string get_raw_string(std::size_t len, std::string_view what) {
    auto raw = get_bytes(len, what);
    return {reinterpret_cast<const char*>(raw.data()), raw.size()};
  }

  std::span<const std::uint8_t> bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

/// Verify and strip a trailing FNV-1a checksum. Returns the checksum value.
inline std::uint64_t verify_trailing_checksum(std::span<const std::uint8_t> bytes,
                                              const std::string& context) {
  if (bytes.size() < sizeof(std::uint64_t)) {
    detail::fail(ErrorKind::format, context + ": file too short for checksum (" +
                                        std::to_string(bytes.size()) + " bytes)");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  const std::uint64_t actual = fnv1a64(bytes.first(body));
  if (stored != actual) {
    detail::fail(ErrorKind::checksum, context + ": checksum mismatch at byte offset " +
                                          std::to_string(body));
  }
  return stored;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::fail(ErrorKind::io, "cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) detail::fail(ErrorKind::io, "read failure on '" + path + "'");
  return bytes;
}

inline std::string read_file_text(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) detail::fail(ErrorKind::io, "write failure on '" + path + "'");
}

inline void write_file_text(const std::string& path, std::string_view text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace kdeood
