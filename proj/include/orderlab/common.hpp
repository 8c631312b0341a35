#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace orderlab {

// ---------------------------------------------------------------------------
// Errors. Every failure mode carries a machine-readable kind so the CLI can
// emit structured error records.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};
struct InputError : Error {
  explicit InputError(const std::string& msg) : Error("input", msg) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};
struct IngestionError : Error {
  explicit IngestionError(const std::string& msg) : Error("ingestion", msg) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& msg) : Error("training", msg) {}
};
struct StoreError : Error {
  explicit StoreError(const std::string& msg) : Error("store", msg) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& msg) : Error("divergence", msg) {}
};
struct PersistenceError : Error {
  explicit PersistenceError(const std::string& msg) : Error("persistence", msg) {}
};
struct CorruptionError : Error {
  explicit CorruptionError(const std::string& msg) : Error("corruption", msg) {}
};
struct DependencyError : Error {
  explicit DependencyError(const std::string& msg) : Error("dependency", msg) {}
};

// ---------------------------------------------------------------------------
// Hashing: FNV-1a (digests, sub-seed labels) and CRC-64/ECMA (file checksums).
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

namespace detail {
inline const uint64_t* crc64_table() {
  static uint64_t table[256];
  static bool init = [] {
    const uint64_t poly = 0x42F0E1EBA9EA3693ULL;  // ECMA-182
    for (uint64_t i = 0; i < 256; ++i) {
      uint64_t crc = i << 56;
      for (int b = 0; b < 8; ++b)
        crc = (crc & 0x8000000000000000ULL) ? (crc << 1) ^ poly : crc << 1;
      table[i] = crc;
    }
    return true;
  }();
  (void)init;
  return table;
}
}  // namespace detail

inline uint64_t crc64(const void* data, size_t n, uint64_t crc = 0) {
  const uint64_t* table = detail::crc64_table();
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i)
    crc = table[((crc >> 56) ^ p[i]) & 0xFF] ^ (crc << 8);
  return crc;
}

// ---------------------------------------------------------------------------
// Little-endian byte buffer IO for the OLC1/OLT1/OLS1 containers.
// ---------------------------------------------------------------------------

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) { le(v, 2); }
  void u32(uint32_t v) { le(v, 4); }
  void u64(uint64_t v) { le(v, 8); }
  void i32(int32_t v) { le(static_cast<uint32_t>(v), 4); }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits, 8);
  }
  void bytes(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void str(const std::string& s) {
    if (s.size() > 0xFFFF) throw PersistenceError("string too long for container");
    u16(static_cast<uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f64_span(const double* p, size_t n) {
    for (size_t i = 0; i < n; ++i) f64(p[i]);
  }
  size_t size() const { return buf_.size(); }
  const std::vector<uint8_t>& data() const { return buf_; }
  std::vector<uint8_t>& data() { return buf_; }

 private:
  void le(uint64_t v, int nb) {
    for (int i = 0; i < nb; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t n) : p_(data), n_(n) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : p_(v.data()), n_(v.size()) {}

  uint8_t u8() { return static_cast<uint8_t>(le(1)); }
  uint16_t u16() { return static_cast<uint16_t>(le(2)); }
  uint32_t u32() { return static_cast<uint32_t>(le(4)); }
  uint64_t u64() { return le(8); }
  int32_t i32() { return static_cast<int32_t>(le(4)); }
  double f64() {
    uint64_t bits = le(8);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    uint16_t len = u16();
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  void f64_span(double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = f64();
  }
  void skip(size_t n) {
    need(n);
    pos_ += n;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return n_ - pos_; }

 private:
  void need(size_t n) {
    if (pos_ + n > n_) throw CorruptionError("truncated file: unexpected end of data");
  }
  uint64_t le(int nb) {
    need(static_cast<size_t>(nb));
    uint64_t v = 0;
    for (int i = 0; i < nb; ++i) v |= static_cast<uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += static_cast<size_t>(nb);
    return v;
  }
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

}  // namespace orderlab
