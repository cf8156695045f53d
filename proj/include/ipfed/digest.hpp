#pragma once

// 64-bit FNV-1a digests over a canonical little-endian serialization.
// Message logs store digests instead of payloads, so audits and determinism
// checks can compare traffic without keeping every parameter vector around.
// Canonical forms: unsigned integers as fixed-width little-endian bytes,
// doubles as the little-endian bytes of their IEEE-754 bit pattern.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "ipfed/model.hpp"
#include "ipfed/vec.hpp"

namespace ipfed {

class Fnv1a64 {
 public:
  void update_byte(std::uint8_t b) {
    hash_ ^= b;
    hash_ *= 0x100000001B3ull;
  }

  void update_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) update_byte(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void update_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) update_byte(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void update_f64(double v) { update_u64(std::bit_cast<std::uint64_t>(v)); }

  void update_f64_span(const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) update_f64(data[i]);
  }

  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xCBF29CE484222325ull;
};

inline std::string digest_hex(std::uint64_t d) {
  static const char* hex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = hex[d & 0xF];
    d >>= 4;
  }
  return s;
}

inline std::uint64_t digest_embedding(const EmbeddingVec& v) {
  Fnv1a64 h;
  h.update_u32(static_cast<std::uint32_t>(v.size()));
  h.update_f64_span(v.data(), v.size());
  return h.digest();
}

inline std::uint64_t digest_params(const ModelParams& p) {
  Fnv1a64 h;
  h.update_u32(static_cast<std::uint32_t>(p.layer_shapes.size()));
  for (const auto& [in, out] : p.layer_shapes) {
    h.update_u32(static_cast<std::uint32_t>(in));
    h.update_u32(static_cast<std::uint32_t>(out));
  }
  h.update_u64(static_cast<std::uint64_t>(p.values.size()));
  h.update_f64_span(p.values.data(), p.values.size());
  return h.digest();
}

inline std::uint64_t digest_matrix_rows(const double* data, std::size_t rows,
                                        std::size_t cols) {
  Fnv1a64 h;
  h.update_u32(static_cast<std::uint32_t>(rows));
  h.update_u32(static_cast<std::uint32_t>(cols));
  h.update_f64_span(data, rows * cols);
  return h.digest();
}

}  // namespace ipfed
