#pragma once

// Model checkpoint file format (little-endian throughout):
//
//   offset  size  field
//   0       8     magic "IPFEDCKP"
//   8       4     u32 format version (currently 1)
//   12      8     u64 model version (federated round index)
//   20      4     u32 layer count L
//   24      8*L   per layer: u32 fan_in, u32 fan_out
//   ...     8     u64 parameter count N (must match the layer shapes)
//   ...     8*N   f64 parameters, flat layout: per layer the row-major
//                 (out x in) weight block then the bias block
//
// Files are written byte-for-byte deterministically from the parameter
// values, so identical training runs produce identical checkpoints.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "ipfed/model.hpp"

namespace ipfed {

constexpr char kCheckpointMagic[8] = {'I', 'P', 'F', 'E', 'D', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointFormatVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const ModelParams& params) {
  params.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw std::runtime_error("checkpoint: cannot write " + path.string());
  }
  os.write(kCheckpointMagic, 8);
  detail::write_u32(os, kCheckpointFormatVersion);
  detail::write_u64(os, params.version);
  detail::write_u32(os, static_cast<std::uint32_t>(params.layer_shapes.size()));
  for (const auto& [in, out] : params.layer_shapes) {
    detail::write_u32(os, static_cast<std::uint32_t>(in));
    detail::write_u32(os, static_cast<std::uint32_t>(out));
  }
  detail::write_u64(os, static_cast<std::uint64_t>(params.values.size()));
  for (double v : params.values) {
    detail::write_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) {
    throw std::runtime_error("checkpoint: write failed for " + path.string());
  }
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("checkpoint: cannot open " + path.string());
  }
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kCheckpointMagic, 8)) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  const std::uint32_t fmt = detail::read_u32(is);
  if (fmt != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(fmt));
  }
  ModelParams p;
  p.version = detail::read_u64(is);
  const std::uint32_t layers = detail::read_u32(is);
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::uint32_t in = detail::read_u32(is);
    const std::uint32_t out = detail::read_u32(is);
    p.layer_shapes.emplace_back(in, out);
  }
  const std::uint64_t n = detail::read_u64(is);
  if (n != p.expected_size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  p.values.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    p.values[i] = std::bit_cast<double>(detail::read_u64(is));
  }
  p.validate();
  return p;
}

}  // namespace ipfed
