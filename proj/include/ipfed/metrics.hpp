#pragma once

// Per-round metric records and their JSON-lines serialization. The schema is
// versioned and the writer is byte-deterministic: doubles are rendered with
// shortest round-trip formatting, keys in a fixed order. Wall-clock timing
// is reported on stderr by the command layer, never written into the JSONL,
// so identical runs produce identical files.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ipfed {

constexpr int kMetricsSchemaVersion = 1;

struct MetricRecord {
  int round = 0;
  double mean_positive_loss = 0.0;
  double spreadout_loss = 0.0;
  std::size_t degenerate_pairs = 0;
  bool evaluated = false;  // TAR/accuracy fields valid only when set
  double tar_at_far = 0.0;
  double verification_accuracy = 0.0;
};

inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("fmt_double failed");
  return std::string(buf, end);
}

inline std::string to_jsonl_line(const MetricRecord& r) {
  std::string s = "{\"schema_version\":" + std::to_string(kMetricsSchemaVersion);
  s += ",\"round\":" + std::to_string(r.round);
  s += ",\"mean_positive_loss\":" + fmt_double(r.mean_positive_loss);
  s += ",\"spreadout_loss\":" + fmt_double(r.spreadout_loss);
  s += ",\"degenerate_pairs\":" + std::to_string(r.degenerate_pairs);
  if (r.evaluated) {
    s += ",\"tar_at_far_0.1pct\":" + fmt_double(r.tar_at_far);
    s += ",\"verification_accuracy\":" + fmt_double(r.verification_accuracy);
  }
  s += "}";
  return s;
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path)
      : os_(path, std::ios::trunc) {
    if (!os_) {
      throw std::runtime_error("metrics: cannot write " + path.string());
    }
  }

  void write(const MetricRecord& r) { os_ << to_jsonl_line(r) << '\n'; }

  void flush() { os_.flush(); }

 private:
  std::ofstream os_;
};

}  // namespace ipfed
