#pragma once

// Synthetic identity datasets and biometric verification metrics.
//
// Each identity is a Gaussian cluster in input space: a center drawn
// uniformly on the sphere (scaled), plus isotropic within-class noise.
// Identity index ranges for the pretrain / federated / eval splits are
// disjoint by construction, and every identity gets its own counter stream,
// so changing one split's size never reshuffles another split's data.
//
// Verification metrics follow the ceiling convention: the TAR@FAR threshold
// is the smallest impostor score whose false-accept fraction stays within
// the target. When the impostor list is too small for the target FAR the
// threshold moves just above the top impostor score and a warning is set.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipfed/model.hpp"
#include "ipfed/rng.hpp"
#include "ipfed/vec.hpp"

namespace ipfed {

struct SyntheticIdentitySpec {
  std::size_t num_pretrain_ids = 90;
  std::size_t num_federated_ids = 10;
  std::size_t num_eval_ids = 20;
  std::size_t samples_per_id = 20;
  std::size_t input_dim = 32;
  double cluster_center_scale = 1.0;
  double within_class_noise_sigma = 0.25;

  void validate() const {
    if (num_pretrain_ids < 1 || num_federated_ids < 1 || num_eval_ids < 1 ||
        samples_per_id < 1 || input_dim < 1) {
      throw std::invalid_argument("SyntheticIdentitySpec: counts must be >= 1");
    }
    if (within_class_noise_sigma <= 0.0) {
      throw std::invalid_argument("SyntheticIdentitySpec: noise sigma must be > 0");
    }
  }
};

struct IdentityData {
  int identity = 0;
  std::vector<std::vector<double>> samples;
};

struct SyntheticDataset {
  std::vector<IdentityData> pretrain;
  std::vector<IdentityData> federated;
  std::vector<IdentityData> eval;
  std::size_t input_dim = 0;
};

namespace detail {

inline IdentityData make_identity(int identity, const SyntheticIdentitySpec& spec,
                                  std::uint64_t seed) {
  CounterStream stream(seed, StreamTag::Dataset,
                       static_cast<std::uint64_t>(identity));
  std::vector<double> center(spec.input_dim);
  for (double& v : center) v = stream.next_normal();
  const double n = norm2(center);
  const double scale = n > 0.0 ? spec.cluster_center_scale / n : 0.0;
  for (double& v : center) v *= scale;

  IdentityData id;
  id.identity = identity;
  id.samples.resize(spec.samples_per_id);
  for (auto& sample : id.samples) {
    sample.resize(spec.input_dim);
    for (std::size_t i = 0; i < spec.input_dim; ++i) {
      sample[i] = center[i] + spec.within_class_noise_sigma * stream.next_normal();
    }
  }
  return id;
}

}  // namespace detail

inline SyntheticDataset generate_dataset(const SyntheticIdentitySpec& spec,
                                         std::uint64_t seed) {
  spec.validate();
  SyntheticDataset ds;
  ds.input_dim = spec.input_dim;
  int next_id = 0;
  for (std::size_t i = 0; i < spec.num_pretrain_ids; ++i) {
    ds.pretrain.push_back(detail::make_identity(next_id++, spec, seed));
  }
  for (std::size_t i = 0; i < spec.num_federated_ids; ++i) {
    ds.federated.push_back(detail::make_identity(next_id++, spec, seed));
  }
  for (std::size_t i = 0; i < spec.num_eval_ids; ++i) {
    ds.eval.push_back(detail::make_identity(next_id++, spec, seed));
  }
  return ds;
}

struct VerificationPair {
  std::size_t id_a = 0;  // positions within the identity list
  std::size_t sample_a = 0;
  std::size_t id_b = 0;
  std::size_t sample_b = 0;
};

struct VerificationPairSet {
  std::vector<VerificationPair> genuine;
  std::vector<VerificationPair> impostor;
};

// Seeded genuine/impostor pair sampling over one identity list (normally the
// eval split, which is disjoint from every training identity).
inline VerificationPairSet make_pairs(const std::vector<IdentityData>& ids,
                                      std::size_t genuine_count,
                                      std::size_t impostor_count,
                                      std::uint64_t seed) {
  if (ids.empty()) throw std::invalid_argument("make_pairs: no identities");
  if (ids.size() < 2 && impostor_count > 0) {
    throw std::invalid_argument("make_pairs: impostor pairs need >= 2 identities");
  }
  for (const auto& id : ids) {
    if (id.samples.size() < 2 && genuine_count > 0) {
      throw std::invalid_argument("make_pairs: genuine pairs need >= 2 samples per id");
    }
  }
  CounterStream stream(seed, StreamTag::Pairs);
  VerificationPairSet ps;
  ps.genuine.reserve(genuine_count);
  for (std::size_t k = 0; k < genuine_count; ++k) {
    VerificationPair p;
    p.id_a = stream.next_below(ids.size());
    p.id_b = p.id_a;
    const std::size_t n = ids[p.id_a].samples.size();
    p.sample_a = stream.next_below(n);
    p.sample_b = stream.next_below(n - 1);
    if (p.sample_b >= p.sample_a) ++p.sample_b;
    ps.genuine.push_back(p);
  }
  ps.impostor.reserve(impostor_count);
  for (std::size_t k = 0; k < impostor_count; ++k) {
    VerificationPair p;
    p.id_a = stream.next_below(ids.size());
    p.id_b = stream.next_below(ids.size() - 1);
    if (p.id_b >= p.id_a) ++p.id_b;
    p.sample_a = stream.next_below(ids[p.id_a].samples.size());
    p.sample_b = stream.next_below(ids[p.id_b].samples.size());
    ps.impostor.push_back(p);
  }
  return ps;
}

struct PairScores {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

/// Cosine similarity of forward embeddings per pair; unit-norm outputs keep
/// every score in [-1, 1]. Each referenced sample is embedded exactly once.
inline PairScores score_pairs(const FeatureExtractor& fx,
                              const std::vector<IdentityData>& ids,
                              const VerificationPairSet& pairs) {
  if (pairs.genuine.empty() && pairs.impostor.empty()) {
    throw std::invalid_argument("score_pairs: no pairs");
  }
  std::vector<std::vector<EmbeddingVec>> cache(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    cache[i].resize(ids[i].samples.size());
  }
  auto embed = [&](std::size_t id, std::size_t sample) -> const EmbeddingVec& {
    auto& slot = cache[id][sample];
    if (slot.empty()) slot = forward(fx, ids[id].samples[sample]);
    return slot;
  };
  auto score = [&](const VerificationPair& p) {
    return cosine_similarity(embed(p.id_a, p.sample_a), embed(p.id_b, p.sample_b));
  };
  PairScores out;
  out.genuine.reserve(pairs.genuine.size());
  for (const auto& p : pairs.genuine) out.genuine.push_back(score(p));
  out.impostor.reserve(pairs.impostor.size());
  for (const auto& p : pairs.impostor) out.impostor.push_back(score(p));
  return out;
}

struct TarResult {
  double tar = 0.0;
  double threshold = 0.0;
  double achieved_far = 0.0;
  bool far_unachievable = false;  // impostor list too small for the target
};

// TAR at a fixed FAR. Candidate thresholds are the observed impostor scores;
// the chosen one is the smallest with impostor-accept fraction <= far_target
// (a hair of slack absorbs binary representation of fractions like 1/3).
// If even the top impostor score exceeds the budget, the threshold moves
// just above it, FAR becomes 0, and the result carries a warning flag.
inline TarResult tar_at_far(const std::vector<double>& genuine,
                            const std::vector<double>& impostor,
                            double far_target) {
  if (genuine.empty() || impostor.empty()) {
    throw std::invalid_argument("tar_at_far: empty score list");
  }
  if (!(far_target > 0.0 && far_target < 1.0)) {
    throw std::invalid_argument("tar_at_far: far_target must be in (0, 1)");
  }
  std::vector<double> imp = impostor;
  std::sort(imp.begin(), imp.end());
  const double n = static_cast<double>(imp.size());

  TarResult r;
  r.far_unachievable = far_target * n < 1.0;
  bool found = false;
  for (std::size_t k = 0; k < imp.size(); ++k) {
    if (k > 0 && imp[k] == imp[k - 1]) continue;
    const double accepted = n - static_cast<double>(k);
    if (accepted / n <= far_target + 1e-12) {
      r.threshold = imp[k];
      r.achieved_far = accepted / n;
      found = true;
      break;
    }
  }
  if (!found) {
    r.threshold = std::nextafter(imp.back(), std::numeric_limits<double>::infinity());
    r.achieved_far = 0.0;
    r.far_unachievable = true;
  }
  std::size_t hits = 0;
  for (double g : genuine) {
    if (g >= r.threshold) ++hits;
  }
  r.tar = static_cast<double>(hits) / static_cast<double>(genuine.size());
  return r;
}

/// Best (genuine accepted + impostor rejected) / total over a threshold
/// sweep covering all observed scores plus the reject-everything point.
inline double verification_accuracy(const std::vector<double>& genuine,
                                    const std::vector<double>& impostor) {
  if (genuine.empty() || impostor.empty()) {
    throw std::invalid_argument("verification_accuracy: empty score list");
  }
  std::vector<double> gen = genuine;
  std::vector<double> imp = impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  const double total = static_cast<double>(gen.size() + imp.size());

  auto count_ge = [](const std::vector<double>& v, double t) {
    return static_cast<double>(v.end() -
                               std::lower_bound(v.begin(), v.end(), t));
  };
  double best = 0.0;
  auto consider = [&](double t) {
    const double correct =
        count_ge(gen, t) + (static_cast<double>(imp.size()) - count_ge(imp, t));
    best = std::max(best, correct / total);
  };
  for (double t : gen) consider(t);
  for (double t : imp) consider(t);
  consider(std::nextafter(std::max(gen.back(), imp.back()),
                          std::numeric_limits<double>::infinity()));
  return best;
}

// ---------------------------------------------------------------------------
// CSV import/export
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline void write_identities_csv(std::ofstream& os, const char* split,
                                 const std::vector<IdentityData>& ids) {
  for (const auto& id : ids) {
    for (std::size_t s = 0; s < id.samples.size(); ++s) {
      os << split << ',' << id.identity << ',' << s;
      for (double v : id.samples[s]) os << ',' << fmt_double(v);
      os << '\n';
    }
  }
}

}  // namespace detail

/// Columns: split,identity,sample_index,x_0..x_{D-1}
inline void export_dataset_csv(const std::filesystem::path& path,
                               const SyntheticDataset& ds) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("export_dataset_csv: cannot write " + path.string());
  os << "split,identity,sample_index";
  for (std::size_t i = 0; i < ds.input_dim; ++i) os << ",x_" << i;
  os << '\n';
  detail::write_identities_csv(os, "pretrain", ds.pretrain);
  detail::write_identities_csv(os, "federated", ds.federated);
  detail::write_identities_csv(os, "eval", ds.eval);
}

inline SyntheticDataset import_dataset_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("import_dataset_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) {
    throw std::runtime_error("import_dataset_csv: empty file");
  }
  SyntheticDataset ds;
  auto split_of = [&](const std::string& name) -> std::vector<IdentityData>& {
    if (name == "pretrain") return ds.pretrain;
    if (name == "federated") return ds.federated;
    if (name == "eval") return ds.eval;
    throw std::runtime_error("import_dataset_csv: unknown split '" + name + "'");
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    auto& ids = split_of(field);
    std::getline(ss, field, ',');
    const int identity = std::stoi(field);
    std::getline(ss, field, ',');  // sample index; rows arrive in order
    std::vector<double> sample;
    while (std::getline(ss, field, ',')) sample.push_back(std::stod(field));
    if (ds.input_dim == 0) ds.input_dim = sample.size();
    if (sample.size() != ds.input_dim) {
      throw std::runtime_error("import_dataset_csv: inconsistent sample width");
    }
    if (ids.empty() || ids.back().identity != identity) {
      ids.push_back(IdentityData{identity, {}});
    }
    ids.back().samples.push_back(std::move(sample));
  }
  return ds;
}

/// Columns: pair_kind,score
inline void export_scores_csv(const std::filesystem::path& path,
                              const PairScores& scores) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("export_scores_csv: cannot write " + path.string());
  os << "pair_kind,score\n";
  for (double s : scores.genuine) os << "genuine," << detail::fmt_double(s) << '\n';
  for (double s : scores.impostor) os << "impostor," << detail::fmt_double(s) << '\n';
}

}  // namespace ipfed
