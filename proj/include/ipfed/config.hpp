#pragma once

// Run configuration: a flat key = value text format plus programmatic
// overrides. Config files are diffable experiment provenance; every key can
// also be set from the command line.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipfed/data_eval.hpp"
#include "ipfed/federation.hpp"

namespace ipfed {

struct RunConfig {
  ProtocolKind protocol = ProtocolKind::IPFed;
  std::uint64_t seed = 1;

  // model / embedding geometry
  std::size_t dim = 16;
  std::vector<std::size_t> hidden = {32, 32};
  std::size_t input_dim = 32;

  // federation scale
  std::size_t num_clients = 10;
  std::size_t samples_per_id = 20;
  int rounds = 200;
  int local_steps = 1;
  double eta = 0.1;
  double client_fraction = 1.0;

  // loss parameters
  double margin_m = 0.9;
  double margin_v = 0.7;
  double lambda = 25.0;
  double cosine_scale = 30.0;
  double cosine_margin = 0.35;

  // synthetic data
  std::size_t num_pretrain_ids = 90;
  std::size_t num_eval_ids = 20;
  double cluster_center_scale = 1.0;
  double noise_sigma = 0.1;

  // pretraining
  int pretrain_epochs = 150;
  double pretrain_eta = 0.02;

  // evaluation
  std::size_t genuine_pairs = 500;
  std::size_t impostor_factor = 20;  // impostor count = factor * genuine
  double far_target = 0.001;
  int eval_every = 1;

  std::string out_dir;  // empty = $IPFED_OUTPUT_DIR or "."

  // optional explicit file paths; empty = default name under out_dir
  std::string dataset_csv;  // input: load this dataset instead of generating
  std::string dataset_out;
  std::string checkpoint_out;
  std::string metrics_out;
  std::string messages_out;
  std::string scores_out;
  std::string sweep_out;

  SyntheticIdentitySpec dataset_spec() const {
    SyntheticIdentitySpec s;
    s.num_pretrain_ids = num_pretrain_ids;
    s.num_federated_ids = num_clients;
    s.num_eval_ids = num_eval_ids;
    s.samples_per_id = samples_per_id;
    s.input_dim = input_dim;
    s.cluster_center_scale = cluster_center_scale;
    s.within_class_noise_sigma = noise_sigma;
    return s;
  }

  FederationSettings federation_settings() const {
    FederationSettings f;
    f.positive.margin_m = margin_m;
    f.spreadout.margin_v = margin_v;
    f.spreadout.step_lambda = lambda;
    f.cosine.scale_s = cosine_scale;
    f.cosine.margin = cosine_margin;
    f.eta = eta;
    f.local_steps = local_steps;
    f.client_fraction = client_fraction;
    f.run_seed = seed;
    return f;
  }

  std::filesystem::path output_dir() const {
    if (!out_dir.empty()) return out_dir;
    if (const char* env = std::getenv("IPFED_OUTPUT_DIR")) return env;
    return ".";
  }

  void validate() const {
    if (dim < 1 || input_dim < 1 || num_clients < 1 || samples_per_id < 1) {
      throw std::invalid_argument("config: counts must be >= 1");
    }
    if (rounds < 0 || local_steps < 1 || pretrain_epochs < 0) {
      throw std::invalid_argument("config: invalid round/step counts");
    }
    if (margin_m <= 0.0 || margin_v <= 0.0 || lambda <= 0.0 ||
        cosine_scale <= 0.0) {
      throw std::invalid_argument("config: loss parameters must be positive");
    }
    if (!(client_fraction > 0.0 && client_fraction <= 1.0)) {
      throw std::invalid_argument("config: client_fraction must be in (0, 1]");
    }
    if (!(far_target > 0.0 && far_target < 1.0)) {
      throw std::invalid_argument("config: far_target must be in (0, 1)");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  return out;
}

}  // namespace detail

/// Applies one key = value assignment; throws on unknown keys or bad values.
inline void apply_config_kv(RunConfig& c, const std::string& key,
                            const std::string& value) {
  auto as_u64 = [&] { return std::stoull(value); };
  auto as_int = [&] { return std::stoi(value); };
  auto as_size = [&] { return static_cast<std::size_t>(std::stoull(value)); };
  auto as_double = [&] { return std::stod(value); };

  if (key == "protocol") c.protocol = protocol_from_string(value);
  else if (key == "seed") c.seed = as_u64();
  else if (key == "dim") c.dim = as_size();
  else if (key == "hidden") c.hidden = detail::parse_size_list(value);
  else if (key == "input_dim") c.input_dim = as_size();
  else if (key == "num_clients") c.num_clients = as_size();
  else if (key == "samples_per_id") c.samples_per_id = as_size();
  else if (key == "rounds") c.rounds = as_int();
  else if (key == "local_steps") c.local_steps = as_int();
  else if (key == "eta") c.eta = as_double();
  else if (key == "client_fraction") c.client_fraction = as_double();
  else if (key == "margin_m") c.margin_m = as_double();
  else if (key == "margin_v") c.margin_v = as_double();
  else if (key == "lambda") c.lambda = as_double();
  else if (key == "cosine_scale") c.cosine_scale = as_double();
  else if (key == "cosine_margin") c.cosine_margin = as_double();
  else if (key == "num_pretrain_ids") c.num_pretrain_ids = as_size();
  else if (key == "num_eval_ids") c.num_eval_ids = as_size();
  else if (key == "cluster_center_scale") c.cluster_center_scale = as_double();
  else if (key == "noise_sigma") c.noise_sigma = as_double();
  else if (key == "pretrain_epochs") c.pretrain_epochs = as_int();
  else if (key == "pretrain_eta") c.pretrain_eta = as_double();
  else if (key == "genuine_pairs") c.genuine_pairs = as_size();
  else if (key == "impostor_factor") c.impostor_factor = as_size();
  else if (key == "far_target") c.far_target = as_double();
  else if (key == "eval_every") c.eval_every = as_int();
  else if (key == "out_dir") c.out_dir = value;
  else if (key == "dataset_csv") c.dataset_csv = value;
  else if (key == "dataset_out") c.dataset_out = value;
  else if (key == "checkpoint_out") c.checkpoint_out = value;
  else if (key == "metrics_out") c.metrics_out = value;
  else if (key == "messages_out") c.messages_out = value;
  else if (key == "scores_out") c.scores_out = value;
  else if (key == "sweep_out") c.sweep_out = value;
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

/// Flat key = value lines; '#' starts a comment, blank lines are ignored.
inline void load_config_file(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("config: cannot open " + path.string());
  }
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: " + path.string() + ":" +
                               std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      apply_config_kv(c, key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error("config: " + path.string() + ":" +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace ipfed
