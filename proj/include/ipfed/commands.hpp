#pragma once

// Implementations behind the CLI subcommands. Each command is a pure
// function of (config, seed): deterministic stdout lines and deterministic
// output files. Timing goes to stderr only.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ipfed/checkpoint.hpp"
#include "ipfed/config.hpp"
#include "ipfed/data_eval.hpp"
#include "ipfed/equivalence.hpp"
#include "ipfed/federation.hpp"
#include "ipfed/metrics.hpp"

namespace ipfed {

namespace detail {

inline std::filesystem::path resolve_out(const RunConfig& cfg,
                                         const std::string& configured,
                                         const std::string& default_name) {
  if (!configured.empty()) return configured;
  return cfg.output_dir() / default_name;
}

class Stopwatch {
 public:
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ =
      std::chrono::steady_clock::now();
};

}  // namespace detail

inline SyntheticDataset dataset_for(const RunConfig& cfg) {
  if (!cfg.dataset_csv.empty()) return import_dataset_csv(cfg.dataset_csv);
  return generate_dataset(cfg.dataset_spec(), cfg.seed);
}

struct EvalMetrics {
  TarResult tar;
  double accuracy = 0.0;
  PairScores scores;
};

inline EvalMetrics evaluate_extractor(const FeatureExtractor& fx,
                                      const SyntheticDataset& ds,
                                      const RunConfig& cfg) {
  const VerificationPairSet pairs =
      make_pairs(ds.eval, cfg.genuine_pairs,
                 cfg.genuine_pairs * cfg.impostor_factor, cfg.seed);
  EvalMetrics m;
  m.scores = score_pairs(fx, ds.eval, pairs);
  m.tar = tar_at_far(m.scores.genuine, m.scores.impostor, cfg.far_target);
  m.accuracy = verification_accuracy(m.scores.genuine, m.scores.impostor);
  return m;
}

struct PretrainResult {
  ModelParams params;
  double final_loss = 0.0;
};

/// Centralized cosine-margin training of a fresh extractor on the pretrain
/// split. pretrain_epochs = 0 returns the seeded initialization untouched.
inline PretrainResult pretrain_extractor(const SyntheticDataset& ds,
                                         const RunConfig& cfg) {
  FeatureExtractor fx =
      make_extractor(cfg.input_dim, cfg.hidden, cfg.dim, cfg.seed);
  std::vector<const IdentityData*> classes;
  classes.reserve(ds.pretrain.size());
  for (const auto& id : ds.pretrain) classes.push_back(&id);

  std::vector<EmbeddingVec> rows;
  rows.reserve(ds.pretrain.size());
  for (const auto& id : ds.pretrain) {
    EmbeddingVec w = init_class_embedding(id, fx);
    const double n = norm2(w);
    if (n < 1e-12) {
      w.assign(cfg.dim, 0.0);
      w[0] = 1.0;
    } else {
      for (double& v : w) v /= n;
    }
    rows.push_back(std::move(w));
  }
  ClassEmbeddingMatrix row_matrix = ClassEmbeddingMatrix::from_rows(rows);

  CosineMarginParams cosine{cfg.cosine_scale, cfg.cosine_margin};
  PretrainResult r;
  r.params = fx.params;
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    r.final_loss = central_cosine_epoch(r.params, row_matrix, classes, cosine,
                                        cfg.pretrain_eta);
  }
  r.params.version = 0;
  return r;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline int cmd_gen_data(const RunConfig& cfg, std::ostream& out = std::cout) {
  cfg.validate();
  const SyntheticDataset ds = generate_dataset(cfg.dataset_spec(), cfg.seed);
  const auto path = detail::resolve_out(cfg, cfg.dataset_out, "dataset.csv");
  export_dataset_csv(path, ds);
  out << "gen-data: wrote " << path.string() << " (pretrain="
      << ds.pretrain.size() << " federated=" << ds.federated.size()
      << " eval=" << ds.eval.size() << " samples_per_id="
      << cfg.samples_per_id << " input_dim=" << ds.input_dim << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

inline int cmd_pretrain(const RunConfig& cfg, std::ostream& out = std::cout) {
  cfg.validate();
  detail::Stopwatch clock;
  const SyntheticDataset ds = dataset_for(cfg);
  const PretrainResult pre = pretrain_extractor(ds, cfg);
  const auto path =
      detail::resolve_out(cfg, cfg.checkpoint_out, "pretrained.ckpt");
  save_checkpoint(path, pre.params);

  const FeatureExtractor fx{pre.params};
  const EvalMetrics m = evaluate_extractor(fx, ds, cfg);
  out << "pretrain: epochs=" << cfg.pretrain_epochs
      << " final_loss=" << fmt_double(pre.final_loss) << "\n";
  out << "pretrain: eval tar@far=" << fmt_double(cfg.far_target) << " -> "
      << fmt_double(m.tar.tar) << " (threshold "
      << fmt_double(m.tar.threshold) << "), accuracy "
      << fmt_double(m.accuracy) << "\n";
  out << "pretrain: wrote " << path.string() << "\n";
  std::cerr << "pretrain: " << clock.elapsed_ms() << " ms\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutcome {
  TrainingResult training;
  std::vector<MetricRecord> metrics;
  EvalMetrics final_eval;
  MessageLog log;
};

/// Full federated run with per-round metric records; library form of the
/// train command so tests and sweeps can reuse it without touching files.
inline TrainOutcome run_train(const RunConfig& cfg, const ModelParams& theta_1,
                              const SyntheticDataset& ds) {
  cfg.validate();
  if (theta_1.output_dim() != cfg.dim || theta_1.input_dim() != cfg.input_dim) {
    throw std::invalid_argument(
        "train: checkpoint geometry (" + std::to_string(theta_1.input_dim()) +
        "->" + std::to_string(theta_1.output_dim()) +
        ") does not match config (" + std::to_string(cfg.input_dim) + "->" +
        std::to_string(cfg.dim) + ")");
  }
  const VerificationPairSet pairs =
      make_pairs(ds.eval, cfg.genuine_pairs,
                 cfg.genuine_pairs * cfg.impostor_factor, cfg.seed);

  FederationEngine engine(cfg.protocol, theta_1, ds.federated,
                          cfg.federation_settings());
  TrainOutcome outcome;
  outcome.metrics.reserve(static_cast<std::size_t>(cfg.rounds));
  const auto observer = [&](const RoundReport& report,
                            const FederationEngine& eng) {
    MetricRecord rec;
    rec.round = report.round;
    rec.mean_positive_loss = report.mean_positive_loss;
    rec.spreadout_loss = report.spreadout_value;
    rec.degenerate_pairs = report.degenerate_pairs;
    const bool eval_now =
        cfg.eval_every > 0 && (report.round % cfg.eval_every == 0 ||
                               report.round == cfg.rounds);
    if (eval_now) {
      const FeatureExtractor fx{eng.global_params()};
      const PairScores scores = score_pairs(fx, ds.eval, pairs);
      const TarResult tar =
          tar_at_far(scores.genuine, scores.impostor, cfg.far_target);
      rec.evaluated = true;
      rec.tar_at_far = tar.tar;
      rec.verification_accuracy =
          verification_accuracy(scores.genuine, scores.impostor);
    }
    outcome.metrics.push_back(rec);
  };
  outcome.training = engine.run_training(cfg.rounds, observer);
  outcome.log = engine.log();
  const FeatureExtractor fx{outcome.training.final_params};
  outcome.final_eval = evaluate_extractor(fx, ds, cfg);
  return outcome;
}

inline int cmd_train(const RunConfig& cfg, const std::string& checkpoint_in,
                     std::ostream& out = std::cout) {
  cfg.validate();
  detail::Stopwatch clock;
  if (!std::filesystem::exists(checkpoint_in)) {
    throw std::runtime_error("train: checkpoint not found: " + checkpoint_in);
  }
  const ModelParams theta_1 = load_checkpoint(checkpoint_in);
  const SyntheticDataset ds = dataset_for(cfg);

  const std::string proto = to_string(cfg.protocol);
  const auto metrics_path = detail::resolve_out(
      cfg, cfg.metrics_out, "metrics_" + proto + ".jsonl");
  const auto ckpt_path = detail::resolve_out(
      cfg, cfg.checkpoint_out, "final_" + proto + ".ckpt");
  const auto messages_path = detail::resolve_out(
      cfg, cfg.messages_out, "messages_" + proto + ".jsonl");

  const TrainOutcome outcome = run_train(cfg, theta_1, ds);
  MetricsWriter writer(metrics_path);
  for (const MetricRecord& rec : outcome.metrics) writer.write(rec);
  writer.flush();
  save_checkpoint(ckpt_path, outcome.training.final_params);
  outcome.log.write_jsonl(messages_path);

  const EvalMetrics& m = outcome.final_eval;
  out << "train: protocol=" << proto << " rounds=" << cfg.rounds
      << " clients=" << ds.federated.size() << "\n";
  out << "train: final tar@far=" << fmt_double(cfg.far_target) << " -> "
      << fmt_double(m.tar.tar) << ", accuracy " << fmt_double(m.accuracy)
      << "\n";
  out << "train: wrote " << metrics_path.string() << ", "
      << ckpt_path.string() << ", " << messages_path.string() << "\n";
  std::cerr << "train: " << clock.elapsed_ms() << " ms\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_in,
                    std::ostream& out = std::cout) {
  cfg.validate();
  if (!std::filesystem::exists(checkpoint_in)) {
    throw std::runtime_error("eval: checkpoint not found: " + checkpoint_in);
  }
  const ModelParams params = load_checkpoint(checkpoint_in);
  const SyntheticDataset ds = dataset_for(cfg);
  const FeatureExtractor fx{params};
  const EvalMetrics m = evaluate_extractor(fx, ds, cfg);
  const auto scores_path =
      detail::resolve_out(cfg, cfg.scores_out, "scores.csv");
  export_scores_csv(scores_path, m.scores);
  out << "eval: genuine=" << m.scores.genuine.size()
      << " impostor=" << m.scores.impostor.size() << "\n";
  out << "eval: tar@far=" << fmt_double(cfg.far_target) << " -> "
      << fmt_double(m.tar.tar) << " (threshold "
      << fmt_double(m.tar.threshold) << ", achieved_far "
      << fmt_double(m.tar.achieved_far) << ")\n";
  out << "eval: accuracy " << fmt_double(m.accuracy) << "\n";
  if (m.tar.far_unachievable) {
    out << "eval: warning: target FAR not achievable with "
        << m.scores.impostor.size() << " impostor pairs\n";
  }
  out << "eval: wrote " << scores_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// check-equivalence
// ---------------------------------------------------------------------------

struct EquivalenceArgs {
  int trials = 100;
  std::vector<std::size_t> dims = {4, 16, 64};
  std::vector<std::size_t> class_counts = {3, 10, 50};
  double tolerance = 1e-9;
  std::uint64_t seed = 1;
};

inline int cmd_check_equivalence(const EquivalenceArgs& args,
                                 const SpreadoutParams& spreadout = {},
                                 std::ostream& out = std::cout) {
  detail::Stopwatch clock;
  const EquivalenceReport report = run_equivalence_suite(
      args.trials, args.dims, args.class_counts, args.tolerance, args.seed,
      spreadout, /*check_regular=*/true);

  // Deterministic scaled-identity falsification: 2I doubles every pairwise
  // distance, so hinge-active matrices must break commutation.
  double min_scaled_dev = std::numeric_limits<double>::infinity();
  std::uint64_t case_index = 0;
  for (std::size_t d : args.dims) {
    for (std::size_t c : args.class_counts) {
      ++case_index;
      CounterStream stream(args.seed ^ 0x5ca1ab1eull, StreamTag::Trials,
                           case_index);
      const ClassEmbeddingMatrix w =
          random_hinge_active_matrix(c, d, spreadout.margin_v, stream);
      const double dev = commutation_deviation(
          w, spreadout, scaled_identity_transform(2.0, d));
      min_scaled_dev = std::min(min_scaled_dev, dev);
    }
  }

  out << "check-equivalence: cases=" << report.cases_run
      << " max_orthonormal_deviation="
      << fmt_double(report.max_orthonormal_deviation)
      << " (tolerance " << fmt_double(args.tolerance) << ")\n";
  out << "check-equivalence: min_regular_deviation="
      << fmt_double(report.min_regular_deviation)
      << " min_scaled_identity_deviation=" << fmt_double(min_scaled_dev)
      << " (falsification bar " << fmt_double(kFalsificationBar) << ")\n";
  for (const auto& note : report.failure_notes) {
    out << "check-equivalence: FAILED case " << note << "\n";
  }
  const bool pass = report.pass() && min_scaled_dev > kFalsificationBar;
  out << "check-equivalence: " << (pass ? "PASS" : "FAIL") << "\n";
  std::cerr << "check-equivalence: " << clock.elapsed_ms() << " ms\n";
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// sweep-subjects
// ---------------------------------------------------------------------------

/// Repeats training per subject count for each of {finetune, fce, ipfed}
/// and emits one CSV row per (method, num_subjects) with the final TAR.
inline int cmd_sweep_subjects(const RunConfig& base,
                              const std::vector<std::size_t>& subject_counts,
                              std::ostream& out = std::cout) {
  base.validate();
  if (subject_counts.empty()) {
    throw std::invalid_argument("sweep-subjects: empty subject list");
  }
  detail::Stopwatch clock;

  // Pretraining and evaluation identities do not depend on the federated
  // count (identity streams are per-identity), so pretrain once.
  RunConfig pre_cfg = base;
  pre_cfg.num_clients = subject_counts.front();
  const SyntheticDataset pre_ds =
      generate_dataset(pre_cfg.dataset_spec(), pre_cfg.seed);
  const PretrainResult pre = pretrain_extractor(pre_ds, pre_cfg);

  const auto sweep_path = detail::resolve_out(base, base.sweep_out, "sweep.csv");
  std::ofstream csv(sweep_path, std::ios::trunc);
  if (!csv) {
    throw std::runtime_error("sweep-subjects: cannot write " +
                             sweep_path.string());
  }
  csv << "method,num_subjects,tar_at_far_0.1pct\n";
  const ProtocolKind methods[] = {ProtocolKind::CentralFineTune,
                                  ProtocolKind::Fce, ProtocolKind::IPFed};
  for (std::size_t c : subject_counts) {
    RunConfig cfg = base;
    cfg.num_clients = c;
    const SyntheticDataset ds = generate_dataset(cfg.dataset_spec(), cfg.seed);
    for (ProtocolKind m : methods) {
      cfg.protocol = m;
      cfg.eval_every = 0;  // final evaluation only
      const TrainOutcome outcome = run_train(cfg, pre.params, ds);
      const std::string line = std::string(to_string(m)) + "," +
                               std::to_string(c) + "," +
                               fmt_double(outcome.final_eval.tar.tar);
      csv << line << "\n";
      out << "sweep-subjects: " << line << "\n";
    }
  }
  out << "sweep-subjects: wrote " << sweep_path.string() << "\n";
  std::cerr << "sweep-subjects: " << clock.elapsed_ms() << " ms\n";
  return 0;
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

/// Runs a full training with message logging and audits the log: flags any
/// learning-server-bound vector that matches a true pre-projection class
/// embedding, and verifies the parameter server sent nothing but transforms.
inline int cmd_audit(const RunConfig& cfg, const std::string& checkpoint_in,
                     std::ostream& out = std::cout) {
  cfg.validate();
  ModelParams theta_1;
  if (!checkpoint_in.empty()) {
    theta_1 = load_checkpoint(checkpoint_in);
  } else {
    theta_1 =
        make_extractor(cfg.input_dim, cfg.hidden, cfg.dim, cfg.seed).params;
  }
  const SyntheticDataset ds = dataset_for(cfg);
  FederationSettings settings = cfg.federation_settings();
  settings.record_messages = true;
  FederationEngine engine(cfg.protocol, theta_1, ds.federated, settings);
  engine.run_training(cfg.rounds);

  const auto messages_path = detail::resolve_out(
      cfg, cfg.messages_out,
      "messages_" + std::string(to_string(cfg.protocol)) + ".jsonl");
  engine.log().write_jsonl(messages_path);

  const AuditReport report = privacy_audit(engine.log());
  out << "audit: protocol=" << to_string(cfg.protocol)
      << " rounds=" << cfg.rounds << " messages_checked="
      << report.messages_checked << "\n";
  out << "audit: embedding_exposures=" << report.violations.size()
      << " flagged_rounds=" << report.flagged_rounds().size()
      << " parameter_server_clean="
      << (report.parameter_server_clean ? "true" : "false") << "\n";
  out << "audit: " << (report.clean() ? "no exposures detected"
                                      : "EMBEDDINGS EXPOSED") << "\n";
  out << "audit: wrote " << messages_path.string() << "\n";
  return 0;
}

}  // namespace ipfed
