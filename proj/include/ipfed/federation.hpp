#pragma once

// Three-entity federated protocol engine: clients (one identity each), a
// learning server that aggregates model parameters and runs the spreadout
// step, and a parameter server whose only job is handing out the per-round
// transformation parameter.
//
// Protocol variants share one round loop:
//   fedface   - class embeddings travel to the learning server in the clear
//   ipfed     - embeddings are projected by a fresh orthonormal transform on
//               the way in and decoded with its transpose on the way back
//   fce       - embeddings are initialized once, never shared, never updated
//   finetune  - centralized cosine-margin training on the pooled data; the
//               message layer is bypassed entirely
//
// Transport is simulated with in-process delivery plus a mandatory message
// log (digests always, embedding payload copies for the privacy audit), so
// every run is deterministic and auditable.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ipfed/data_eval.hpp"
#include "ipfed/digest.hpp"
#include "ipfed/losses.hpp"
#include "ipfed/model.hpp"
#include "ipfed/rng.hpp"
#include "ipfed/transform.hpp"
#include "ipfed/vec.hpp"

namespace ipfed {

enum class ProtocolKind { FedFace, IPFed, Fce, CentralFineTune };

inline const char* to_string(ProtocolKind p) {
  switch (p) {
    case ProtocolKind::FedFace: return "fedface";
    case ProtocolKind::IPFed: return "ipfed";
    case ProtocolKind::Fce: return "fce";
    case ProtocolKind::CentralFineTune: return "finetune";
  }
  return "?";
}

inline ProtocolKind protocol_from_string(const std::string& s) {
  if (s == "fedface") return ProtocolKind::FedFace;
  if (s == "ipfed") return ProtocolKind::IPFed;
  if (s == "fce") return ProtocolKind::Fce;
  if (s == "finetune") return ProtocolKind::CentralFineTune;
  throw std::invalid_argument("unknown protocol '" + s +
                              "' (expected fedface|ipfed|fce|finetune)");
}

struct ClientState {
  int client_id = 0;
  IdentityData local_dataset;   // every sample carries one identity
  EmbeddingVec class_embedding; // w_t^i, in the original feature space
  ModelParams current_params;
};

struct LearningServerState {
  ModelParams global_params;
};

struct ParameterServerState {
  std::uint64_t master_seed = 0;
  int current_round = 0;
};

struct RoundMessage {
  enum class Kind { GlobalParams, Transform, ClientUpdate, SpreadoutResult };
  int round = 0;
  std::string from;
  std::string to;
  Kind kind = Kind::GlobalParams;
  std::uint64_t payload_digest = 0;
  // Embedding payloads are kept in memory so the privacy audit can inspect
  // what actually crossed the wire; the JSONL export stores digests only.
  std::optional<EmbeddingVec> embedding;
};

inline const char* to_string(RoundMessage::Kind k) {
  switch (k) {
    case RoundMessage::Kind::GlobalParams: return "global_params";
    case RoundMessage::Kind::Transform: return "transform";
    case RoundMessage::Kind::ClientUpdate: return "client_update";
    case RoundMessage::Kind::SpreadoutResult: return "spreadout_result";
  }
  return "?";
}

struct MessageLog {
  std::vector<RoundMessage> entries;
  // Simulator-side ground truth for the audit: the true pre-projection
  // embeddings per round. Never serialized.
  std::vector<std::pair<int, ClassEmbeddingMatrix>> true_embeddings;

  /// One JSON object per line: {round, from, to, kind, payload_digest}.
  void write_jsonl(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
      throw std::runtime_error("message log: cannot write " + path.string());
    }
    for (const auto& e : entries) {
      os << "{\"round\":" << e.round << ",\"from\":\"" << e.from
         << "\",\"to\":\"" << e.to << "\",\"kind\":\"" << to_string(e.kind)
         << "\",\"payload_digest\":\"" << digest_hex(e.payload_digest)
         << "\"}\n";
    }
  }
};

struct RoundReport {
  int round = 0;
  double mean_positive_loss = 0.0;  // cosine loss under finetune
  double spreadout_value = 0.0;
  std::size_t degenerate_pairs = 0;
  bool spreadout_skipped = false;
  std::size_t participants = 0;
  std::size_t messages_logged = 0;
};

struct FederationSettings {
  PositiveLossParams positive;
  SpreadoutParams spreadout;
  CosineMarginParams cosine;
  double eta = 0.1;
  int local_steps = 1;
  double client_fraction = 1.0;  // 1.0 = every client every round
  std::uint64_t run_seed = 1;
  bool record_messages = true;
  // Audit positive control: force r_t = I so the "protected" run leaks.
  bool force_identity_transform = false;
};

/// Mean forward embedding over the client's dataset (not renormalized).
inline EmbeddingVec init_class_embedding(const IdentityData& data,
                                         const FeatureExtractor& fx) {
  if (data.samples.empty()) {
    throw std::invalid_argument("init_class_embedding: empty dataset");
  }
  EmbeddingVec mean(fx.output_dim(), 0.0);
  for (const auto& x : data.samples) {
    const EmbeddingVec f = forward(fx, x);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += f[i];
  }
  const double inv = 1.0 / static_cast<double>(data.samples.size());
  for (double& v : mean) v *= inv;
  return mean;
}

inline EmbeddingVec init_class_embedding(const ClientState& client,
                                         const FeatureExtractor& fx) {
  return init_class_embedding(client.local_dataset, fx);
}

struct LocalUpdateResult {
  ModelParams theta;
  EmbeddingVec w_tilde;
  double initial_loss = 0.0;  // mean positive loss before the first step
};

// local_steps full-batch gradient steps on (theta, w); both gradients are
// evaluated at the same point before either moves. freeze_embedding drops
// the w-gradient (the fce variant).
inline LocalUpdateResult client_local_update(const ClientState& client,
                                             const ModelParams& theta,
                                             const PositiveLossParams& positive,
                                             double eta, int local_steps,
                                             bool freeze_embedding = false) {
  const auto& samples = client.local_dataset.samples;
  if (samples.empty()) {
    throw std::invalid_argument("client_local_update: empty dataset");
  }
  LocalUpdateResult r;
  r.theta = theta;
  r.w_tilde = client.class_embedding;
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  for (int step = 0; step < std::max(local_steps, 1); ++step) {
    FeatureExtractor fx{r.theta};
    std::vector<double> grad_theta(r.theta.values.size(), 0.0);
    EmbeddingVec grad_w(r.w_tilde.size(), 0.0);
    double loss = 0.0;
    for (const auto& x : samples) {
      const BackwardPositiveResult b =
          backward_positive(fx, x, r.w_tilde, positive);
      loss += b.loss;
      for (std::size_t i = 0; i < grad_theta.size(); ++i) {
        grad_theta[i] += b.grad_theta[i];
      }
      for (std::size_t i = 0; i < grad_w.size(); ++i) {
        grad_w[i] += b.grad_w[i];
      }
    }
    for (double& g : grad_theta) g *= inv_n;
    for (double& g : grad_w) g *= inv_n;
    if (step == 0) r.initial_loss = loss * inv_n;
    r.theta = sgd_step(r.theta, grad_theta, eta);
    if (!freeze_embedding) {
      for (std::size_t i = 0; i < r.w_tilde.size(); ++i) {
        r.w_tilde[i] -= eta * grad_w[i];
      }
    }
  }
  return r;
}

// One full-batch cosine-margin epoch over (theta, rows): class c's samples
// are classes[c]->samples, rows are renormalized after the step (the loss
// expects unit rows). Returns the mean loss before the step.
inline double central_cosine_epoch(ModelParams& theta,
                                   ClassEmbeddingMatrix& rows,
                                   std::span<const IdentityData* const> classes,
                                   const CosineMarginParams& p, double eta) {
  if (classes.size() != rows.num_classes()) {
    throw std::invalid_argument("central_cosine_epoch: class count mismatch");
  }
  const FeatureExtractor fx{theta};
  std::vector<double> grad_theta(theta.values.size(), 0.0);
  ClassEmbeddingMatrix grad_rows(rows.num_classes(), rows.dim());
  double loss_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (const auto& x : classes[c]->samples) {
      const auto trace = detail::forward_trace(fx, x);
      if (trace.degenerate) ++fx.norm_fallback_count;
      const CosineMarginGrad g =
          cosine_margin_loss_grad(trace.embedding, rows, c, p);
      loss_sum += g.loss;
      ++n;
      const std::vector<double> gt =
          detail::backward_from_trace(theta, trace, g.grad_f);
      for (std::size_t i = 0; i < grad_theta.size(); ++i) grad_theta[i] += gt[i];
      for (std::size_t i = 0; i < grad_rows.data().size(); ++i) {
        grad_rows.data()[i] += g.grad_rows.data()[i];
      }
    }
  }
  if (n == 0) throw std::invalid_argument("central_cosine_epoch: no samples");
  const double inv_n = 1.0 / static_cast<double>(n);
  for (double& g : grad_theta) g *= inv_n;
  theta = sgd_step(theta, grad_theta, eta);
  for (std::size_t c = 0; c < rows.num_classes(); ++c) {
    auto row = rows.row(c);
    const auto grow = grad_rows.row(c);
    for (std::size_t i = 0; i < row.size(); ++i) {
      row[i] -= eta * grow[i] * inv_n;
    }
    double nn = 0.0;
    for (double v : row) nn += v * v;
    nn = std::sqrt(nn);
    if (nn < 1e-12) {
      std::fill(row.begin(), row.end(), 0.0);
      row[0] = 1.0;
    } else {
      for (double& v : row) v /= nn;
    }
  }
  return loss_sum * inv_n;
}

struct TrainingResult {
  ModelParams final_params;
  ClassEmbeddingMatrix final_embeddings;
  std::vector<RoundReport> rounds;
};

class FederationEngine {
 public:
  FederationEngine(ProtocolKind protocol, ModelParams initial_params,
                   std::vector<IdentityData> federated_data,
                   FederationSettings settings)
      : protocol_(protocol), settings_(settings) {
    if (federated_data.empty()) {
      throw std::invalid_argument("FederationEngine: no clients");
    }
    initial_params.validate();
    learning_server_.global_params = std::move(initial_params);
    learning_server_.global_params.version = 1;
    param_server_.master_seed =
        stream_key(settings_.run_seed, StreamTag::Transform);
    const FeatureExtractor init_fx{learning_server_.global_params};
    clients_.reserve(federated_data.size());
    int idx = 0;
    for (auto& data : federated_data) {
      ClientState c;
      c.client_id = idx++;
      c.local_dataset = std::move(data);
      c.class_embedding = init_class_embedding(c.local_dataset, init_fx);
      c.current_params = learning_server_.global_params;
      clients_.push_back(std::move(c));
    }
    if (protocol_ == ProtocolKind::CentralFineTune) {
      init_finetune_rows();
    }
  }

  ProtocolKind protocol() const { return protocol_; }
  int rounds_completed() const { return next_round_ - 1; }
  std::size_t num_clients() const { return clients_.size(); }
  std::size_t embedding_dim() const {
    return learning_server_.global_params.output_dim();
  }
  const ModelParams& global_params() const {
    return learning_server_.global_params;
  }
  const std::vector<ClientState>& clients() const { return clients_; }
  const MessageLog& log() const { return log_; }
  const FederationSettings& settings() const { return settings_; }

  ClassEmbeddingMatrix class_embedding_snapshot() const {
    std::vector<EmbeddingVec> rows;
    rows.reserve(clients_.size());
    for (const auto& c : clients_) rows.push_back(c.class_embedding);
    return ClassEmbeddingMatrix::from_rows(rows);
  }

  /// Copy of this engine's full state running a different protocol;
  /// used to compare protocol variants from an identical starting point.
  FederationEngine fork(ProtocolKind protocol) const {
    FederationEngine copy = *this;
    copy.protocol_ = protocol;
    if (protocol == ProtocolKind::CentralFineTune &&
        copy.finetune_rows_.num_classes() == 0) {
      copy.init_finetune_rows();
    }
    return copy;
  }

  RoundReport run_round() {
    const int t = next_round_;
    ++next_round_;
    param_server_.current_round = t;
    const std::size_t log_before = log_.entries.size();
    RoundReport report =
        protocol_ == ProtocolKind::CentralFineTune
            ? run_central_round(t)
            : run_federated_round(t);
    report.messages_logged = log_.entries.size() - log_before;
    return report;
  }

  using RoundObserver =
      std::function<void(const RoundReport&, const FederationEngine&)>;

  TrainingResult run_training(int rounds,
                              const RoundObserver& observer = nullptr) {
    if (rounds < 0) {
      throw std::invalid_argument("run_training: negative round count");
    }
    TrainingResult result;
    result.rounds.reserve(static_cast<std::size_t>(rounds));
    for (int t = 0; t < rounds; ++t) {
      result.rounds.push_back(run_round());
      if (observer) observer(result.rounds.back(), *this);
    }
    result.final_params = learning_server_.global_params;
    result.final_embeddings = class_embedding_snapshot();
    return result;
  }

 private:
  void init_finetune_rows() {
    const FeatureExtractor fx{learning_server_.global_params};
    std::vector<EmbeddingVec> rows;
    rows.reserve(clients_.size());
    for (const auto& c : clients_) {
      EmbeddingVec w = init_class_embedding(c.local_dataset, fx);
      const double n = norm2(w);
      if (n < 1e-12) {
        w.assign(fx.output_dim(), 0.0);
        w[0] = 1.0;
      } else {
        for (double& v : w) v /= n;
      }
      rows.push_back(std::move(w));
    }
    finetune_rows_ = ClassEmbeddingMatrix::from_rows(rows);
  }

  std::vector<std::size_t> pick_participants(int round) {
    if (settings_.client_fraction >= 1.0) {
      std::vector<std::size_t> all(clients_.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      return all;
    }
    const auto want = std::max<std::size_t>(
        1, static_cast<std::size_t>(settings_.client_fraction *
                                    static_cast<double>(clients_.size())));
    CounterStream stream(settings_.run_seed, StreamTag::Participation,
                         static_cast<std::uint64_t>(round));
    std::vector<std::size_t> pool(clients_.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t j = i + stream.next_below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(want);
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  void log_message(int round, std::string from, std::string to,
                   RoundMessage::Kind kind, std::uint64_t digest,
                   std::optional<EmbeddingVec> embedding = std::nullopt) {
    if (!settings_.record_messages) return;
    log_.entries.push_back(RoundMessage{round, std::move(from), std::move(to),
                                        kind, digest, std::move(embedding)});
  }

  static std::string client_name(int id) {
    return "client_" + std::to_string(id);
  }

  RoundReport run_federated_round(int t) {
    RoundReport report;
    report.round = t;

    const std::vector<std::size_t> participants = pick_participants(t);
    report.participants = participants.size();
    const ModelParams& theta_t = learning_server_.global_params;
    const std::uint64_t theta_digest = digest_params(theta_t);

    // (ii) broadcast current global parameters
    for (std::size_t ci : participants) {
      log_message(t, "learning_server", client_name(clients_[ci].client_id),
                  RoundMessage::Kind::GlobalParams, theta_digest);
      clients_[ci].current_params = theta_t;
    }

    // (iii) the parameter server issues this round's transform (ipfed only)
    std::optional<TransformParam> transform;
    if (protocol_ == ProtocolKind::IPFed) {
      transform = settings_.force_identity_transform
                      ? identity_transform(embedding_dim())
                      : gen_orthonormal(param_server_.master_seed, t,
                                        embedding_dim());
      const std::uint64_t r_digest = digest_matrix_rows(
          transform->matrix.data(), transform->dim(), transform->dim());
      for (std::size_t ci : participants) {
        log_message(t, "parameter_server",
                    client_name(clients_[ci].client_id),
                    RoundMessage::Kind::Transform, r_digest);
      }
    }

    // (iv)-(vi) local updates, projection, upload
    const bool shares_embeddings = protocol_ != ProtocolKind::Fce;
    std::vector<std::pair<ModelParams, double>> updates;
    std::vector<EmbeddingVec> uploaded;   // \bar w, as sent
    std::vector<EmbeddingVec> true_tilde; // \tilde w, pre-projection
    updates.reserve(participants.size());
    double loss_sum = 0.0;
    std::set<int> seen;
    for (std::size_t ci : participants) {
      ClientState& client = clients_[ci];
      if (!seen.insert(client.client_id).second) {
        throw std::runtime_error("protocol violation: duplicate update from " +
                                 client_name(client.client_id));
      }
      LocalUpdateResult lu = client_local_update(
          client, theta_t, settings_.positive, settings_.eta,
          settings_.local_steps, protocol_ == ProtocolKind::Fce);
      loss_sum += lu.initial_loss;
      client.current_params = lu.theta;

      Fnv1a64 h;
      h.update_u64(digest_params(lu.theta));
      h.update_u64(static_cast<std::uint64_t>(client.local_dataset.samples.size()));
      std::optional<EmbeddingVec> payload;
      if (shares_embeddings) {
        EmbeddingVec bar_w = protocol_ == ProtocolKind::IPFed
                                 ? project(lu.w_tilde, *transform)
                                 : lu.w_tilde;
        h.update_u64(digest_embedding(bar_w));
        payload = bar_w;
        uploaded.push_back(std::move(bar_w));
        true_tilde.push_back(lu.w_tilde);
      }
      log_message(t, client_name(client.client_id), "learning_server",
                  RoundMessage::Kind::ClientUpdate, h.digest(),
                  std::move(payload));
      updates.emplace_back(
          std::move(lu.theta),
          static_cast<double>(client.local_dataset.samples.size()));
      if (shares_embeddings) {
        // stash \tilde w on the client until the spreadout result arrives
        clients_[ci].class_embedding = true_tilde.back();
      }
    }
    if (updates.size() != participants.size()) {
      throw std::runtime_error("protocol violation: missing client update");
    }
    report.mean_positive_loss =
        loss_sum / static_cast<double>(participants.size());

    if (settings_.record_messages && shares_embeddings) {
      log_.true_embeddings.emplace_back(
          t, ClassEmbeddingMatrix::from_rows(true_tilde));
    }

    // (vii) aggregate model parameters, weighted by sample counts
    ModelParams theta_next = average_params(updates);
    theta_next.version = static_cast<std::uint64_t>(t) + 1;
    learning_server_.global_params = std::move(theta_next);

    // (viii)-(x) spreadout on the received matrix, return rows, decode
    if (shares_embeddings) {
      ClassEmbeddingMatrix received = ClassEmbeddingMatrix::from_rows(uploaded);
      ClassEmbeddingMatrix result_matrix = received;
      if (received.num_classes() >= 2) {
        report.spreadout_value = spreadout_loss(received, settings_.spreadout);
        SpreadoutUpdateResult su =
            spreadout_update(received, settings_.spreadout);
        report.degenerate_pairs = su.degenerate_pairs;
        result_matrix = std::move(su.updated);
      } else {
        report.spreadout_skipped = true;
      }
      for (std::size_t k = 0; k < participants.size(); ++k) {
        ClientState& client = clients_[participants[k]];
        EmbeddingVec hat_w = result_matrix.row_vec(k);
        log_message(t, "learning_server", client_name(client.client_id),
                    RoundMessage::Kind::SpreadoutResult,
                    digest_embedding(hat_w), hat_w);
        client.class_embedding = protocol_ == ProtocolKind::IPFed
                                     ? inverse_project(hat_w, *transform)
                                     : std::move(hat_w);
      }
    } else {
      report.spreadout_skipped = true;
    }
    return report;
  }

  // Centralized fine-tuning epoch over the pooled data; no messages.
  RoundReport run_central_round(int t) {
    RoundReport report;
    report.round = t;
    report.spreadout_skipped = true;
    report.participants = clients_.size();

    std::vector<const IdentityData*> classes;
    classes.reserve(clients_.size());
    for (const auto& c : clients_) classes.push_back(&c.local_dataset);
    report.mean_positive_loss = central_cosine_epoch(
        learning_server_.global_params, finetune_rows_, classes,
        settings_.cosine, settings_.eta);
    learning_server_.global_params.version = static_cast<std::uint64_t>(t) + 1;
    return report;
  }

  ProtocolKind protocol_;
  FederationSettings settings_;
  LearningServerState learning_server_;
  ParameterServerState param_server_;
  std::vector<ClientState> clients_;
  ClassEmbeddingMatrix finetune_rows_;  // finetune only
  MessageLog log_;
  int next_round_ = 1;
};

// ---------------------------------------------------------------------------
// Privacy audit
// ---------------------------------------------------------------------------

struct AuditViolation {
  int round = 0;
  std::string from;
  std::size_t matched_row = 0;  // row in that round's true-embedding matrix
  double cosine_sim = 0.0;
};

struct AuditReport {
  std::vector<AuditViolation> violations;
  std::size_t messages_checked = 0;
  bool parameter_server_clean = true;

  std::set<int> flagged_rounds() const {
    std::set<int> r;
    for (const auto& v : violations) r.insert(v.round);
    return r;
  }
  bool clean() const { return violations.empty() && parameter_server_clean; }
};

constexpr double kAuditSimilarityThreshold = 1.0 - 1e-6;

// Checks two things against a completed run's log: no learning-server-bound
// vector may essentially coincide (cosine similarity >= 1 - 1e-6) with any
// true pre-projection class embedding of that round, and the parameter
// server must never emit anything but transform parameters.
inline AuditReport privacy_audit(const MessageLog& log) {
  AuditReport report;
  std::map<int, const ClassEmbeddingMatrix*> truth;
  for (const auto& [round, matrix] : log.true_embeddings) {
    truth[round] = &matrix;
  }
  for (const auto& e : log.entries) {
    if (e.from == "parameter_server" &&
        e.kind != RoundMessage::Kind::Transform) {
      report.parameter_server_clean = false;
    }
    if (e.to != "learning_server" || !e.embedding.has_value()) continue;
    ++report.messages_checked;
    const auto it = truth.find(e.round);
    if (it == truth.end()) continue;
    const ClassEmbeddingMatrix& m = *it->second;
    for (std::size_t c = 0; c < m.num_classes(); ++c) {
      const double sim = cosine_similarity(*e.embedding, m.row_vec(c));
      if (sim >= kAuditSimilarityThreshold) {
        report.violations.push_back(AuditViolation{e.round, e.from, c, sim});
      }
    }
  }
  return report;
}

}  // namespace ipfed
