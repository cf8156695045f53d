// Command-line interface for the federated-authentication simulator.
// Subcommands: gen-data, pretrain, train, eval, check-equivalence,
// sweep-subjects, audit. Every option can also come from a flat
// key = value config file (--config); explicit flags win.

#include <CLI11.hpp>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "ipfed/commands.hpp"
#include "ipfed/config.hpp"

namespace {

struct CliState {
  ipfed::RunConfig cfg;
  std::string config_file;
  std::string protocol_name;
  std::string hidden_spec;
};

// Config file first, then explicit flags on top.
void finalize(CliState& s, const CLI::App& cmd) {
  ipfed::RunConfig fresh;
  if (!s.config_file.empty()) {
    ipfed::load_config_file(fresh, s.config_file);
  }
  // Transfer any flag the user actually passed from the parsed struct.
  // CLI11 wrote parsed values into s.cfg; copy file values for the rest.
  auto passed = [&](const std::string& name) {
    const CLI::Option* opt = cmd.get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
#define IPFED_MERGE(flag, field) \
  if (!passed(flag)) s.cfg.field = fresh.field;
  IPFED_MERGE("--seed", seed)
  IPFED_MERGE("--dim", dim)
  IPFED_MERGE("--input-dim", input_dim)
  IPFED_MERGE("--clients", num_clients)
  IPFED_MERGE("--samples-per-id", samples_per_id)
  IPFED_MERGE("--rounds", rounds)
  IPFED_MERGE("--local-steps", local_steps)
  IPFED_MERGE("--eta", eta)
  IPFED_MERGE("--client-fraction", client_fraction)
  IPFED_MERGE("--margin-m", margin_m)
  IPFED_MERGE("--margin-v", margin_v)
  IPFED_MERGE("--lambda", lambda)
  IPFED_MERGE("--cosine-scale", cosine_scale)
  IPFED_MERGE("--cosine-margin", cosine_margin)
  IPFED_MERGE("--pretrain-ids", num_pretrain_ids)
  IPFED_MERGE("--eval-ids", num_eval_ids)
  IPFED_MERGE("--center-scale", cluster_center_scale)
  IPFED_MERGE("--noise-sigma", noise_sigma)
  IPFED_MERGE("--pretrain-epochs", pretrain_epochs)
  IPFED_MERGE("--pretrain-eta", pretrain_eta)
  IPFED_MERGE("--genuine-pairs", genuine_pairs)
  IPFED_MERGE("--impostor-factor", impostor_factor)
  IPFED_MERGE("--far-target", far_target)
  IPFED_MERGE("--eval-every", eval_every)
  IPFED_MERGE("--out-dir", out_dir)
  IPFED_MERGE("--dataset", dataset_csv)
  IPFED_MERGE("--dataset-out", dataset_out)
  IPFED_MERGE("--checkpoint-out", checkpoint_out)
  IPFED_MERGE("--metrics-out", metrics_out)
  IPFED_MERGE("--messages-out", messages_out)
  IPFED_MERGE("--scores-out", scores_out)
  IPFED_MERGE("--sweep-out", sweep_out)
#undef IPFED_MERGE
  if (passed("--protocol")) {
    s.cfg.protocol = ipfed::protocol_from_string(s.protocol_name);
  } else {
    s.cfg.protocol = fresh.protocol;
  }
  if (passed("--hidden")) {
    s.cfg.hidden = ipfed::detail::parse_size_list(s.hidden_spec);
  } else {
    s.cfg.hidden = fresh.hidden;
  }
}

void add_common_options(CLI::App& cmd, CliState& s) {
  cmd.add_option("--config", s.config_file, "flat key = value config file");
  cmd.add_option("--seed", s.cfg.seed, "master seed");
  cmd.add_option("--protocol", s.protocol_name,
                 "fedface|ipfed|fce|finetune");
  cmd.add_option("--dim", s.cfg.dim, "embedding dimension d");
  cmd.add_option("--hidden", s.hidden_spec, "hidden widths, e.g. 32,32");
  cmd.add_option("--input-dim", s.cfg.input_dim, "raw input dimension");
  cmd.add_option("--clients", s.cfg.num_clients, "federated client count C");
  cmd.add_option("--samples-per-id", s.cfg.samples_per_id, "samples n_i");
  cmd.add_option("--rounds", s.cfg.rounds, "communication rounds T");
  cmd.add_option("--local-steps", s.cfg.local_steps, "local steps per round");
  cmd.add_option("--eta", s.cfg.eta, "learning rate");
  cmd.add_option("--client-fraction", s.cfg.client_fraction,
                 "participating fraction per round");
  cmd.add_option("--margin-m", s.cfg.margin_m, "positive-loss margin m");
  cmd.add_option("--margin-v", s.cfg.margin_v, "spreadout margin v");
  cmd.add_option("--lambda", s.cfg.lambda, "spreadout step size");
  cmd.add_option("--cosine-scale", s.cfg.cosine_scale, "cosine-loss scale");
  cmd.add_option("--cosine-margin", s.cfg.cosine_margin, "cosine-loss margin");
  cmd.add_option("--pretrain-ids", s.cfg.num_pretrain_ids, "pretrain identities");
  cmd.add_option("--eval-ids", s.cfg.num_eval_ids, "evaluation identities");
  cmd.add_option("--center-scale", s.cfg.cluster_center_scale,
                 "identity cluster center scale");
  cmd.add_option("--noise-sigma", s.cfg.noise_sigma,
                 "within-class noise sigma");
  cmd.add_option("--pretrain-epochs", s.cfg.pretrain_epochs, "pretrain epochs");
  cmd.add_option("--pretrain-eta", s.cfg.pretrain_eta, "pretrain learning rate");
  cmd.add_option("--genuine-pairs", s.cfg.genuine_pairs, "genuine pair count");
  cmd.add_option("--impostor-factor", s.cfg.impostor_factor,
                 "impostor pairs per genuine pair");
  cmd.add_option("--far-target", s.cfg.far_target, "FAR operating point");
  cmd.add_option("--eval-every", s.cfg.eval_every,
                 "evaluate every k rounds (0 = never)");
  cmd.add_option("--out-dir", s.cfg.out_dir,
                 "output directory (default $IPFED_OUTPUT_DIR or .)");
  cmd.add_option("--dataset", s.cfg.dataset_csv, "load dataset CSV");
  cmd.add_option("--dataset-out", s.cfg.dataset_out, "dataset CSV path");
  cmd.add_option("--checkpoint-out", s.cfg.checkpoint_out, "checkpoint path");
  cmd.add_option("--metrics-out", s.cfg.metrics_out, "metrics JSONL path");
  cmd.add_option("--messages-out", s.cfg.messages_out, "message log path");
  cmd.add_option("--scores-out", s.cfg.scores_out, "scores CSV path");
  cmd.add_option("--sweep-out", s.cfg.sweep_out, "sweep CSV path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privacy-preserving federated learning simulator for user "
               "authentication (fedface / ipfed / fce / finetune)"};
  app.require_subcommand(1);

  CliState gen_s, pre_s, train_s, eval_s, sweep_s, audit_s;
  std::string train_ckpt, eval_ckpt, audit_ckpt;
  std::vector<std::size_t> sweep_counts = {10, 50};

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset CSV");
  add_common_options(*gen, gen_s);

  CLI::App* pre = app.add_subcommand("pretrain", "centralized pretraining");
  add_common_options(*pre, pre_s);

  CLI::App* train = app.add_subcommand("train", "federated training");
  add_common_options(*train, train_s);
  train->add_option("--checkpoint", train_ckpt, "pretrained checkpoint")
      ->required();

  CLI::App* eval = app.add_subcommand("eval", "verification metrics for a checkpoint");
  add_common_options(*eval, eval_s);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")
      ->required();

  ipfed::EquivalenceArgs eq;
  std::string eq_dims = "4,16,64", eq_classes = "3,10,50";
  CLI::App* check = app.add_subcommand(
      "check-equivalence",
      "verify protected/unprotected spreadout commutation");
  check->add_option("--trials", eq.trials, "trials per (d, C) combination");
  check->add_option("--dims", eq_dims, "embedding dimensions, e.g. 4,16,64");
  check->add_option("--classes", eq_classes, "class counts, e.g. 3,10,50");
  check->add_option("--tolerance", eq.tolerance, "orthonormal tolerance");
  check->add_option("--seed", eq.seed, "suite seed");

  CLI::App* sweep = app.add_subcommand(
      "sweep-subjects", "train finetune/fce/ipfed across subject counts");
  add_common_options(*sweep, sweep_s);
  sweep->add_option("--subjects", sweep_counts, "subject counts to sweep");

  CLI::App* audit = app.add_subcommand(
      "audit", "run a protocol and audit its message log");
  add_common_options(*audit, audit_s);
  audit->add_option("--checkpoint", audit_ckpt,
                    "optional starting checkpoint (default: fresh init)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      finalize(gen_s, *gen);
      return ipfed::cmd_gen_data(gen_s.cfg);
    }
    if (pre->parsed()) {
      finalize(pre_s, *pre);
      return ipfed::cmd_pretrain(pre_s.cfg);
    }
    if (train->parsed()) {
      finalize(train_s, *train);
      return ipfed::cmd_train(train_s.cfg, train_ckpt);
    }
    if (eval->parsed()) {
      finalize(eval_s, *eval);
      return ipfed::cmd_eval(eval_s.cfg, eval_ckpt);
    }
    if (check->parsed()) {
      eq.dims = ipfed::detail::parse_size_list(eq_dims);
      eq.class_counts = ipfed::detail::parse_size_list(eq_classes);
      return ipfed::cmd_check_equivalence(eq);
    }
    if (sweep->parsed()) {
      finalize(sweep_s, *sweep);
      return ipfed::cmd_sweep_subjects(sweep_s.cfg, sweep_counts);
    }
    if (audit->parsed()) {
      finalize(audit_s, *audit);
      return ipfed::cmd_audit(audit_s.cfg, audit_ckpt);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
