// Command line front end: gen | train | eval | sweep | audit.
// Flags override values loaded via --config; every run writes its fully
// resolved configuration next to its outputs so it can be replayed.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "relbal/runner.hpp"

namespace {

// The config file (if any) must be applied before CLI11 assigns flag
// values, so explicitly passed flags win. CLI11 reports options in
// command-line order, hence this pre-scan.
std::string find_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return {};
}

void add_common(CLI::App* cmd, relbal::RunConfig& cfg) {
  cmd->add_option("--config", "path to a key = value config file (flags override it)")
      ->expected(1);
  cmd->add_option("--seed", cfg.seed, "root random seed");
  cmd->add_option("--out", cfg.out, "output directory (default $RELBAL_OUT_ROOT/<command>)");
}

void add_data_options(CLI::App* cmd, relbal::RunConfig& cfg) {
  cmd->add_option("--classes", cfg.classes, "number of classes");
  cmd->add_option("--dim", cfg.dim, "embedding dimension");
  cmd->add_option("--samples-per-class", cfg.samples_per_class, "train samples per class");
  cmd->add_option("--test-per-class", cfg.test_per_class, "heldout samples per class");
  cmd->add_option("--sigma", cfg.sigma, "within-cluster standard deviation");
  cmd->add_option("--separation", cfg.separation, "distance of cluster means from the origin");
  cmd->add_option("--format", cfg.format, "dataset file format: text | binary");
}

void add_train_options(CLI::App* cmd, relbal::RunConfig& cfg) {
  cmd->add_option("--train", cfg.train_path, "train dataset path");
  cmd->add_option("--eval", cfg.eval_path, "heldout dataset path");
  cmd->add_option("--manifest", cfg.manifest_path, "dataset manifest (supplies train/eval paths)");
  cmd->add_option("--noise", cfg.noise, "percent of train labels to corrupt");
  cmd->add_option("--epochs", cfg.epochs, "training epochs (0 emits the initial checkpoint)");
  cmd->add_option("--base-lr", cfg.base_lr, "initial learning rate");
  cmd->add_option("--lr-decay", cfg.lr_decay, "per-epoch learning rate decay factor");
  cmd->add_option("--batch-size", cfg.batch_size, "minibatch size");
  cmd->add_option("--lambda-cls", cfg.lambda_cls, "classification loss weight");
  cmd->add_option("--lambda-a", cfg.lambda_a, "anchor spread loss weight");
  cmd->add_option("--lambda-c", cfg.lambda_c, "center loss weight");
  cmd->add_option("--smoothing", cfg.smoothing, "label smoothing term in [0,100)");
  cmd->add_option("--group-cap", cfg.group_cap, "refinement stage-one cap per source group");
  cmd->add_option("--class-quota", cfg.class_quota, "refinement stage-two samples per class");
  cmd->add_option("--anchors", cfg.anchors, "anchors per class (0 disables the anchor branch)");
  cmd->add_option("--tokens", cfg.tokens, "attention tokens the embedding is split into");
  cmd->add_option("--heads", cfg.heads, "attention heads per token block");
  cmd->add_option("--delta", cfg.delta, "anchor similarity temperature");
  cmd->add_option("--reduced-dim", cfg.reduced_dim, "reduction output dim (0 keeps the input)");
  cmd->add_option("--hidden", cfg.hidden, "hidden width of the two-layer trunk");
  cmd->add_option("--eval-every", cfg.eval_every, "epochs between heldout evals (0: last only)");
  cmd->add_option("--clip-norm", cfg.clip_norm, "global gradient norm clip (0 disables)");
}

}  // namespace

int main(int argc, char** argv) {
  relbal::RunConfig cfg;
  try {
    const std::string config_path = find_config_path(argc, argv);
    if (!config_path.empty()) relbal::load_config_file(cfg, config_path);
  } catch (const relbal::Error& e) {
    std::cerr << e.line() << "\n";
    return 1;
  }

  CLI::App app{"reliability-balancing classification head"};
  app.require_subcommand(1);

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset with a manifest");
  add_common(gen, cfg);
  add_data_options(gen, cfg);

  CLI::App* train = app.add_subcommand("train", "train a head and write checkpoint + logs");
  add_common(train, cfg);
  add_train_options(train, cfg);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval, cfg);
  eval->add_option("--checkpoint", cfg.checkpoint_path, "checkpoint to load");
  eval->add_option("--data", cfg.data_path, "dataset to score");
  eval->add_flag("--dump-records", cfg.dump_records, "also write per-sample records.jsonl");

  CLI::App* sweep = app.add_subcommand("sweep", "train across one axis and tabulate metrics");
  add_common(sweep, cfg);
  add_train_options(sweep, cfg);
  sweep->add_option("--axis", cfg.axis, "sweep axis: anchors | noise | smoothing | lambda-a");
  sweep->add_option("--values", cfg.values, "comma separated axis values");
  sweep->add_option("--seeds", cfg.seeds, "comma separated seeds (default: --seed)");
  sweep->add_option("--grid-anchors", cfg.grid_anchors,
                    "anchor counts crossed with the noise axis");

  CLI::App* audit = app.add_subcommand("audit", "finite difference audit of the loss gradient");
  add_common(audit, cfg);
  audit->add_option("--audit-instances", cfg.audit_instances, "number of random instances");
  audit->add_option("--audit-step", cfg.audit_step, "central difference step");
  audit->add_option("--audit-tolerance", cfg.audit_tolerance, "max allowed relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "config-error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) {
      const relbal::GenOutputs out = relbal::run_gen(cfg);
      std::cout << "wrote " << out.train_path << "\n"
                << "wrote " << out.test_path << "\n"
                << "wrote " << out.manifest_path << "\n";
    } else if (train->parsed()) {
      const relbal::TrainOutputs out = relbal::run_train(cfg);
      std::cout << "wrote " << out.checkpoint_path << "\n"
                << "wrote " << out.log_path << "\n"
                << "wrote " << out.metrics_path << "\n";
      std::printf("heldout accuracy %.4f\n", out.report.accuracy);
    } else if (eval->parsed()) {
      const relbal::EvalOutputs out = relbal::run_eval(cfg);
      std::cout << "wrote " << out.metrics_path << "\n";
      if (!out.records_path.empty()) std::cout << "wrote " << out.records_path << "\n";
      std::printf("accuracy %.4f\n", out.report.accuracy);
    } else if (sweep->parsed()) {
      const relbal::SweepOutputs out = relbal::run_sweep(cfg);
      std::size_t failures = 0;
      for (const relbal::SweepRow& row : out.rows)
        if (row.status != "ok") ++failures;
      std::cout << "wrote " << out.results_path << " (" << out.rows.size() << " rows, "
                << failures << " failed)\n"
                << "wrote " << out.summary_path << "\n";
    } else if (audit->parsed()) {
      const relbal::AuditSummary out = relbal::run_audit(cfg);
      for (const relbal::AuditInstance& inst : out.instances)
        std::printf("%-14s max rel err %.3e  %s\n", inst.variant.c_str(),
                    inst.report.max_rel_err, inst.report.pass ? "ok" : "FAIL");
      if (!out.pass) {
        std::cerr << "audit-failure: max rel err " << out.max_rel_err << " at " << out.worst
                  << "\n";
        return 1;
      }
      std::printf("audit passed: %zu instances, max rel err %.3e\n", out.instances.size(),
                  out.max_rel_err);
    }
  } catch (const relbal::Error& e) {
    std::cerr << e.line() << "\n";
    return 1;
  }
  return 0;
}
