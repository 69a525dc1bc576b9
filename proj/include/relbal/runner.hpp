#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "relbal/checkpoint.hpp"
#include "relbal/config.hpp"
#include "relbal/dataset.hpp"
#include "relbal/error.hpp"
#include "relbal/head.hpp"
#include "relbal/metrics.hpp"
#include "relbal/train.hpp"

namespace relbal {

namespace fs = std::filesystem;
using nlohmann::json;

// Output directory: explicit `out` key, else $RELBAL_OUT_ROOT/<command>,
// else ./runs/<command>. Never timestamped — reruns overwrite in place
// so identical configs produce identical trees.
inline std::string resolve_out_dir(const RunConfig& cfg, const std::string& command) {
  fs::path dir;
  if (!cfg.out.empty()) {
    dir = cfg.out;
  } else if (const char* root = std::getenv("RELBAL_OUT_ROOT"); root && *root) {
    dir = fs::path(root) / command;
  } else {
    dir = fs::path("runs") / command;
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create output directory " + dir.string());
  return dir.string();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);  // binary: no newline translation, byte-stable
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << content;
  if (!out) fail(ErrorKind::io, "short write to " + path);
}

inline json metrics_to_json(const MetricsReport& rep) {
  json j;
  j["accuracy"] = rep.accuracy;
  j["precision"] = rep.precision;
  j["recall"] = rep.recall;
  j["f1"] = rep.f1;
  json confusion = json::array();
  for (std::size_t r = 0; r < rep.confusion.rows; ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < rep.confusion.cols; ++c)
      row.push_back(static_cast<long long>(rep.confusion.at(r, c)));
    confusion.push_back(row);
  }
  j["confusion"] = confusion;
  if (rep.has_cluster_scores) {
    j["davies_bouldin"] = rep.davies_bouldin;
    j["calinski_harabasz"] = rep.calinski_harabasz;
  } else {
    j["davies_bouldin"] = nullptr;
    j["calinski_harabasz"] = nullptr;
  }
  j["primary_std"] = rep.stability.primary_std;
  j["corrected_std"] = rep.stability.corrected_std;
  j["mean_primary_confidence"] = rep.stability.mean_primary_confidence;
  j["mean_corrected_confidence"] = rep.stability.mean_corrected_confidence;
  return j;
}

// --- gen ---------------------------------------------------------------

struct GenOutputs {
  std::string dir, train_path, test_path, manifest_path;
};

inline GenOutputs run_gen(const RunConfig& cfg) {
  if (cfg.format != "text" && cfg.format != "binary")
    fail(ErrorKind::config, "format must be 'text' or 'binary'");
  if (cfg.test_per_class == 0) fail(ErrorKind::config, "test-per-class must be >= 1");

  SyntheticSpec spec;
  spec.num_classes = cfg.classes;
  spec.dim = cfg.dim;
  spec.samples_per_class = cfg.samples_per_class + cfg.test_per_class;
  spec.cluster_spread = cfg.sigma;
  spec.mean_separation = cfg.separation;
  spec.seed = cfg.seed;
  const Dataset full = generate_synthetic(spec);

  // generate_synthetic emits class-major blocks; the first
  // samples_per_class of each block form the train split, the rest the
  // test split (iid within a class, so the split is unbiased).
  Dataset train_ds, test_ds;
  train_ds.num_classes = test_ds.num_classes = cfg.classes;
  train_ds.dim = test_ds.dim = cfg.dim;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    const std::size_t base = c * spec.samples_per_class;
    for (std::size_t i = 0; i < cfg.samples_per_class; ++i)
      train_ds.samples.push_back(full.samples[base + i]);
    for (std::size_t i = 0; i < cfg.test_per_class; ++i)
      test_ds.samples.push_back(full.samples[base + cfg.samples_per_class + i]);
  }

  GenOutputs out;
  out.dir = resolve_out_dir(cfg, "gen");
  const std::string ext = cfg.format == "binary" ? ".bin" : ".txt";
  out.train_path = (fs::path(out.dir) / ("train" + ext)).string();
  out.test_path = (fs::path(out.dir) / ("test" + ext)).string();
  save_dataset(train_ds, out.train_path);
  save_dataset(test_ds, out.test_path);

  json manifest;
  manifest["classes"] = cfg.classes;
  manifest["dim"] = cfg.dim;
  manifest["seed"] = cfg.seed;
  manifest["samples_per_class"] = cfg.samples_per_class;
  manifest["test_per_class"] = cfg.test_per_class;
  manifest["sigma"] = cfg.sigma;
  manifest["separation"] = cfg.separation;
  manifest["train"] = "train" + ext;  // relative to the manifest's directory
  manifest["test"] = "test" + ext;
  manifest["checksums"] = {{"train", file_checksum(out.train_path)},
                           {"test", file_checksum(out.test_path)}};
  out.manifest_path = (fs::path(out.dir) / "manifest.json").string();
  write_text_file(out.manifest_path, manifest.dump(2) + "\n");
  write_text_file((fs::path(out.dir) / "resolved-config.txt").string(), serialize_config(cfg));
  return out;
}

// --- train ---------------------------------------------------------------

struct TrainOutputs {
  std::string dir, checkpoint_path, log_path, metrics_path, config_path;
  TrainResult result;
  MetricsReport report;
};

inline std::pair<Dataset, Dataset> load_train_eval(const RunConfig& cfg) {
  std::string train_path = cfg.train_path, eval_path = cfg.eval_path;
  if (!cfg.manifest_path.empty()) {
    std::ifstream in(cfg.manifest_path);
    if (!in) fail(ErrorKind::io, "cannot read manifest " + cfg.manifest_path);
    json manifest;
    try {
      in >> manifest;
    } catch (const json::exception& e) {
      fail(ErrorKind::parse, cfg.manifest_path + ": " + e.what());
    }
    if (!manifest.contains("train") || !manifest.contains("test"))
      fail(ErrorKind::parse, cfg.manifest_path + ": manifest needs 'train' and 'test' keys");
    const fs::path base = fs::path(cfg.manifest_path).parent_path();
    auto resolve = [&](const std::string& p) {
      return fs::path(p).is_absolute() ? p : (base / p).string();
    };
    if (train_path.empty()) train_path = resolve(manifest["train"].get<std::string>());
    if (eval_path.empty()) eval_path = resolve(manifest["test"].get<std::string>());
  }
  if (train_path.empty() || eval_path.empty())
    fail(ErrorKind::config, "need train/eval dataset paths (or a manifest)");
  return {load_dataset(train_path), load_dataset(eval_path)};
}

inline TrainConfig make_train_config(const RunConfig& cfg, const Dataset& train_ds) {
  TrainConfig tc;
  tc.head.input_dim = train_ds.dim;
  tc.head.reduced_dim = cfg.reduced_dim == 0 ? train_ds.dim : cfg.reduced_dim;
  tc.head.num_classes = train_ds.num_classes;
  tc.head.anchors_per_class = cfg.anchors;
  tc.head.tokens = cfg.tokens;
  tc.head.heads = cfg.heads;
  tc.head.delta = cfg.delta;
  tc.head.hidden = cfg.hidden;
  tc.epochs = cfg.epochs;
  tc.base_lr = cfg.base_lr;
  tc.lr_decay = cfg.lr_decay;
  tc.batch_size = cfg.batch_size;
  tc.weights = {cfg.lambda_cls, cfg.lambda_a, cfg.lambda_c};
  tc.smoothing_term = cfg.smoothing;
  tc.per_group = cfg.group_cap;
  tc.per_class = cfg.class_quota;
  tc.seed = cfg.seed;
  tc.eval_every = cfg.eval_every;
  tc.clip_norm = cfg.clip_norm;
  return tc;
}

inline MetricsReport evaluate_params(const HeadParameters& params, const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Matrix prelogit;
  const std::vector<PredictionRecord> records = predict_rows(params, ds.gather(all), &prelogit);
  std::vector<int> truth(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) truth[i] = ds.samples[i].label;
  return compute_metrics(records, truth, ds.num_classes, prelogit);
}

inline TrainOutputs run_train(const RunConfig& cfg) {
  if (cfg.noise < 0.0 || cfg.noise > 100.0)
    fail(ErrorKind::config, "noise level must be in [0,100]");
  auto [train_ds, eval_ds] = load_train_eval(cfg);
  if (cfg.noise > 0.0) {
    Rng noise_rng = Rng(cfg.seed).split(17);
    train_ds = inject_label_noise(train_ds, cfg.noise / 100.0, noise_rng);
  }
  const TrainConfig tc = make_train_config(cfg, train_ds);

  TrainOutputs out;
  out.dir = resolve_out_dir(cfg, "train");
  out.config_path = (fs::path(out.dir) / "resolved-config.txt").string();
  write_text_file(out.config_path, serialize_config(cfg));

  out.result = train(train_ds, eval_ds, tc);

  out.checkpoint_path = (fs::path(out.dir) / "checkpoint.bin").string();
  save_checkpoint(out.result.params, out.checkpoint_path);

  std::string log;
  for (const EpochRecord& r : out.result.history) {
    json line;
    line["epoch"] = r.epoch;
    line["lr"] = r.lr;
    line["loss_cls"] = r.cls;
    line["loss_anchor"] = r.anchor;
    line["loss_center"] = r.center;
    line["loss_total"] = r.total;
    if (r.has_eval)
      line["eval_accuracy"] = r.eval_accuracy;
    else
      line["eval_accuracy"] = nullptr;
    log += line.dump() + "\n";
  }
  out.log_path = (fs::path(out.dir) / "train-log.jsonl").string();
  write_text_file(out.log_path, log);

  out.report = evaluate_params(out.result.params, eval_ds);
  out.metrics_path = (fs::path(out.dir) / "metrics.json").string();
  write_text_file(out.metrics_path, metrics_to_json(out.report).dump(2) + "\n");
  return out;
}

// --- eval ----------------------------------------------------------------

struct EvalOutputs {
  std::string dir, metrics_path, records_path;
  MetricsReport report;
};

inline json record_to_json(const PredictionRecord& rec, int label) {
  json j;
  j["primary"] = rec.primary;
  if (rec.anchor_term.empty())
    j["anchor_term"] = nullptr;
  else
    j["anchor_term"] = rec.anchor_term;
  j["attentive_term"] = rec.attentive_term;
  j["fused"] = rec.fused;
  j["final"] = rec.final;
  j["c_l"] = rec.c_l;
  j["c_g"] = rec.c_g;
  j["c_a"] = rec.c_a;
  j["c_t"] = rec.c_t;
  j["predicted"] = rec.predicted;
  j["label"] = label;
  return j;
}

inline EvalOutputs run_eval(const RunConfig& cfg) {
  if (cfg.checkpoint_path.empty()) fail(ErrorKind::config, "eval needs a checkpoint path");
  if (cfg.data_path.empty()) fail(ErrorKind::config, "eval needs a data path");
  const HeadParameters params = load_checkpoint(cfg.checkpoint_path);
  const Dataset ds = load_dataset(cfg.data_path);
  if (ds.num_classes != params.cfg.num_classes)
    fail(ErrorKind::incompatible, "dataset has " + std::to_string(ds.num_classes) +
                                      " classes, checkpoint expects " +
                                      std::to_string(params.cfg.num_classes));
  if (ds.dim != params.cfg.input_dim)
    fail(ErrorKind::incompatible, "dataset dim " + std::to_string(ds.dim) +
                                      ", checkpoint expects " +
                                      std::to_string(params.cfg.input_dim));

  EvalOutputs out;
  out.dir = resolve_out_dir(cfg, "eval");
  write_text_file((fs::path(out.dir) / "resolved-config.txt").string(), serialize_config(cfg));

  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Matrix prelogit;
  const std::vector<PredictionRecord> records = predict_rows(params, ds.gather(all), &prelogit);
  std::vector<int> truth(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) truth[i] = ds.samples[i].label;
  out.report = compute_metrics(records, truth, ds.num_classes, prelogit);

  out.metrics_path = (fs::path(out.dir) / "metrics.json").string();
  write_text_file(out.metrics_path, metrics_to_json(out.report).dump(2) + "\n");
  if (cfg.dump_records) {
    std::string lines;
    for (std::size_t i = 0; i < records.size(); ++i)
      lines += record_to_json(records[i], truth[i]).dump() + "\n";
    out.records_path = (fs::path(out.dir) / "records.jsonl").string();
    write_text_file(out.records_path, lines);
  }
  return out;
}

// --- sweep -----------------------------------------------------------------

struct SweepRow {
  std::string axis;
  double value = 0.0;
  std::size_t anchors = 0;
  double noise = 0.0, smoothing = 0.0, lambda_a = 0.0;
  std::uint64_t seed = 0;
  std::string status;  // "ok" or an error class
  MetricsReport report;
};

struct SweepOutputs {
  std::string dir, results_path, summary_path;
  std::vector<SweepRow> rows;
};

inline SweepOutputs run_sweep(const RunConfig& cfg) {
  const std::vector<std::string> axes = {"anchors", "noise", "smoothing", "lambda-a"};
  if (std::find(axes.begin(), axes.end(), cfg.axis) == axes.end())
    fail(ErrorKind::config, "axis must be one of anchors|noise|smoothing|lambda-a");
  const std::vector<double> values = parse_value_list("values", cfg.values);
  if (values.empty()) fail(ErrorKind::config, "sweep needs a nonempty values list");
  std::vector<std::uint64_t> seeds = parse_seed_list(cfg.seeds);
  if (seeds.empty()) seeds = {cfg.seed};

  // The noise sweep crosses the noise levels with a K grid, mirroring
  // the paper table it reproduces; other axes are one-dimensional.
  std::vector<std::size_t> k_grid = {cfg.anchors};
  if (cfg.axis == "noise") {
    k_grid.clear();
    for (double k : parse_value_list("grid-anchors", cfg.grid_anchors))
      k_grid.push_back(static_cast<std::size_t>(k));
    if (k_grid.empty()) fail(ErrorKind::config, "noise sweep needs a nonempty grid-anchors list");
  }

  SweepOutputs out;
  out.dir = resolve_out_dir(cfg, "sweep");
  write_text_file((fs::path(out.dir) / "resolved-config.txt").string(), serialize_config(cfg));

  for (double value : values) {
    for (std::size_t k : k_grid) {
      for (std::uint64_t seed : seeds) {
        RunConfig cell = cfg;
        cell.seed = seed;
        cell.axis.clear();
        cell.anchors = k;
        if (cfg.axis == "anchors") {
          if (value < 0.0 || value != std::floor(value))
            fail(ErrorKind::config, "anchors values must be nonnegative integers");
          cell.anchors = static_cast<std::size_t>(value);
        } else if (cfg.axis == "noise") {
          cell.noise = value;
        } else if (cfg.axis == "smoothing") {
          cell.smoothing = value;
        } else {  // lambda-a: values are multipliers on the configured weight
          cell.lambda_a = cfg.lambda_a * value;
        }

        std::string name = cfg.axis + "-" + format_double(value);
        if (cfg.axis == "noise") name += "-k-" + std::to_string(k);
        name += "-seed-" + std::to_string(seed);
        cell.out = (fs::path(out.dir) / name).string();

        SweepRow row;
        row.axis = cfg.axis;
        row.value = value;
        row.anchors = cell.anchors;
        row.noise = cell.noise;
        row.smoothing = cell.smoothing;
        row.lambda_a = cell.lambda_a;
        row.seed = seed;
        try {
          row.report = run_train(cell).report;
          row.status = "ok";
        } catch (const Error& e) {
          row.status = to_string(e.kind());
        }
        out.rows.push_back(std::move(row));
      }
    }
  }

  std::string results = "axis,value,anchors,noise,smoothing,lambda_a,seed,status,accuracy,"
                        "precision,recall,f1,davies_bouldin,calinski_harabasz,primary_std,"
                        "corrected_std\n";
  for (const SweepRow& r : out.rows) {
    results += r.axis + "," + format_double(r.value) + "," + std::to_string(r.anchors) + "," +
               format_double(r.noise) + "," + format_double(r.smoothing) + "," +
               format_double(r.lambda_a) + "," + std::to_string(r.seed) + "," + r.status;
    if (r.status == "ok") {
      results += "," + format_double(r.report.accuracy) + "," + format_double(r.report.precision) +
                 "," + format_double(r.report.recall) + "," + format_double(r.report.f1);
      if (r.report.has_cluster_scores)
        results += "," + format_double(r.report.davies_bouldin) + "," +
                   format_double(r.report.calinski_harabasz);
      else
        results += ",,";
      results += "," + format_double(r.report.stability.primary_std) + "," +
                 format_double(r.report.stability.corrected_std);
    } else {
      results += ",,,,,,,,";
    }
    results += "\n";
  }
  out.results_path = (fs::path(out.dir) / "results.csv").string();
  write_text_file(out.results_path, results);

  // Per-cell summary over seeds (population variance; failed runs are
  // counted but excluded from the moments).
  std::string summary =
      "axis,value,anchors,noise,smoothing,lambda_a,runs,failures,accuracy_mean,accuracy_var,"
      "precision_mean,recall_mean,f1_mean\n";
  for (double value : values) {
    for (std::size_t k : k_grid) {
      std::vector<const SweepRow*> cell;
      for (const SweepRow& r : out.rows)
        if (r.value == value && (cfg.axis != "noise" || r.anchors == k)) cell.push_back(&r);
      if (cell.empty()) continue;
      double acc_sum = 0.0, acc_sq = 0.0, prec = 0.0, rec = 0.0, f1 = 0.0;
      std::size_t ok = 0, failures = 0;
      for (const SweepRow* r : cell) {
        if (r->status == "ok") {
          acc_sum += r->report.accuracy;
          acc_sq += r->report.accuracy * r->report.accuracy;
          prec += r->report.precision;
          rec += r->report.recall;
          f1 += r->report.f1;
          ++ok;
        } else {
          ++failures;
        }
      }
      const SweepRow* first = cell.front();
      summary += cfg.axis + "," + format_double(value) + "," + std::to_string(first->anchors) +
                 "," + format_double(first->noise) + "," + format_double(first->smoothing) + "," +
                 format_double(first->lambda_a) + "," + std::to_string(cell.size()) + "," +
                 std::to_string(failures);
      if (ok > 0) {
        const double mean = acc_sum / static_cast<double>(ok);
        const double var = std::max(0.0, acc_sq / static_cast<double>(ok) - mean * mean);
        summary += "," + format_double(mean) + "," + format_double(var) + "," +
                   format_double(prec / static_cast<double>(ok)) + "," +
                   format_double(rec / static_cast<double>(ok)) + "," +
                   format_double(f1 / static_cast<double>(ok));
      } else {
        summary += ",,,,,";
      }
      summary += "\n";
      if (cfg.axis != "noise") break;  // k_grid only spans cells for the noise axis
    }
  }
  out.summary_path = (fs::path(out.dir) / "summary.csv").string();
  write_text_file(out.summary_path, summary);
  return out;
}

// --- audit -------------------------------------------------------------------

struct AuditInstance {
  std::string variant;
  AuditReport report;
};

struct AuditSummary {
  std::vector<AuditInstance> instances;
  double max_rel_err = 0.0;
  std::string worst;  // "<variant> <parameter>"
  bool pass = true;
};

// Random small instances cycling through the edge configurations:
// the base shape, the anchor-free head, single-token attention, and an
// active reduction layer.
inline AuditSummary run_audit(const RunConfig& cfg) {
  AuditSummary summary;
  Rng root(cfg.seed);
  for (std::size_t i = 0; i < cfg.audit_instances; ++i) {
    HeadConfig hc;
    hc.num_classes = 3;
    hc.anchors_per_class = 2;
    hc.input_dim = 8;
    hc.reduced_dim = 8;
    hc.tokens = 2;
    hc.heads = 2;
    hc.hidden = 16;
    std::string variant = "base";
    switch (i % 4) {
      case 1:
        hc.anchors_per_class = 0;
        variant = "no-anchors";
        break;
      case 2:
        hc.tokens = 1;
        variant = "single-token";
        break;
      case 3:
        hc.input_dim = 12;
        variant = "with-reduction";
        break;
      default:
        break;
    }
    Rng rng = root.split(1000 + i);
    HeadParameters params = init_head(hc, rng);
    Batch batch;
    const std::size_t bs = 4;
    batch.x = Matrix(bs, hc.input_dim);
    for (double& v : batch.x.data) v = rng.next_gaussian();
    batch.y = Matrix(bs, hc.num_classes);
    batch.labels.resize(bs);
    for (std::size_t b = 0; b < bs; ++b) {
      batch.labels[b] = static_cast<int>(rng.next_below(hc.num_classes));
      batch.y.at(b, static_cast<std::size_t>(batch.labels[b])) = 1.0;
    }
    LossWeights weights;  // defaults: all three terms active
    AuditInstance inst;
    inst.variant = variant;
    inst.report = finite_difference_audit(params, batch, weights, cfg.audit_step,
                                          cfg.audit_tolerance, rng.next_u64());
    if (inst.report.max_rel_err > summary.max_rel_err) {
      summary.max_rel_err = inst.report.max_rel_err;
      summary.worst = variant + " " + inst.report.worst_parameter;
    }
    summary.pass = summary.pass && inst.report.pass;
    summary.instances.push_back(std::move(inst));
  }
  return summary;
}

}  // namespace relbal
