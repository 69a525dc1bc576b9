#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "relbal/dataset.hpp"
#include "relbal/error.hpp"
#include "relbal/head.hpp"
#include "relbal/loss.hpp"
#include "relbal/rng.hpp"

namespace relbal {

struct TrainConfig {
  HeadConfig head;
  std::size_t epochs = 1000;
  double base_lr = 3e-4;
  double lr_decay = 0.995;  // per-epoch exponential factor
  std::size_t batch_size = 64;
  LossWeights weights;
  double smoothing_term = 0.0;  // label-smoothing term s (percent scale)
  std::size_t per_group = 512;  // refinement stage-1 group cap
  std::size_t per_class = 500;  // refinement stage-2 class quota
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;  // 0 = evaluate only after the last epoch
  double clip_norm = 0.0;      // 0 = no gradient clipping

  void validate() const {
    head.validate();
    weights.validate();
    if (!(base_lr > 0.0)) fail(ErrorKind::config, "base lr must be > 0");
    if (!(lr_decay > 0.0) || lr_decay > 1.0) fail(ErrorKind::config, "lr decay must be in (0,1]");
    if (batch_size == 0) fail(ErrorKind::config, "batch size must be >= 1");
    if (per_group == 0 || per_class == 0) fail(ErrorKind::config, "refinement counts must be >= 1");
    if (smoothing_term < 0.0 || smoothing_term >= 100.0)
      fail(ErrorKind::config, "smoothing term must be in [0,100)");
    if (clip_norm < 0.0) fail(ErrorKind::config, "clip norm must be >= 0");
  }
};

inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.base_lr * std::pow(cfg.lr_decay, static_cast<double>(epoch));
}

struct OptimizerState {
  std::vector<double> m, v;  // first/second moments, flat parameter layout
  std::size_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Standard bias-corrected Adam over the flat parameter layout.
inline void adam_step(HeadParameters& params, const std::vector<double>& grad,
                      OptimizerState& opt, double lr) {
  const std::size_t n = params.parameter_count();
  if (grad.size() != n) fail(ErrorKind::shape, "adam_step: gradient length mismatch");
  if (opt.m.empty()) {
    opt.m.assign(n, 0.0);
    opt.v.assign(n, 0.0);
  }
  if (opt.m.size() != n || opt.v.size() != n)
    fail(ErrorKind::shape, "adam_step: optimizer state length mismatch");
  ++opt.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  std::size_t off = 0;
  params.for_each_parameter([&](const std::string&, Matrix& mat) {
    for (double& w : mat.data) {
      const double g = grad[off];
      double& m1 = opt.m[off];
      double& m2 = opt.v[off];
      m1 = opt.beta1 * m1 + (1.0 - opt.beta1) * g;
      m2 = opt.beta2 * m2 + (1.0 - opt.beta2) * g * g;
      w -= lr * (m1 / bc1) / (std::sqrt(m2 / bc2) + opt.eps);
      ++off;
    }
  });
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double cls = 0.0, anchor = 0.0, center = 0.0, total = 0.0;  // sample-weighted epoch means
  double eval_accuracy = -1.0;  // -1 when not evaluated this epoch
  bool has_eval = false;
};

struct TrainResult {
  HeadParameters params;
  std::vector<EpochRecord> history;
};

inline double evaluate_accuracy(const HeadParameters& params, const Dataset& ds) {
  const std::vector<PredictionRecord> recs = predict_rows(params, [&] {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return ds.gather(all);
  }());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (recs[i].predicted == ds.samples[i].label) ++correct;
  return ds.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(ds.size());
}

// One deterministic training run. Per epoch: draw the refined epoch set,
// shuffle it (the sampler emits class-ordered samples; batch norm needs
// mixed batches), walk minibatches with Adam at lr_at(epoch), and fold
// each batch's batch-norm statistics into the running estimates.
inline TrainResult train(const Dataset& ds_train, const Dataset& ds_eval, const TrainConfig& cfg) {
  cfg.validate();
  ds_train.validate();
  ds_eval.validate();
  if (ds_train.num_classes != ds_eval.num_classes || ds_train.dim != ds_eval.dim)
    fail(ErrorKind::incompatible, "train/eval datasets disagree on N or d");
  if (ds_train.num_classes != cfg.head.num_classes)
    fail(ErrorKind::incompatible, "dataset classes != head classes");
  if (ds_train.dim != cfg.head.input_dim)
    fail(ErrorKind::incompatible, "dataset dim != head input dim");

  Rng root(cfg.seed);
  Rng init_rng = root.split(1);
  TrainResult result;
  result.params = init_head(cfg.head, init_rng);
  OptimizerState opt;

  const std::size_t n_classes = cfg.head.num_classes;
  std::vector<std::vector<double>> smoothed_targets(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c)
    smoothed_targets[c] = smooth_labels(one_hot(c, n_classes), cfg.smoothing_term);

  const double momentum = cfg.head.bn_momentum;
  auto fold_running = [&](Matrix& running, const Matrix& batch) {
    for (std::size_t i = 0; i < running.data.size(); ++i)
      running.data[i] = momentum * running.data[i] + (1.0 - momentum) * batch.data[i];
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = root.split(2 + epoch);
    const Dataset epoch_set = refine_batch(ds_train, cfg.per_group, cfg.per_class, erng);
    std::vector<std::size_t> order(epoch_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(erng.next_below(i))]);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, cfg);
    double total_samples = 0.0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::size_t bs = end - start;
      Batch batch;
      batch.x = Matrix(bs, epoch_set.dim);
      batch.y = Matrix(bs, n_classes);
      batch.labels.resize(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        const Sample& s = epoch_set.samples[order[start + i]];
        std::copy(s.embedding.begin(), s.embedding.end(), batch.x.row(i));
        const auto& tgt = smoothed_targets[static_cast<std::size_t>(s.label)];
        std::copy(tgt.begin(), tgt.end(), batch.y.row(i));
        batch.labels[i] = s.label;
      }

      LossReport report = total_loss(batch, result.params, cfg.weights, Mode::train, erng);
      if (cfg.clip_norm > 0.0) {
        double norm2 = 0.0;
        for (double g : report.gradient) norm2 += g * g;
        const double norm = std::sqrt(norm2);
        if (norm > cfg.clip_norm) {
          const double s = cfg.clip_norm / norm;
          for (double& g : report.gradient) g *= s;
        }
      }
      adam_step(result.params, report.gradient, opt, rec.lr);
      fold_running(result.params.bn1_mean, report.bn.mean1);
      fold_running(result.params.bn1_var, report.bn.var1);
      fold_running(result.params.bn2_mean, report.bn.mean2);
      fold_running(result.params.bn2_var, report.bn.var2);

      const double w = static_cast<double>(bs);
      rec.cls += w * report.cls;
      rec.anchor += w * report.anchor;
      rec.center += w * report.center;
      rec.total += w * report.total;
      total_samples += w;
    }
    if (total_samples > 0.0) {
      rec.cls /= total_samples;
      rec.anchor /= total_samples;
      rec.center /= total_samples;
      rec.total /= total_samples;
    }

    const bool last = epoch + 1 == cfg.epochs;
    if (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0)) {
      rec.eval_accuracy = evaluate_accuracy(result.params, ds_eval);
      rec.has_eval = true;
    }
    result.history.push_back(rec);
  }
  return result;
}

// --- finite-difference gradient audit ----------------------------------

struct AuditReport {
  double max_rel_err = 0.0;
  std::string worst_parameter;   // e.g. "w2[123]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  std::size_t failures = 0;  // coordinates exceeding tolerance
  bool pass = false;
};

// Central finite differences per coordinate against the analytic
// gradient. The dropout rng is restarted identically for every probe, so
// all evaluations see the same masks. Relative error uses
// |a-n| / max(|a|,|n|,1e-3): the floor keeps coordinates that are tiny
// relative to the loss scale from amplifying fp noise in the quotient.
inline AuditReport finite_difference_audit(HeadParameters& params, const Batch& batch,
                                           const LossWeights& weights, double step,
                                           double tolerance,
                                           std::uint64_t mask_seed = 0xD15EEDULL) {
  AuditReport report;
  Rng base_rng(mask_seed);
  Rng rng0 = base_rng;
  const LossReport analytic = total_loss(batch, params, weights, Mode::train, rng0);

  std::size_t off = 0;
  params.for_each_parameter([&](const std::string& name, Matrix& mat) {
    for (std::size_t i = 0; i < mat.data.size(); ++i, ++off) {
      const double saved = mat.data[i];
      Rng rp = base_rng;
      mat.data[i] = saved + step;
      const double up = total_loss(batch, params, weights, Mode::train, rp).total;
      Rng rm = base_rng;
      mat.data[i] = saved - step;
      const double down = total_loss(batch, params, weights, Mode::train, rm).total;
      mat.data[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.gradient[off];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_parameter = name + "[" + std::to_string(i) + "]";
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
      if (rel >= tolerance) ++report.failures;
      ++report.coordinates;
    }
  });
  report.pass = report.failures == 0;
  return report;
}

}  // namespace relbal
