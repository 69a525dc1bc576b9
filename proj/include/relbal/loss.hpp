#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "relbal/error.hpp"
#include "relbal/head.hpp"
#include "relbal/matrix.hpp"
#include "relbal/tape.hpp"

namespace relbal {

struct LossWeights {
  double cls = 1.0;
  double anchor = 0.1;
  double center = 0.1;

  void validate() const {
    if (cls < 0.0 || anchor < 0.0 || center < 0.0)
      fail(ErrorKind::invalid_input, "loss weights must be nonnegative");
    if (cls == 0.0 && anchor == 0.0 && center == 0.0)
      fail(ErrorKind::invalid_input, "at least one loss weight must be positive");
  }
};

struct LossReport {
  double cls = 0.0;
  double anchor = 0.0;
  double center = 0.0;
  double total = 0.0;
  std::vector<double> gradient;  // flat, parameter-layout order; empty in eval mode
  bool anchor_warning = false;   // fewer than 2 anchors: anchor term forced to 0
  BnBatchStats bn;               // batch statistics observed by this forward (train mode)
};

// Batch-mean negative log-likelihood between final distributions and
// (possibly smoothed) targets, with the floored log.
inline double class_distribution_loss(const Matrix& l_batch, const Matrix& targets) {
  if (l_batch.rows != targets.rows || l_batch.cols != targets.cols)
    fail(ErrorKind::shape, "class_distribution_loss: batch/target shape mismatch");
  if (l_batch.rows == 0) fail(ErrorKind::invalid_input, "class_distribution_loss: empty batch");
  double loss = 0.0;
  for (std::size_t i = 0; i < l_batch.data.size(); ++i)
    if (targets.data[i] != 0.0)
      loss -= targets.data[i] * std::log(std::max(l_batch.data[i], kLogFloor));
  return loss / static_cast<double>(l_batch.rows);
}

// Negated mean squared distance over ordered distinct anchor pairs;
// more negative = wider margins. With fewer than two anchors the term
// is 0 and the warning flag is set.
inline double anchor_loss(const Matrix& anchors, bool* warning = nullptr) {
  if (warning) *warning = false;
  if (anchors.rows < 2) {
    if (warning) *warning = true;
    return 0.0;
  }
  const std::size_t p = anchors.rows;
  double sq = 0.0, dot = 0.0;
  std::vector<double> colsum(anchors.cols, 0.0);
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < anchors.cols; ++c) {
      sq += anchors.at(r, c) * anchors.at(r, c);
      colsum[c] += anchors.at(r, c);
    }
  for (double s : colsum) dot += s * s;
  // sum over ordered distinct pairs of ||a_i - a_j||^2
  const double pair_sum = 2.0 * (static_cast<double>(p) * sq - dot);
  return -pair_sum / (static_cast<double>(p) * static_cast<double>(p - 1));
}

// Batch-mean squared distance from each embedding to the nearest anchor
// of its own class (ties to the lowest anchor index).
inline double center_loss(const Matrix& z, const std::vector<int>& labels, const Matrix& anchors,
                          std::size_t k_per_class) {
  if (k_per_class == 0) fail(ErrorKind::disabled_feature, "center loss needs anchors (K >= 1)");
  if (labels.size() != z.rows) fail(ErrorKind::shape, "center_loss: labels/batch mismatch");
  if (z.rows == 0) fail(ErrorKind::invalid_input, "center_loss: empty batch");
  double loss = 0.0;
  for (std::size_t b = 0; b < z.rows; ++b) {
    double best = 0.0;
    for (std::size_t k = 0; k < k_per_class; ++k) {
      const std::size_t row = static_cast<std::size_t>(labels[b]) * k_per_class + k;
      double s = 0.0;
      for (std::size_t c = 0; c < z.cols; ++c) {
        const double d = z.at(b, c) - anchors.at(row, c);
        s += d * d;
      }
      if (k == 0 || s < best) best = s;
    }
    loss += best;
  }
  return loss / static_cast<double>(z.rows);
}

struct Batch {
  Matrix x;                 // raw embeddings, one row per sample
  Matrix y;                 // target distributions, one row per sample
  std::vector<int> labels;  // hard labels (center-loss anchor selection)
};

// Full train-mode forward + all three losses + exact gradient of the
// weighted total with respect to every parameter. Pure in the
// parameters: batch-norm running stats are reported, not applied, and
// the only mutated argument is the rng (dropout draws). Eval mode
// computes the loss values on the deterministic path, with no gradient.
inline LossReport total_loss(const Batch& batch, const HeadParameters& params,
                             const LossWeights& weights, Mode mode, Rng& rng) {
  weights.validate();
  if (batch.x.rows == 0) fail(ErrorKind::invalid_input, "total_loss: empty batch");
  if (batch.y.rows != batch.x.rows || batch.labels.size() != batch.x.rows)
    fail(ErrorKind::shape, "total_loss: batch fields disagree on size");
  if (batch.y.cols != params.cfg.num_classes)
    fail(ErrorKind::shape, "total_loss: target width != class count");

  LossReport report;
  const bool with_anchors = params.cfg.anchors_per_class > 0;

  if (mode == Mode::eval) {
    const Matrix z = reduce_embeddings(params, batch.x);
    const std::vector<PredictionRecord> recs = predict_rows(params, batch.x);
    Matrix l_final(batch.x.rows, params.cfg.num_classes);
    for (std::size_t r = 0; r < recs.size(); ++r)
      for (std::size_t c = 0; c < l_final.cols; ++c) l_final.at(r, c) = recs[r].final[c];
    report.cls = class_distribution_loss(l_final, batch.y);
    report.anchor = with_anchors ? anchor_loss(params.anchors, &report.anchor_warning) : 0.0;
    report.center = with_anchors ? center_loss(z, batch.labels, params.anchors,
                                               params.cfg.anchors_per_class)
                                 : 0.0;
    report.total =
        weights.cls * report.cls + weights.anchor * report.anchor + weights.center * report.center;
    return report;
  }

  Tape tape;
  const ForwardGraph g = build_train_forward(tape, params, batch.x, rng);
  report.bn = g.bn;

  std::vector<Var> terms;
  std::vector<double> coeffs;
  const Var cls_var = tape.nll_mean(g.l_final, batch.y);
  terms.push_back(cls_var);
  coeffs.push_back(weights.cls);

  Var anchor_var = 0, center_var = 0;
  bool have_anchor_term = false, have_center_term = false;
  if (with_anchors) {
    if (params.anchors.rows >= 2) {
      anchor_var = tape.neg_mean_pairwise_sqdist(g.anchors);
      terms.push_back(anchor_var);
      coeffs.push_back(weights.anchor);
      have_anchor_term = true;
    } else {
      report.anchor_warning = true;
    }
    center_var = tape.min_sqdist_to_labeled(g.z, g.anchors, batch.labels,
                                            params.cfg.anchors_per_class);
    terms.push_back(center_var);
    coeffs.push_back(weights.center);
    have_center_term = true;
  }

  const Var total_var = tape.weighted_sum(terms, coeffs);
  tape.backward(total_var);

  report.cls = tape.value(cls_var).at(0, 0);
  report.anchor = have_anchor_term ? tape.value(anchor_var).at(0, 0) : 0.0;
  report.center = have_center_term ? tape.value(center_var).at(0, 0) : 0.0;
  report.total = tape.value(total_var).at(0, 0);

  report.gradient.reserve(params.parameter_count());
  for (const auto& [name, var] : g.params) {
    const Matrix& grad = tape.grad(var);
    report.gradient.insert(report.gradient.end(), grad.data.begin(), grad.data.end());
  }
  return report;
}

}  // namespace relbal
