#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "relbal/error.hpp"
#include "relbal/head.hpp"
#include "relbal/matrix.hpp"

namespace relbal {

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& truth) {
  if (preds.size() != truth.size()) fail(ErrorKind::shape, "accuracy: length mismatch");
  if (preds.empty()) fail(ErrorKind::invalid_input, "accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == truth[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

// confusion[truth][predicted]; row sums are per-class sample counts.
inline Matrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& truth,
                               std::size_t num_classes) {
  if (preds.size() != truth.size()) fail(ErrorKind::shape, "confusion: length mismatch");
  Matrix m(num_classes, num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth[i] < 0 || preds[i] < 0 || static_cast<std::size_t>(truth[i]) >= num_classes ||
        static_cast<std::size_t>(preds[i]) >= num_classes)
      fail(ErrorKind::invalid_input, "confusion: label outside 0..N-1");
    m.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(preds[i])) += 1.0;
  }
  return m;
}

struct MacroPrf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Unweighted class means; empty denominators follow the 0/0 -> 0
// convention so small evaluations stay defined.
inline MacroPrf macro_prf(const Matrix& confusion) {
  if (confusion.rows == 0 || confusion.rows != confusion.cols)
    fail(ErrorKind::invalid_input, "macro_prf: confusion must be square and nonempty");
  const std::size_t n = confusion.rows;
  MacroPrf out;
  for (std::size_t c = 0; c < n; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row += confusion.at(c, j);
      col += confusion.at(j, c);
    }
    const double tp = confusion.at(c, c);
    const double precision = col > 0.0 ? tp / col : 0.0;
    const double recall = row > 0.0 ? tp / row : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    out.precision += precision;
    out.recall += recall;
    out.f1 += f1;
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.precision *= inv;
  out.recall *= inv;
  out.f1 *= inv;
  return out;
}

struct ClusterScores {
  double davies_bouldin = 0.0;
  double calinski_harabasz = 0.0;
};

// Standard definitions. Cluster spread sigma_i is the mean distance of
// members to their centroid; Davies-Bouldin averages each cluster's
// worst (sigma_i+sigma_j)/d(c_i,c_j); Calinski-Harabasz is the
// dof-normalized between/within dispersion ratio.
inline ClusterScores cluster_scores(const Matrix& points, const std::vector<int>& labels) {
  if (labels.size() != points.rows) fail(ErrorKind::shape, "cluster_scores: labels/points mismatch");
  if (points.rows == 0) fail(ErrorKind::invalid_input, "cluster_scores: empty input");
  int max_label = 0;
  for (int l : labels) {
    if (l < 0) fail(ErrorKind::invalid_input, "cluster_scores: negative label");
    max_label = std::max(max_label, l);
  }
  const std::size_t n_slots = static_cast<std::size_t>(max_label) + 1;
  std::vector<std::size_t> counts(n_slots, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < n_slots; ++c)
    if (counts[c] > 0) present.push_back(c);
  const std::size_t nc = present.size();
  const std::size_t n = points.rows;
  if (nc < 2) fail(ErrorKind::invalid_input, "cluster_scores: need >= 2 distinct classes");
  if (n == nc) fail(ErrorKind::invalid_input, "cluster_scores: need more points than clusters");

  const std::size_t d = points.cols;
  Matrix centroids(nc, d);
  std::vector<std::size_t> slot_to_idx(n_slots, 0);
  for (std::size_t i = 0; i < nc; ++i) slot_to_idx[present[i]] = i;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t ci = slot_to_idx[static_cast<std::size_t>(labels[r])];
    for (std::size_t c = 0; c < d; ++c) centroids.at(ci, c) += points.at(r, c);
  }
  for (std::size_t i = 0; i < nc; ++i) {
    const double inv = 1.0 / static_cast<double>(counts[present[i]]);
    for (std::size_t c = 0; c < d; ++c) centroids.at(i, c) *= inv;
  }

  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += points.at(r, c);
  for (double& v : mean) v /= static_cast<double>(n);

  std::vector<double> sigma(nc, 0.0);
  double within = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t ci = slot_to_idx[static_cast<std::size_t>(labels[r])];
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = points.at(r, c) - centroids.at(ci, c);
      sq += diff * diff;
    }
    within += sq;
    sigma[ci] += std::sqrt(sq);
  }
  for (std::size_t i = 0; i < nc; ++i) sigma[i] /= static_cast<double>(counts[present[i]]);

  double between = 0.0;
  for (std::size_t i = 0; i < nc; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = centroids.at(i, c) - mean[c];
      sq += diff * diff;
    }
    between += static_cast<double>(counts[present[i]]) * sq;
  }

  ClusterScores out;
  double db = 0.0;
  for (std::size_t i = 0; i < nc; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < nc; ++j) {
      if (i == j) continue;
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = centroids.at(i, c) - centroids.at(j, c);
        sq += diff * diff;
      }
      worst = std::max(worst, (sigma[i] + sigma[j]) / std::sqrt(sq));
    }
    db += worst;
  }
  out.davies_bouldin = db / static_cast<double>(nc);
  out.calinski_harabasz = (between / static_cast<double>(nc - 1)) /
                          (within / static_cast<double>(n - nc));
  return out;
}

struct StabilityStats {
  double primary_std = 0.0;
  double corrected_std = 0.0;
  double mean_primary_confidence = 0.0;
  double mean_corrected_confidence = 0.0;
};

// Population standard deviation over all probability entries pooled
// across records — once for the primary distributions, once for the
// final ones — plus the mean confidences of each.
inline StabilityStats stability_stats(const std::vector<PredictionRecord>& records) {
  if (records.empty()) fail(ErrorKind::invalid_input, "stability_stats: no records");
  auto pooled_std = [](const std::vector<PredictionRecord>& recs, bool primary) {
    double sum = 0.0, sumsq = 0.0;
    std::size_t n = 0;
    for (const PredictionRecord& r : recs) {
      const std::vector<double>& p = primary ? r.primary : r.final;
      for (double v : p) {
        sum += v;
        sumsq += v * v;
        ++n;
      }
    }
    const double m = sum / static_cast<double>(n);
    return std::sqrt(std::max(0.0, sumsq / static_cast<double>(n) - m * m));
  };
  StabilityStats out;
  out.primary_std = pooled_std(records, true);
  out.corrected_std = pooled_std(records, false);
  for (const PredictionRecord& r : records) {
    out.mean_primary_confidence += r.c_l;
    out.mean_corrected_confidence += confidence(r.final);
  }
  out.mean_primary_confidence /= static_cast<double>(records.size());
  out.mean_corrected_confidence /= static_cast<double>(records.size());
  return out;
}

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  Matrix confusion;
  double davies_bouldin = 0.0;
  double calinski_harabasz = 0.0;
  bool has_cluster_scores = false;
  StabilityStats stability;
};

// Full report for a labeled evaluation: classification metrics from the
// record predictions, cluster scores on the supplied representation
// (skipped when the label structure cannot support them), stability
// statistics from the distributions.
inline MetricsReport compute_metrics(const std::vector<PredictionRecord>& records,
                                     const std::vector<int>& truth, std::size_t num_classes,
                                     const Matrix& representation) {
  if (records.size() != truth.size()) fail(ErrorKind::shape, "compute_metrics: length mismatch");
  std::vector<int> preds(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) preds[i] = records[i].predicted;
  MetricsReport rep;
  rep.accuracy = accuracy(preds, truth);
  rep.confusion = confusion_matrix(preds, truth, num_classes);
  const MacroPrf prf = macro_prf(rep.confusion);
  rep.precision = prf.precision;
  rep.recall = prf.recall;
  rep.f1 = prf.f1;
  std::vector<int> distinct(truth);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() >= 2 && representation.rows == records.size() &&
      representation.rows > distinct.size()) {
    const ClusterScores cs = cluster_scores(representation, truth);
    rep.davies_bouldin = cs.davies_bouldin;
    rep.calinski_harabasz = cs.calinski_harabasz;
    rep.has_cluster_scores = true;
  }
  rep.stability = stability_stats(records);
  return rep;
}

}  // namespace relbal
