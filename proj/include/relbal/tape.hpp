#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "relbal/error.hpp"
#include "relbal/matrix.hpp"
#include "relbal/rng.hpp"

namespace relbal {

// Reverse-mode gradient tape over Matrix values. Ops append nodes in
// topological order; backward() replays them in reverse. Gradients are
// dense and accumulated with +=, so a value used twice receives both
// contributions. The tape owns all values; Var is an index into it.
using Var = std::size_t;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix v) { return push(std::move(v), {}); }

  const Matrix& value(Var i) const { return vals_[i]; }
  const Matrix& grad(Var i) const { return grads_[i]; }

  // Seeds d(root)/d(root) = 1 (root must be scalar) and accumulates
  // gradients into every node reachable backward from it.
  void backward(Var root) {
    if (vals_[root].rows != 1 || vals_[root].cols != 1)
      fail(ErrorKind::shape, "backward root must be a 1x1 scalar");
    grads_[root].at(0, 0) = 1.0;
    for (std::size_t i = backs_.size(); i-- > 0;)
      if (backs_[i]) backs_[i]();
  }

  // --- elementwise / linear ops -------------------------------------

  Var matmul(Var a, Var b) {
    Matrix out = relbal::matmul(vals_[a], vals_[b]);
    return push(std::move(out), [this, a, b, o = next_index()] {
      accumulate(grads_[a], matmul_a_bt(grads_[o], vals_[b]));
      accumulate(grads_[b], matmul_at_b(vals_[a], grads_[o]));
    });
  }

  // bias is 1xn, broadcast over the rows of a.
  Var add_row(Var a, Var bias) {
    const Matrix& x = vals_[a];
    const Matrix& b = vals_[bias];
    if (b.rows != 1 || b.cols != x.cols)
      fail(ErrorKind::shape, "add_row: bias must be 1x" + std::to_string(x.cols));
    Matrix out = x;
    for (std::size_t r = 0; r < out.rows; ++r)
      for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) += b.at(0, c);
    return push(std::move(out), [this, a, bias, o = next_index()] {
      accumulate(grads_[a], grads_[o]);
      Matrix& gb = grads_[bias];
      const Matrix& go = grads_[o];
      for (std::size_t r = 0; r < go.rows; ++r)
        for (std::size_t c = 0; c < go.cols; ++c) gb.at(0, c) += go.at(r, c);
    });
  }

  Var relu(Var a) {
    Matrix out = vals_[a];
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), [this, a, o = next_index()] {
      const Matrix& x = vals_[a];
      for (std::size_t i = 0; i < x.data.size(); ++i)
        if (x.data[i] > 0.0) grads_[a].data[i] += grads_[o].data[i];
    });
  }

  Var scale(Var a, double s) {
    Matrix out = vals_[a];
    for (double& v : out.data) v *= s;
    return push(std::move(out), [this, a, s, o = next_index()] {
      for (std::size_t i = 0; i < grads_[o].data.size(); ++i)
        grads_[a].data[i] += s * grads_[o].data[i];
    });
  }

  // Inverted dropout: entries dropped with probability p, survivors
  // scaled by 1/(1-p). The mask is a pure function of the rng state, so
  // replaying with an identical rng reproduces it bit-exactly (the
  // finite-difference audit depends on this). p = 0 is the identity.
  Var dropout(Var a, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) fail(ErrorKind::invalid_input, "dropout: p must be in [0,1)");
    if (p == 0.0) return a;
    const Matrix& x = vals_[a];
    Matrix mask(x.rows, x.cols);
    const double keep_scale = 1.0 / (1.0 - p);
    for (double& m : mask.data) m = rng.next_double() < p ? 0.0 : keep_scale;
    Matrix out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
    return push(std::move(out), [this, a, mask = std::move(mask), o = next_index()] {
      for (std::size_t i = 0; i < mask.data.size(); ++i)
        grads_[a].data[i] += mask.data[i] * grads_[o].data[i];
    });
  }

  // Batch normalization over the rows of x (per-column statistics,
  // biased variance). gamma/beta are 1xn. Batch mean/var are exposed
  // through out_mean/out_var for the caller's running-statistics
  // update; the tape itself never touches running stats.
  Var batchnorm_train(Var x, Var gamma, Var beta, double eps, Matrix* out_mean = nullptr,
                      Matrix* out_var = nullptr) {
    const Matrix& xv = vals_[x];
    const std::size_t m = xv.rows, n = xv.cols;
    if (m == 0) fail(ErrorKind::invalid_input, "batchnorm: empty batch");
    Matrix mean(1, n), var(1, n), xhat(m, n), istd(1, n);
    for (std::size_t c = 0; c < n; ++c) {
      double mu = 0.0;
      for (std::size_t r = 0; r < m; ++r) mu += xv.at(r, c);
      mu /= static_cast<double>(m);
      double v = 0.0;
      for (std::size_t r = 0; r < m; ++r) {
        const double d = xv.at(r, c) - mu;
        v += d * d;
      }
      v /= static_cast<double>(m);
      mean.at(0, c) = mu;
      var.at(0, c) = v;
      istd.at(0, c) = 1.0 / std::sqrt(v + eps);
    }
    Matrix out(m, n);
    const Matrix& g = vals_[gamma];
    const Matrix& b = vals_[beta];
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        xhat.at(r, c) = (xv.at(r, c) - mean.at(0, c)) * istd.at(0, c);
        out.at(r, c) = g.at(0, c) * xhat.at(r, c) + b.at(0, c);
      }
    if (out_mean) *out_mean = mean;
    if (out_var) *out_var = var;
    return push(std::move(out), [this, x, gamma, beta, mean = std::move(mean),
                                 istd = std::move(istd), xhat = std::move(xhat),
                                 o = next_index()] {
      const Matrix& xv = vals_[x];
      const Matrix& go = grads_[o];
      const Matrix& g = vals_[gamma];
      const std::size_t m = xv.rows, n = xv.cols;
      const double dm = static_cast<double>(m);
      for (std::size_t c = 0; c < n; ++c) {
        double dgamma = 0.0, dbeta = 0.0, dvar = 0.0, dmu = 0.0;
        const double is = istd.at(0, c);
        for (std::size_t r = 0; r < m; ++r) {
          const double dy = go.at(r, c);
          dgamma += dy * xhat.at(r, c);
          dbeta += dy;
          const double dxhat = dy * g.at(0, c);
          dvar += dxhat * (xv.at(r, c) - mean.at(0, c));
          dmu += dxhat;
        }
        dvar *= -0.5 * is * is * is;
        dmu *= -is;  // the d(var)/d(mu) term vanishes: sum of centered values is 0
        grads_[gamma].at(0, c) += dgamma;
        grads_[beta].at(0, c) += dbeta;
        for (std::size_t r = 0; r < m; ++r) {
          const double dxhat = go.at(r, c) * g.at(0, c);
          grads_[x].at(r, c) +=
              dxhat * is + dvar * 2.0 * (xv.at(r, c) - mean.at(0, c)) / dm + dmu / dm;
        }
      }
    });
  }

  Var softmax_rows(Var a) {
    Matrix out = relbal::softmax_rows(vals_[a]);
    return push(std::move(out), [this, a, o = next_index()] {
      const Matrix& y = vals_[o];
      const Matrix& go = grads_[o];
      for (std::size_t r = 0; r < y.rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols; ++c) dot += go.at(r, c) * y.at(r, c);
        for (std::size_t c = 0; c < y.cols; ++c)
          grads_[a].at(r, c) += y.at(r, c) * (go.at(r, c) - dot);
      }
    });
  }

  // --- head-specific ops --------------------------------------------

  // Euclidean distances between every row of z (m x d) and every row of
  // points (P x d), giving an m x P table.
  Var pairwise_distance(Var z, Var points) {
    const Matrix& zv = vals_[z];
    const Matrix& pv = vals_[points];
    if (zv.cols != pv.cols) fail(ErrorKind::shape, "pairwise_distance: dim mismatch");
    Matrix out(zv.rows, pv.rows);
    for (std::size_t r = 0; r < zv.rows; ++r)
      for (std::size_t p = 0; p < pv.rows; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < zv.cols; ++c) {
          const double d = zv.at(r, c) - pv.at(p, c);
          s += d * d;
        }
        out.at(r, p) = std::sqrt(s);
      }
    return push(std::move(out), [this, z, points, o = next_index()] {
      const Matrix& zv = vals_[z];
      const Matrix& pv = vals_[points];
      const Matrix& dist = vals_[o];
      const Matrix& go = grads_[o];
      for (std::size_t r = 0; r < zv.rows; ++r)
        for (std::size_t p = 0; p < pv.rows; ++p) {
          const double g = go.at(r, p);
          if (g == 0.0) continue;
          // d sqrt at 0 is unbounded; the guard only matters on the
          // measure-zero event z == point.
          const double inv = g / std::max(dist.at(r, p), 1e-30);
          for (std::size_t c = 0; c < zv.cols; ++c) {
            const double diff = (zv.at(r, c) - pv.at(p, c)) * inv;
            grads_[z].at(r, c) += diff;
            grads_[points].at(p, c) -= diff;
          }
        }
    });
  }

  // Sums consecutive groups of `group` columns: m x (N*group) -> m x N.
  Var sum_col_groups(Var a, std::size_t group) {
    const Matrix& x = vals_[a];
    if (group == 0 || x.cols % group != 0)
      fail(ErrorKind::shape, "sum_col_groups: cols not divisible by group");
    Matrix out(x.rows, x.cols / group);
    out.fill(0.0);
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t c = 0; c < x.cols; ++c) out.at(r, c / group) += x.at(r, c);
    return push(std::move(out), [this, a, group, o = next_index()] {
      const Matrix& go = grads_[o];
      Matrix& ga = grads_[a];
      for (std::size_t r = 0; r < ga.rows; ++r)
        for (std::size_t c = 0; c < ga.cols; ++c) ga.at(r, c) += go.at(r, c / group);
    });
  }

  // Per-row confidence 1 - H(row)/log(N) for rows that are probability
  // vectors; m x N -> m x 1. Uses the floored log; the derivative of
  // p*log(max(p,floor)) is log(p)+1 above the floor and log(floor) at it.
  Var confidence_rows(Var a) {
    const Matrix& x = vals_[a];
    if (x.cols < 2) fail(ErrorKind::invalid_input, "confidence: need at least 2 classes");
    const double logn = std::log(static_cast<double>(x.cols));
    Matrix out(x.rows, 1);
    for (std::size_t r = 0; r < x.rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < x.cols; ++c) {
        const double p = x.at(r, c);
        if (p > 0.0) acc += p * std::log(std::max(p, kLogFloor));
      }
      out.at(r, 0) = 1.0 + acc / logn;
    }
    return push(std::move(out), [this, a, logn, o = next_index()] {
      const Matrix& x = vals_[a];
      const Matrix& go = grads_[o];
      for (std::size_t r = 0; r < x.rows; ++r) {
        const double g = go.at(r, 0) / logn;
        for (std::size_t c = 0; c < x.cols; ++c) {
          const double p = x.at(r, c);
          grads_[a].at(r, c) += g * (std::log(std::max(p, kLogFloor)) + (p > kLogFloor ? 1.0 : 0.0));
        }
      }
    });
  }

  // Row-wise confidence-weighted blend per Eq.-style fusion: for each
  // row b, out_b = (cx_b*x_b + cy_b*y_b)/(cx_b+cy_b); rows where the
  // weight sum is below 1e-12 fall back to the plain average (that
  // branch treats the weights as constants).
  Var fuse_rows(Var x, Var cx, Var y, Var cy) {
    const Matrix& xv = vals_[x];
    const Matrix& yv = vals_[y];
    require_same_shape(xv, yv, "fuse_rows");
    const Matrix& cxv = vals_[cx];
    const Matrix& cyv = vals_[cy];
    if (cxv.rows != xv.rows || cxv.cols != 1 || cyv.rows != xv.rows || cyv.cols != 1)
      fail(ErrorKind::shape, "fuse_rows: weights must be m x 1");
    Matrix out(xv.rows, xv.cols);
    for (std::size_t r = 0; r < xv.rows; ++r) {
      const double w = cxv.at(r, 0) + cyv.at(r, 0);
      if (w < 1e-12) {
        for (std::size_t c = 0; c < xv.cols; ++c)
          out.at(r, c) = 0.5 * (xv.at(r, c) + yv.at(r, c));
      } else {
        for (std::size_t c = 0; c < xv.cols; ++c)
          out.at(r, c) = (cxv.at(r, 0) * xv.at(r, c) + cyv.at(r, 0) * yv.at(r, c)) / w;
      }
    }
    return push(std::move(out), [this, x, cx, y, cy, o = next_index()] {
      const Matrix& xv = vals_[x];
      const Matrix& yv = vals_[y];
      const Matrix& cxv = vals_[cx];
      const Matrix& cyv = vals_[cy];
      const Matrix& ov = vals_[o];
      const Matrix& go = grads_[o];
      for (std::size_t r = 0; r < xv.rows; ++r) {
        const double w = cxv.at(r, 0) + cyv.at(r, 0);
        if (w < 1e-12) {
          for (std::size_t c = 0; c < xv.cols; ++c) {
            grads_[x].at(r, c) += 0.5 * go.at(r, c);
            grads_[y].at(r, c) += 0.5 * go.at(r, c);
          }
        } else {
          double dcx = 0.0, dcy = 0.0;
          for (std::size_t c = 0; c < xv.cols; ++c) {
            const double g = go.at(r, c);
            grads_[x].at(r, c) += g * cxv.at(r, 0) / w;
            grads_[y].at(r, c) += g * cyv.at(r, 0) / w;
            dcx += g * (xv.at(r, c) - ov.at(r, c)) / w;
            dcy += g * (yv.at(r, c) - ov.at(r, c)) / w;
          }
          grads_[cx].at(r, 0) += dcx;
          grads_[cy].at(r, 0) += dcy;
        }
      }
    });
  }

  // Batch-mean negative log-likelihood against constant targets:
  // -(1/m) sum_b sum_j y[b,j] log(max(p[b,j], floor)).
  Var nll_mean(Var p, Matrix targets) {
    const Matrix& pv = vals_[p];
    require_same_shape(pv, targets, "nll_mean");
    const double inv_m = 1.0 / static_cast<double>(pv.rows);
    double loss = 0.0;
    for (std::size_t i = 0; i < pv.data.size(); ++i)
      if (targets.data[i] != 0.0) loss -= targets.data[i] * std::log(std::max(pv.data[i], kLogFloor));
    Matrix out(1, 1);
    out.at(0, 0) = loss * inv_m;
    return push(std::move(out), [this, p, targets = std::move(targets), inv_m, o = next_index()] {
      const double g = grads_[o].at(0, 0) * inv_m;
      const Matrix& pv = vals_[p];
      for (std::size_t i = 0; i < pv.data.size(); ++i)
        if (targets.data[i] != 0.0 && pv.data[i] > kLogFloor)
          grads_[p].data[i] -= g * targets.data[i] / pv.data[i];
    });
  }

  // Negated mean squared distance over ordered distinct row pairs:
  // -(1/(P(P-1))) sum_{i != j} ||a_i - a_j||^2, computed through the
  // identity sum_{i != j} ||a_i-a_j||^2 = 2*(P*sum_i||a_i||^2 - ||sum_i a_i||^2).
  Var neg_mean_pairwise_sqdist(Var a) {
    const Matrix& av = vals_[a];
    const std::size_t p = av.rows;
    if (p < 2) fail(ErrorKind::invalid_input, "neg_mean_pairwise_sqdist: need >= 2 rows");
    std::vector<double> colsum(av.cols, 0.0);
    double sq = 0.0;
    for (std::size_t r = 0; r < p; ++r)
      for (std::size_t c = 0; c < av.cols; ++c) {
        sq += av.at(r, c) * av.at(r, c);
        colsum[c] += av.at(r, c);
      }
    double dot = 0.0;
    for (double s : colsum) dot += s * s;
    const double norm = 1.0 / (static_cast<double>(p) * static_cast<double>(p - 1));
    Matrix out(1, 1);
    out.at(0, 0) = -norm * 2.0 * (static_cast<double>(p) * sq - dot);
    return push(std::move(out),
                [this, a, colsum = std::move(colsum), norm, o = next_index()] {
                  // d/da_i = -norm * 4 * (P*a_i - colsum)
                  const double g = grads_[o].at(0, 0);
                  const Matrix& av = vals_[a];
                  const double dp = static_cast<double>(av.rows);
                  for (std::size_t r = 0; r < av.rows; ++r)
                    for (std::size_t c = 0; c < av.cols; ++c)
                      grads_[a].at(r, c) += g * (-norm * 4.0 * (dp * av.at(r, c) - colsum[c]));
                });
  }

  // Batch-mean of min_k ||z_b - points[labels[b]*K + k]||^2, ties broken
  // by lowest k; gradient flows only through the selected row.
  Var min_sqdist_to_labeled(Var z, Var points, std::vector<int> labels, std::size_t k_per_class) {
    const Matrix& zv = vals_[z];
    const Matrix& pv = vals_[points];
    if (k_per_class == 0) fail(ErrorKind::disabled_feature, "no anchors configured");
    if (labels.size() != zv.rows) fail(ErrorKind::shape, "labels/batch size mismatch");
    std::vector<std::size_t> chosen(zv.rows);
    double loss = 0.0;
    for (std::size_t b = 0; b < zv.rows; ++b) {
      double best = 0.0;
      std::size_t best_row = 0;
      for (std::size_t k = 0; k < k_per_class; ++k) {
        const std::size_t row = static_cast<std::size_t>(labels[b]) * k_per_class + k;
        double s = 0.0;
        for (std::size_t c = 0; c < zv.cols; ++c) {
          const double d = zv.at(b, c) - pv.at(row, c);
          s += d * d;
        }
        if (k == 0 || s < best) {
          best = s;
          best_row = row;
        }
      }
      chosen[b] = best_row;
      loss += best;
    }
    const double inv_m = 1.0 / static_cast<double>(zv.rows);
    Matrix out(1, 1);
    out.at(0, 0) = loss * inv_m;
    return push(std::move(out), [this, z, points, chosen = std::move(chosen), inv_m,
                                 o = next_index()] {
      const double g = grads_[o].at(0, 0) * inv_m;
      const Matrix& zv = vals_[z];
      const Matrix& pv = vals_[points];
      for (std::size_t b = 0; b < zv.rows; ++b) {
        const std::size_t row = chosen[b];
        for (std::size_t c = 0; c < zv.cols; ++c) {
          const double d = 2.0 * g * (zv.at(b, c) - pv.at(row, c));
          grads_[z].at(b, c) += d;
          grads_[points].at(row, c) -= d;
        }
      }
    });
  }

  // m x d -> (m*groups) x (d/groups); row-major data is unchanged, only
  // the shape: row b splits into `groups` consecutive token rows.
  Var split_rows(Var a, std::size_t groups) {
    const Matrix& x = vals_[a];
    if (groups == 0 || x.cols % groups != 0)
      fail(ErrorKind::config, "split_rows: cols not divisible by token count");
    Matrix out(x.rows * groups, x.cols / groups);
    out.data = x.data;
    return push(std::move(out), [this, a, o = next_index()] {
      for (std::size_t i = 0; i < grads_[a].data.size(); ++i)
        grads_[a].data[i] += grads_[o].data[i];
    });
  }

  // Mean over each consecutive block of `block` rows: (m*block) x n -> m x n.
  Var mean_row_blocks(Var a, std::size_t block) {
    const Matrix& x = vals_[a];
    if (block == 0 || x.rows % block != 0)
      fail(ErrorKind::shape, "mean_row_blocks: rows not divisible by block");
    Matrix out(x.rows / block, x.cols);
    out.fill(0.0);
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t c = 0; c < x.cols; ++c) out.at(r / block, c) += x.at(r, c);
    const double inv = 1.0 / static_cast<double>(block);
    for (double& v : out.data) v *= inv;
    return push(std::move(out), [this, a, block, inv, o = next_index()] {
      const Matrix& go = grads_[o];
      Matrix& ga = grads_[a];
      for (std::size_t r = 0; r < ga.rows; ++r)
        for (std::size_t c = 0; c < ga.cols; ++c) ga.at(r, c) += inv * go.at(r / block, c);
    });
  }

  Var hconcat(const std::vector<Var>& parts) {
    if (parts.empty()) fail(ErrorKind::invalid_input, "hconcat: empty");
    const std::size_t rows = vals_[parts[0]].rows;
    std::size_t cols = 0;
    for (Var p : parts) {
      if (vals_[p].rows != rows) fail(ErrorKind::shape, "hconcat: row mismatch");
      cols += vals_[p].cols;
    }
    Matrix out(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const Matrix& x = vals_[p];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) out.at(r, off + c) = x.at(r, c);
      off += x.cols;
    }
    return push(std::move(out), [this, parts, o = next_index()] {
      const Matrix& go = grads_[o];
      std::size_t off = 0;
      for (Var p : parts) {
        Matrix& gp = grads_[p];
        for (std::size_t r = 0; r < gp.rows; ++r)
          for (std::size_t c = 0; c < gp.cols; ++c) gp.at(r, c) += go.at(r, off + c);
        off += gp.cols;
      }
    });
  }

  // Scaled-dot-product attention applied independently to each block of
  // `block` consecutive rows (one block per sample): within a block,
  // out = softmax(Q K^T * scale) V. Q, K, V are (m*block) x p.
  Var block_attention(Var q, Var k, Var v, std::size_t block, double scale) {
    const Matrix& qv = vals_[q];
    const Matrix& kv = vals_[k];
    const Matrix& vv = vals_[v];
    require_same_shape(qv, kv, "block_attention q/k");
    require_same_shape(qv, vv, "block_attention q/v");
    if (block == 0 || qv.rows % block != 0)
      fail(ErrorKind::shape, "block_attention: rows not divisible by block");
    const std::size_t blocks = qv.rows / block;
    const std::size_t p = qv.cols;
    Matrix weights(qv.rows, block);  // softmax rows, saved for backward
    Matrix out(qv.rows, p);
    out.fill(0.0);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t r0 = b * block;
      for (std::size_t t1 = 0; t1 < block; ++t1) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t t2 = 0; t2 < block; ++t2) {
          double dot = 0.0;
          for (std::size_t c = 0; c < p; ++c) dot += qv.at(r0 + t1, c) * kv.at(r0 + t2, c);
          weights.at(r0 + t1, t2) = dot * scale;
          mx = std::max(mx, dot * scale);
        }
        double sum = 0.0;
        for (std::size_t t2 = 0; t2 < block; ++t2) {
          const double e = std::exp(weights.at(r0 + t1, t2) - mx);
          weights.at(r0 + t1, t2) = e;
          sum += e;
        }
        for (std::size_t t2 = 0; t2 < block; ++t2) {
          weights.at(r0 + t1, t2) /= sum;
          for (std::size_t c = 0; c < p; ++c)
            out.at(r0 + t1, c) += weights.at(r0 + t1, t2) * vv.at(r0 + t2, c);
        }
      }
    }
    return push(std::move(out), [this, q, k, v, block, scale, weights = std::move(weights),
                                 o = next_index()] {
      const Matrix& qv = vals_[q];
      const Matrix& kv = vals_[k];
      const Matrix& vv = vals_[v];
      const Matrix& go = grads_[o];
      const std::size_t blocks = qv.rows / block;
      const std::size_t p = qv.cols;
      std::vector<double> ds(block);
      for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t r0 = b * block;
        for (std::size_t t1 = 0; t1 < block; ++t1) {
          // dV and dS from out = S V
          double dot = 0.0;
          for (std::size_t t2 = 0; t2 < block; ++t2) {
            double s = 0.0;
            for (std::size_t c = 0; c < p; ++c) s += go.at(r0 + t1, c) * vv.at(r0 + t2, c);
            ds[t2] = s;
            dot += s * weights.at(r0 + t1, t2);
            for (std::size_t c = 0; c < p; ++c)
              grads_[v].at(r0 + t2, c) += weights.at(r0 + t1, t2) * go.at(r0 + t1, c);
          }
          // softmax backward, then dQ, dK from logits = scale * Q K^T
          for (std::size_t t2 = 0; t2 < block; ++t2) {
            const double dlogit = weights.at(r0 + t1, t2) * (ds[t2] - dot) * scale;
            if (dlogit == 0.0) continue;
            for (std::size_t c = 0; c < p; ++c) {
              grads_[q].at(r0 + t1, c) += dlogit * kv.at(r0 + t2, c);
              grads_[k].at(r0 + t2, c) += dlogit * qv.at(r0 + t1, c);
            }
          }
        }
      }
    });
  }

  // total = sum_i coeffs[i] * scalars[i]; all inputs 1x1.
  Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& coeffs) {
    if (scalars.size() != coeffs.size() || scalars.empty())
      fail(ErrorKind::invalid_input, "weighted_sum: size mismatch");
    Matrix out(1, 1);
    out.at(0, 0) = 0.0;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      const Matrix& s = vals_[scalars[i]];
      if (s.rows != 1 || s.cols != 1) fail(ErrorKind::shape, "weighted_sum: inputs must be 1x1");
      out.at(0, 0) += coeffs[i] * s.at(0, 0);
    }
    return push(std::move(out), [this, scalars, coeffs, o = next_index()] {
      const double g = grads_[o].at(0, 0);
      for (std::size_t i = 0; i < scalars.size(); ++i)
        grads_[scalars[i]].at(0, 0) += g * coeffs[i];
    });
  }

 private:
  // Index the node being constructed will occupy; closures capture it
  // before push() appends.
  Var next_index() const { return vals_.size(); }

  Var push(Matrix v, std::function<void()> back) {
    Matrix g(v.rows, v.cols);
    g.fill(0.0);
    vals_.push_back(std::move(v));
    grads_.push_back(std::move(g));
    backs_.push_back(std::move(back));
    return vals_.size() - 1;
  }

  static void accumulate(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
  }

  std::vector<Matrix> vals_;
  std::vector<Matrix> grads_;
  std::vector<std::function<void()>> backs_;
};

}  // namespace relbal
