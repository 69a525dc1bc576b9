#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "relbal/error.hpp"
#include "relbal/matrix.hpp"
#include "relbal/rng.hpp"
#include "relbal/tape.hpp"

namespace relbal {

struct HeadConfig {
  std::size_t input_dim = 128;       // embedding dim fed to the head
  std::size_t reduced_dim = 128;     // d; reduction layer active iff != input_dim
  std::size_t num_classes = 8;       // N
  std::size_t anchors_per_class = 8; // K; 0 disables the anchor branch
  std::size_t tokens = 8;            // T
  std::size_t heads = 4;             // attention heads
  double delta = 1.0;                // similarity temperature
  double dropout_p = 0.5;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
  std::size_t hidden = 64;

  bool has_reduction() const { return input_dim != reduced_dim; }
  std::size_t token_dim() const { return reduced_dim / tokens; }
  std::size_t head_dim() const { return token_dim() / heads; }
  std::size_t anchor_count() const { return num_classes * anchors_per_class; }

  void validate() const {
    if (num_classes < 2) fail(ErrorKind::config, "need at least 2 classes");
    if (input_dim == 0 || reduced_dim == 0 || hidden == 0)
      fail(ErrorKind::config, "zero dimension");
    if (!(delta > 0.0)) fail(ErrorKind::config, "delta must be > 0");
    if (tokens == 0 || reduced_dim % tokens != 0)
      fail(ErrorKind::config, "reduced dim " + std::to_string(reduced_dim) +
                                  " not divisible by token count " + std::to_string(tokens));
    if (heads == 0 || token_dim() % heads != 0)
      fail(ErrorKind::config, "token dim " + std::to_string(token_dim()) +
                                  " not divisible by head count " + std::to_string(heads));
    if (dropout_p < 0.0 || dropout_p >= 1.0) fail(ErrorKind::config, "dropout must be in [0,1)");
  }
};

// All trainable state plus batch-norm running statistics. The
// declaration order below fixes the flat-gradient layout, the optimizer
// walk, and the checkpoint array order.
struct HeadParameters {
  HeadConfig cfg;

  Matrix reduction_w, reduction_b;       // input_dim x d, 1 x d (0x0 when identity)
  Matrix w1, b1, gamma1, beta1;          // d x hidden, 1 x hidden, ...
  Matrix w2, b2, gamma2, beta2;          // hidden x hidden, ...
  Matrix w3, b3;                         // hidden x N, 1 x N
  Matrix anchors;                        // (N*K) x d, class-major rows (0x0 when K=0)
  std::vector<Matrix> wq, wk, wv;        // per head: token_dim x head_dim
  Matrix w_out;                          // token_dim x N

  Matrix bn1_mean, bn1_var, bn2_mean, bn2_var;  // running stats (not trained)

  // Visits every trainable array in the fixed layout order. Arrays that
  // are structurally absent (identity reduction, K=0) are skipped.
  template <typename Self, typename F>
  static void walk(Self& self, F&& f) {
    if (self.cfg.has_reduction()) {
      f("reduction_w", self.reduction_w);
      f("reduction_b", self.reduction_b);
    }
    f("w1", self.w1);
    f("b1", self.b1);
    f("gamma1", self.gamma1);
    f("beta1", self.beta1);
    f("w2", self.w2);
    f("b2", self.b2);
    f("gamma2", self.gamma2);
    f("beta2", self.beta2);
    f("w3", self.w3);
    f("b3", self.b3);
    if (self.cfg.anchors_per_class > 0) f("anchors", self.anchors);
    for (std::size_t h = 0; h < self.wq.size(); ++h) f("wq" + std::to_string(h), self.wq[h]);
    for (std::size_t h = 0; h < self.wk.size(); ++h) f("wk" + std::to_string(h), self.wk[h]);
    for (std::size_t h = 0; h < self.wv.size(); ++h) f("wv" + std::to_string(h), self.wv[h]);
    f("w_out", self.w_out);
  }
  template <typename F>
  void for_each_parameter(F&& f) {
    walk(*this, std::forward<F>(f));
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    walk(*this, std::forward<F>(f));
  }
  template <typename F>
  void for_each_buffer(F&& f) {
    f("bn1_mean", bn1_mean);
    f("bn1_var", bn1_var);
    f("bn2_mean", bn2_mean);
    f("bn2_var", bn2_var);
  }
  template <typename F>
  void for_each_buffer(F&& f) const {
    f("bn1_mean", bn1_mean);
    f("bn1_var", bn1_var);
    f("bn2_mean", bn2_mean);
    f("bn2_var", bn2_var);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, const Matrix& m) { n += m.data.size(); });
    return n;
  }
};

// Linear weights ~ N(0, 1/sqrt(fan_in)), biases 0, anchors ~ N(0, 1/sqrt(d)),
// batch-norm scale 1 / shift 0, running mean 0 / var 1. Draw order is the
// layout order, so a given rng state fixes every value.
inline HeadParameters init_head(const HeadConfig& cfg, Rng& rng) {
  cfg.validate();
  HeadParameters p;
  p.cfg = cfg;
  const std::size_t d = cfg.reduced_dim, h = cfg.hidden, n = cfg.num_classes;
  auto zeros = [](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    m.fill(0.0);
    return m;
  };
  auto ones = [](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    m.fill(1.0);
    return m;
  };
  if (cfg.has_reduction()) {
    p.reduction_w = random_normal(cfg.input_dim, d, 1.0 / std::sqrt(double(cfg.input_dim)), rng);
    p.reduction_b = zeros(1, d);
  }
  p.w1 = random_normal(d, h, 1.0 / std::sqrt(double(d)), rng);
  p.b1 = zeros(1, h);
  p.gamma1 = ones(1, h);
  p.beta1 = zeros(1, h);
  p.w2 = random_normal(h, h, 1.0 / std::sqrt(double(h)), rng);
  p.b2 = zeros(1, h);
  p.gamma2 = ones(1, h);
  p.beta2 = zeros(1, h);
  p.w3 = random_normal(h, n, 1.0 / std::sqrt(double(h)), rng);
  p.b3 = zeros(1, n);
  if (cfg.anchors_per_class > 0)
    p.anchors = random_normal(cfg.anchor_count(), d, 1.0 / std::sqrt(double(d)), rng);
  const std::size_t dt = cfg.token_dim(), hd = cfg.head_dim();
  const double proj_std = 1.0 / std::sqrt(double(dt));
  p.wq.resize(cfg.heads);
  p.wk.resize(cfg.heads);
  p.wv.resize(cfg.heads);
  for (std::size_t i = 0; i < cfg.heads; ++i) p.wq[i] = random_normal(dt, hd, proj_std, rng);
  for (std::size_t i = 0; i < cfg.heads; ++i) p.wk[i] = random_normal(dt, hd, proj_std, rng);
  for (std::size_t i = 0; i < cfg.heads; ++i) p.wv[i] = random_normal(dt, hd, proj_std, rng);
  p.w_out = random_normal(dt, n, proj_std, rng);
  p.bn1_mean = zeros(1, h);
  p.bn1_var = ones(1, h);
  p.bn2_mean = zeros(1, h);
  p.bn2_var = ones(1, h);
  return p;
}

// --- confidence (scalar path) ----------------------------------------

// C(p) = 1 - H(p)/log N; 0 at uniform, 1 at a one-hot, 0*log 0 = 0.
inline double confidence(const std::vector<double>& p) {
  if (p.size() < 2) fail(ErrorKind::invalid_input, "confidence: need at least 2 classes");
  double acc = 0.0;
  for (double v : p)
    if (v > 0.0) acc += v * std::log(std::max(v, kLogFloor));
  return 1.0 + acc / std::log(static_cast<double>(p.size()));
}

inline int argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

// --- eval-mode forward (running stats, no dropout) --------------------

namespace detail {

inline Matrix linear_rows(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out = matmul(x, w);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) += b.at(0, c);
  return out;
}

inline void relu_inplace(Matrix& m) {
  for (double& v : m.data) v = v > 0.0 ? v : 0.0;
}

inline void batchnorm_eval_inplace(Matrix& x, const Matrix& gamma, const Matrix& beta,
                                   const Matrix& rmean, const Matrix& rvar, double eps) {
  for (std::size_t c = 0; c < x.cols; ++c) {
    const double is = 1.0 / std::sqrt(rvar.at(0, c) + eps);
    for (std::size_t r = 0; r < x.rows; ++r)
      x.at(r, c) = gamma.at(0, c) * (x.at(r, c) - rmean.at(0, c)) * is + beta.at(0, c);
  }
}

inline Matrix block_attention_eval(const Matrix& q, const Matrix& k, const Matrix& v,
                                   std::size_t block, double scale) {
  const std::size_t blocks = q.rows / block, p = q.cols;
  Matrix out(q.rows, p);
  out.fill(0.0);
  std::vector<double> w(block);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t r0 = b * block;
    for (std::size_t t1 = 0; t1 < block; ++t1) {
      double mx = -1e300;
      for (std::size_t t2 = 0; t2 < block; ++t2) {
        double dot = 0.0;
        for (std::size_t c = 0; c < p; ++c) dot += q.at(r0 + t1, c) * k.at(r0 + t2, c);
        w[t2] = dot * scale;
        mx = std::max(mx, w[t2]);
      }
      double sum = 0.0;
      for (std::size_t t2 = 0; t2 < block; ++t2) {
        w[t2] = std::exp(w[t2] - mx);
        sum += w[t2];
      }
      for (std::size_t t2 = 0; t2 < block; ++t2)
        for (std::size_t c = 0; c < p; ++c)
          out.at(r0 + t1, c) += (w[t2] / sum) * v.at(r0 + t2, c);
    }
  }
  return out;
}

}  // namespace detail

// Reduced embeddings z for a batch of raw inputs (identity when no
// reduction layer is configured).
inline Matrix reduce_embeddings(const HeadParameters& p, const Matrix& x) {
  if (x.cols != p.cfg.input_dim)
    fail(ErrorKind::shape, "input dim " + std::to_string(x.cols) + ", head expects " +
                               std::to_string(p.cfg.input_dim));
  if (!p.cfg.has_reduction()) return x;
  return detail::linear_rows(x, p.reduction_w, p.reduction_b);
}

// Eval-mode MLP on reduced embeddings; returns the primary
// distributions row-wise. prelogit_out, when given, receives the
// representation feeding the output layer (post second batch-norm).
inline Matrix primary_distribution_eval(const HeadParameters& p, const Matrix& z,
                                        Matrix* prelogit_out = nullptr) {
  Matrix h = detail::linear_rows(z, p.w1, p.b1);
  detail::relu_inplace(h);
  detail::batchnorm_eval_inplace(h, p.gamma1, p.beta1, p.bn1_mean, p.bn1_var, p.cfg.bn_eps);
  h = detail::linear_rows(h, p.w2, p.b2);
  detail::relu_inplace(h);
  detail::batchnorm_eval_inplace(h, p.gamma2, p.beta2, p.bn2_mean, p.bn2_var, p.cfg.bn_eps);
  if (prelogit_out) *prelogit_out = h;
  return softmax_rows(detail::linear_rows(h, p.w3, p.b3));
}

// Similarity softmax over all N*K anchors for a batch of reduced
// embeddings; m x (N*K), anchor columns class-major.
inline Matrix anchor_similarity_rows(const HeadParameters& p, const Matrix& z) {
  if (p.cfg.anchors_per_class == 0)
    fail(ErrorKind::disabled_feature, "anchor correction disabled (no anchors configured)");
  Matrix logits(z.rows, p.anchors.rows);
  for (std::size_t r = 0; r < z.rows; ++r)
    for (std::size_t a = 0; a < p.anchors.rows; ++a) {
      double s = 0.0;
      for (std::size_t c = 0; c < z.cols; ++c) {
        const double d = z.at(r, c) - p.anchors.at(a, c);
        s += d * d;
      }
      logits.at(r, a) = -std::sqrt(s) / p.cfg.delta;
    }
  return softmax_rows(logits);
}

inline Matrix anchor_correction_rows(const HeadParameters& p, const Matrix& z) {
  const Matrix s = anchor_similarity_rows(p, z);
  const std::size_t k = p.cfg.anchors_per_class;
  Matrix t(s.rows, p.cfg.num_classes);
  t.fill(0.0);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) t.at(r, c / k) += s.at(r, c);
  return t;
}

inline Matrix attentive_correction_rows(const HeadParameters& p, const Matrix& z) {
  const HeadConfig& cfg = p.cfg;
  const std::size_t t = cfg.tokens, dt = cfg.token_dim();
  Matrix tokens(z.rows * t, dt);
  tokens.data = z.data;  // row-major reshape
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  Matrix concat(tokens.rows, dt);
  std::size_t off = 0;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Matrix q = matmul(tokens, p.wq[h]);
    const Matrix k = matmul(tokens, p.wk[h]);
    const Matrix v = matmul(tokens, p.wv[h]);
    const Matrix att = detail::block_attention_eval(q, k, v, t, scale);
    for (std::size_t r = 0; r < att.rows; ++r)
      for (std::size_t c = 0; c < att.cols; ++c) concat.at(r, off + c) = att.at(r, c);
    off += att.cols;
  }
  Matrix pooled(z.rows, dt);
  pooled.fill(0.0);
  for (std::size_t r = 0; r < concat.rows; ++r)
    for (std::size_t c = 0; c < dt; ++c) pooled.at(r / t, c) += concat.at(r, c);
  const double inv = 1.0 / static_cast<double>(t);
  for (double& v : pooled.data) v *= inv;
  return softmax_rows(matmul(pooled, p.w_out));
}

// --- spec-level single-embedding operations ---------------------------

enum class Mode { train, eval };

struct FusedCorrection {
  std::vector<double> t;
  double c_g = 0.0, c_a = 0.0;
};

struct FinalDistribution {
  std::vector<double> final;
  double c_l = 0.0, c_t = 0.0;
};

inline std::vector<double> fuse_weighted(const std::vector<double>& a, double ca,
                                         const std::vector<double>& b, double cb) {
  std::vector<double> out(a.size());
  const double w = ca + cb;
  if (w < 1e-12) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = 0.5 * (a[i] + b[i]);
  } else {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (ca * a[i] + cb * b[i]) / w;
  }
  return out;
}

inline FusedCorrection fuse_corrections(const std::vector<double>& t_g,
                                        const std::vector<double>& t_a) {
  FusedCorrection f;
  f.c_g = confidence(t_g);
  f.c_a = confidence(t_a);
  f.t = fuse_weighted(t_g, f.c_g, t_a, f.c_a);
  return f;
}

inline FinalDistribution final_distribution(const std::vector<double>& l,
                                            const std::vector<double>& t) {
  FinalDistribution f;
  f.c_l = confidence(l);
  f.c_t = confidence(t);
  f.final = fuse_weighted(l, f.c_l, t, f.c_t);
  return f;
}

// N x K similarity table for one embedding (raw input space).
inline Matrix anchor_similarities(const std::vector<double>& e, const HeadParameters& p) {
  Matrix x = Matrix::row_vector(e);
  const Matrix s = anchor_similarity_rows(p, reduce_embeddings(p, x));
  Matrix table(p.cfg.num_classes, p.cfg.anchors_per_class);
  table.data = s.data;
  return table;
}

inline std::vector<double> anchor_correction(const std::vector<double>& e,
                                             const HeadParameters& p) {
  const Matrix t = anchor_correction_rows(p, reduce_embeddings(p, Matrix::row_vector(e)));
  return std::vector<double>(t.data.begin(), t.data.end());
}

inline std::vector<double> attentive_correction(const std::vector<double>& e,
                                                const HeadParameters& p) {
  const Matrix t = attentive_correction_rows(p, reduce_embeddings(p, Matrix::row_vector(e)));
  return std::vector<double>(t.data.begin(), t.data.end());
}

struct PredictionRecord {
  std::vector<double> primary;         // l
  std::vector<double> anchor_term;     // t_g (empty when K=0)
  std::vector<double> attentive_term;  // t_a
  std::vector<double> fused;           // t
  std::vector<double> final;           // L_final
  double c_l = 0.0, c_g = 0.0, c_a = 0.0, c_t = 0.0;
  int predicted = 0;
};

// Batch eval-mode prediction. prelogit_out, when given, receives the
// penultimate MLP representation (used by cluster metrics).
inline std::vector<PredictionRecord> predict_rows(const HeadParameters& p, const Matrix& x,
                                                  Matrix* prelogit_out = nullptr) {
  const Matrix z = reduce_embeddings(p, x);
  const Matrix l = primary_distribution_eval(p, z, prelogit_out);
  const bool with_anchors = p.cfg.anchors_per_class > 0;
  Matrix tg;
  if (with_anchors) tg = anchor_correction_rows(p, z);
  const Matrix ta = attentive_correction_rows(p, z);
  std::vector<PredictionRecord> out(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    PredictionRecord& rec = out[r];
    rec.primary.assign(l.row(r), l.row(r) + l.cols);
    rec.attentive_term.assign(ta.row(r), ta.row(r) + ta.cols);
    rec.c_l = confidence(rec.primary);
    rec.c_a = confidence(rec.attentive_term);
    if (with_anchors) {
      rec.anchor_term.assign(tg.row(r), tg.row(r) + tg.cols);
      rec.c_g = confidence(rec.anchor_term);
      rec.fused = fuse_weighted(rec.anchor_term, rec.c_g, rec.attentive_term, rec.c_a);
    } else {
      rec.fused = rec.attentive_term;  // anchor branch disabled
      rec.c_g = 0.0;
    }
    rec.c_t = confidence(rec.fused);
    rec.final = fuse_weighted(rec.primary, rec.c_l, rec.fused, rec.c_t);
    rec.predicted = argmax_lowest(rec.final);
  }
  return out;
}

inline PredictionRecord predict(const std::vector<double>& e, const HeadParameters& p) {
  return predict_rows(p, Matrix::row_vector(e))[0];
}

// --- train-mode forward on the tape -----------------------------------

struct BnBatchStats {
  Matrix mean1, var1, mean2, var2;
  bool valid = false;
};

struct ForwardGraph {
  std::vector<std::pair<std::string, Var>> params;  // layout order
  Var x = 0;        // input leaf
  Var z = 0;        // reduced embeddings
  Var l = 0;        // primary distributions
  Var t_a = 0;      // attentive term
  Var t_g = 0;      // anchor term (valid iff has_anchor_term)
  bool has_anchor_term = false;
  Var t = 0;        // fused correction
  Var l_final = 0;  // final distributions
  Var anchors = 0;  // anchor leaf (valid iff has_anchor_term)
  BnBatchStats bn;

  Var param(const std::string& name) const {
    for (const auto& [n, v] : params)
      if (n == name) return v;
    fail(ErrorKind::invalid_input, "unknown parameter " + name);
  }
};

// Builds the full train-mode forward pass (dropout masks drawn from rng,
// batch-statistics batch norm) for a batch of raw embeddings. Pure with
// respect to the parameters: running statistics are not read or
// written; the batch stats are reported for the caller to fold in.
inline ForwardGraph build_train_forward(Tape& tape, const HeadParameters& p, const Matrix& x,
                                        Rng& rng) {
  const HeadConfig& cfg = p.cfg;
  if (x.cols != cfg.input_dim) fail(ErrorKind::shape, "batch dim mismatch");
  ForwardGraph g;
  p.for_each_parameter([&](const std::string& name, const Matrix& m) {
    g.params.emplace_back(name, tape.leaf(m));
  });
  g.x = tape.leaf(x);

  g.z = cfg.has_reduction()
            ? tape.add_row(tape.matmul(g.x, g.param("reduction_w")), g.param("reduction_b"))
            : g.x;

  Var h = tape.add_row(tape.matmul(g.z, g.param("w1")), g.param("b1"));
  h = tape.relu(h);
  h = tape.dropout(h, cfg.dropout_p, rng);
  h = tape.batchnorm_train(h, g.param("gamma1"), g.param("beta1"), cfg.bn_eps, &g.bn.mean1,
                           &g.bn.var1);
  h = tape.add_row(tape.matmul(h, g.param("w2")), g.param("b2"));
  h = tape.relu(h);
  h = tape.dropout(h, cfg.dropout_p, rng);
  h = tape.batchnorm_train(h, g.param("gamma2"), g.param("beta2"), cfg.bn_eps, &g.bn.mean2,
                           &g.bn.var2);
  g.bn.valid = true;
  g.l = tape.softmax_rows(tape.add_row(tape.matmul(h, g.param("w3")), g.param("b3")));
  const Var c_l = tape.confidence_rows(g.l);

  // attentive branch
  const std::size_t t_count = cfg.tokens;
  const Var tokens = tape.split_rows(g.z, t_count);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  std::vector<Var> heads;
  heads.reserve(cfg.heads);
  for (std::size_t i = 0; i < cfg.heads; ++i) {
    const Var q = tape.matmul(tokens, g.param("wq" + std::to_string(i)));
    const Var k = tape.matmul(tokens, g.param("wk" + std::to_string(i)));
    const Var v = tape.matmul(tokens, g.param("wv" + std::to_string(i)));
    heads.push_back(tape.block_attention(q, k, v, t_count, scale));
  }
  const Var pooled = tape.mean_row_blocks(tape.hconcat(heads), t_count);
  g.t_a = tape.softmax_rows(tape.matmul(pooled, g.param("w_out")));
  const Var c_a = tape.confidence_rows(g.t_a);

  if (cfg.anchors_per_class > 0) {
    g.anchors = g.param("anchors");
    const Var dist = tape.pairwise_distance(g.z, g.anchors);
    const Var sim = tape.softmax_rows(tape.scale(dist, -1.0 / cfg.delta));
    g.t_g = tape.sum_col_groups(sim, cfg.anchors_per_class);
    g.has_anchor_term = true;
    const Var c_g = tape.confidence_rows(g.t_g);
    g.t = tape.fuse_rows(g.t_g, c_g, g.t_a, c_a);
  } else {
    g.t = g.t_a;
  }
  const Var c_t = tape.confidence_rows(g.t);
  g.l_final = tape.fuse_rows(g.l, c_l, g.t, c_t);
  return g;
}

// Spec-level single-embedding primary distribution. Train mode runs the
// stochastic path (dropout from rng, batch statistics over the
// single-row batch); eval mode is the deterministic running-stats path.
inline std::vector<double> primary_distribution(const std::vector<double>& e,
                                                const HeadParameters& p, Mode mode, Rng& rng) {
  const Matrix x = Matrix::row_vector(e);
  if (mode == Mode::eval) {
    const Matrix l = primary_distribution_eval(p, reduce_embeddings(p, x));
    return std::vector<double>(l.data.begin(), l.data.end());
  }
  Tape tape;
  const ForwardGraph g = build_train_forward(tape, p, x, rng);
  const Matrix& l = tape.value(g.l);
  return std::vector<double>(l.data.begin(), l.data.end());
}

}  // namespace relbal
