#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "relbal/error.hpp"
#include "relbal/head.hpp"

namespace relbal {

// Checkpoint layout (all integers little-endian u32, floats f64):
//   magic "RBHEADCK", version,
//   N, K, d, T, n_heads, delta(f64),
//   array_count, then per array: name_len, name bytes, rows, cols, data.
// Arrays appear in parameter-layout order followed by the batch-norm
// running statistics. The loader rejects unknown names and any shape
// that disagrees with the header-derived expectation.

namespace ckpt_detail {

constexpr char kMagic[8] = {'R', 'B', 'H', 'E', 'A', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail(ErrorKind::parse, "truncated checkpoint " + path);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void put_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::ifstream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) fail(ErrorKind::parse, "truncated checkpoint " + path);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void put_array(std::ofstream& out, const std::string& name, const Matrix& m) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(m.rows));
  put_u32(out, static_cast<std::uint32_t>(m.cols));
  for (double v : m.data) put_f64(out, v);
}

}  // namespace ckpt_detail

inline void save_checkpoint(const HeadParameters& p, const std::string& path) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(p.cfg.num_classes));
  put_u32(out, static_cast<std::uint32_t>(p.cfg.anchors_per_class));
  put_u32(out, static_cast<std::uint32_t>(p.cfg.reduced_dim));
  put_u32(out, static_cast<std::uint32_t>(p.cfg.tokens));
  put_u32(out, static_cast<std::uint32_t>(p.cfg.heads));
  put_f64(out, p.cfg.delta);
  std::uint32_t count = 0;
  p.for_each_parameter([&](const std::string&, const Matrix&) { ++count; });
  p.for_each_buffer([&](const std::string&, const Matrix&) { ++count; });
  put_u32(out, count);
  p.for_each_parameter([&](const std::string& name, const Matrix& m) { put_array(out, name, m); });
  p.for_each_buffer([&](const std::string& name, const Matrix& m) { put_array(out, name, m); });
  if (!out) fail(ErrorKind::io, "short write to " + path);
}

inline HeadParameters load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    fail(ErrorKind::parse, path + ": not a head checkpoint");
  const std::uint32_t version = get_u32(in, path);
  if (version != kVersion)
    fail(ErrorKind::incompatible, path + ": unsupported checkpoint version " + std::to_string(version));

  HeadConfig cfg;
  cfg.num_classes = get_u32(in, path);
  cfg.anchors_per_class = get_u32(in, path);
  cfg.reduced_dim = get_u32(in, path);
  cfg.tokens = get_u32(in, path);
  cfg.heads = get_u32(in, path);
  cfg.delta = get_f64(in, path);

  const std::uint32_t count = get_u32(in, path);
  std::map<std::string, Matrix> arrays;
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(in, path);
    if (name_len > 256) fail(ErrorKind::parse, path + ": implausible array name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) fail(ErrorKind::parse, "truncated checkpoint " + path);
    // the two stream reads must stay sequenced: rows precede cols on disk
    const std::uint32_t rows = get_u32(in, path);
    const std::uint32_t cols = get_u32(in, path);
    Matrix m(rows, cols);
    for (double& v : m.data) v = get_f64(in, path);
    if (!arrays.emplace(name, std::move(m)).second)
      fail(ErrorKind::parse, path + ": duplicate array " + name);
    order.push_back(name);
  }

  // Shapes not fixed by the header are taken from the arrays themselves:
  // the reduction map (absent = identity) sets input_dim, w1 sets hidden.
  auto it = arrays.find("reduction_w");
  cfg.input_dim = it == arrays.end() ? cfg.reduced_dim : it->second.rows;
  auto w1 = arrays.find("w1");
  if (w1 == arrays.end()) fail(ErrorKind::incompatible, path + ": missing array w1");
  cfg.hidden = w1->second.cols;
  cfg.validate();

  HeadParameters p;
  p.cfg = cfg;
  // Expected shapes in layout order; mismatch or absence is a named error.
  const std::size_t d = cfg.reduced_dim, h = cfg.hidden, n = cfg.num_classes;
  auto take = [&](const std::string& name, std::size_t rows, std::size_t cols, Matrix& dst) {
    auto a = arrays.find(name);
    if (a == arrays.end()) fail(ErrorKind::incompatible, path + ": missing array " + name);
    if (a->second.rows != rows || a->second.cols != cols)
      fail(ErrorKind::incompatible,
           path + ": array " + name + " has shape " + std::to_string(a->second.rows) + "x" +
               std::to_string(a->second.cols) + ", expected " + std::to_string(rows) + "x" +
               std::to_string(cols));
    dst = std::move(a->second);
    arrays.erase(a);
  };
  if (cfg.has_reduction()) {
    take("reduction_w", cfg.input_dim, d, p.reduction_w);
    take("reduction_b", 1, d, p.reduction_b);
  }
  take("w1", d, h, p.w1);
  take("b1", 1, h, p.b1);
  take("gamma1", 1, h, p.gamma1);
  take("beta1", 1, h, p.beta1);
  take("w2", h, h, p.w2);
  take("b2", 1, h, p.b2);
  take("gamma2", 1, h, p.gamma2);
  take("beta2", 1, h, p.beta2);
  take("w3", h, n, p.w3);
  take("b3", 1, n, p.b3);
  if (cfg.anchors_per_class > 0) take("anchors", cfg.anchor_count(), d, p.anchors);
  const std::size_t dt = cfg.token_dim(), hd = cfg.head_dim();
  p.wq.resize(cfg.heads);
  p.wk.resize(cfg.heads);
  p.wv.resize(cfg.heads);
  for (std::size_t i = 0; i < cfg.heads; ++i) take("wq" + std::to_string(i), dt, hd, p.wq[i]);
  for (std::size_t i = 0; i < cfg.heads; ++i) take("wk" + std::to_string(i), dt, hd, p.wk[i]);
  for (std::size_t i = 0; i < cfg.heads; ++i) take("wv" + std::to_string(i), dt, hd, p.wv[i]);
  take("w_out", dt, n, p.w_out);
  take("bn1_mean", 1, h, p.bn1_mean);
  take("bn1_var", 1, h, p.bn1_var);
  take("bn2_mean", 1, h, p.bn2_mean);
  take("bn2_var", 1, h, p.bn2_var);
  if (!arrays.empty())
    fail(ErrorKind::incompatible, path + ": unexpected array " + arrays.begin()->first);
  return p;
}

}  // namespace relbal
