#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "relbal/error.hpp"
#include "relbal/matrix.hpp"
#include "relbal/rng.hpp"

namespace relbal {

// Group id -1 means ungrouped; refinement then treats the sample as its
// own group.
struct Sample {
  std::vector<double> embedding;
  int label = 0;
  long long group = -1;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;
  std::size_t dim = 0;

  std::size_t size() const { return samples.size(); }

  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      if (s.embedding.size() != dim)
        fail(ErrorKind::shape, "sample " + std::to_string(i) + " has dim " +
                                   std::to_string(s.embedding.size()) + ", expected " +
                                   std::to_string(dim));
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes)
        fail(ErrorKind::invalid_input,
             "sample " + std::to_string(i) + " label " + std::to_string(s.label) +
                 " outside 0.." + std::to_string(num_classes - 1));
      for (double v : s.embedding)
        if (!std::isfinite(v))
          fail(ErrorKind::invalid_input, "sample " + std::to_string(i) + " has non-finite value");
    }
  }

  // Batch matrix of the samples at the given indices, one row per sample.
  Matrix gather(const std::vector<std::size_t>& idx) const {
    Matrix m(idx.size(), dim);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy(samples[idx[r]].embedding.begin(), samples[idx[r]].embedding.end(), m.row(r));
    return m;
  }
};

struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t dim = 128;
  std::size_t samples_per_class = 600;
  double cluster_spread = 1.0;   // sigma
  double mean_separation = 2.5;  // sphere radius for the class means
  std::uint64_t seed = 0;
};

// N Gaussian clusters with means drawn uniformly on a sphere of radius
// mean_separation. Group id is the cluster index.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes == 0 || spec.dim == 0 || spec.samples_per_class == 0)
    fail(ErrorKind::invalid_input, "generate_synthetic: empty spec");
  if (!(spec.cluster_spread > 0.0))
    fail(ErrorKind::invalid_input, "generate_synthetic: cluster spread must be > 0");
  if (spec.mean_separation < 0.0)
    fail(ErrorKind::invalid_input, "generate_synthetic: separation must be >= 0");

  Rng rng(spec.seed);
  std::vector<std::vector<double>> means(spec.num_classes, std::vector<double>(spec.dim, 0.0));
  for (auto& mean : means) {
    double norm2 = 0.0;
    for (double& v : mean) {
      v = rng.next_gaussian();
      norm2 += v * v;
    }
    // A zero draw has probability 0; the guard keeps the division defined.
    const double norm = std::max(std::sqrt(norm2), 1e-300);
    for (double& v : mean) v *= spec.mean_separation / norm;
  }

  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.dim = spec.dim;
  ds.samples.reserve(spec.num_classes * spec.samples_per_class);
  for (std::size_t cls = 0; cls < spec.num_classes; ++cls) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      Sample s;
      s.label = static_cast<int>(cls);
      s.group = static_cast<long long>(cls);
      s.embedding.resize(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d)
        s.embedding[d] = means[cls][d] + spec.cluster_spread * rng.next_gaussian();
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// Each sample is independently relabeled, with the given probability, to
// a uniformly random *different* class. The input is left unmodified.
inline Dataset inject_label_noise(const Dataset& ds, double rate, Rng& rng) {
  if (rate < 0.0 || rate > 1.0)
    fail(ErrorKind::invalid_input, "inject_label_noise: rate outside [0,1]");
  Dataset out = ds;
  if (ds.num_classes < 2 || rate == 0.0) return out;
  for (Sample& s : out.samples) {
    if (rng.next_double() < rate) {
      const auto offset = rng.next_below(ds.num_classes - 1) + 1;
      s.label = static_cast<int>((static_cast<std::size_t>(s.label) + offset) % ds.num_classes);
    }
  }
  return out;
}

// (1-eps) * y + eps/N with eps = term/100. Terms are the unitless
// integers of the ablation grids, read as percentages.
inline std::vector<double> smooth_labels(const std::vector<double>& one_hot, double term) {
  if (term < 0.0 || term >= 100.0)
    fail(ErrorKind::invalid_input, "smooth_labels: term must be in [0,100)");
  const double eps = term / 100.0;
  const double n = static_cast<double>(one_hot.size());
  std::vector<double> out(one_hot.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - eps) * one_hot[i] + eps / n;
  return out;
}

inline std::vector<double> one_hot(std::size_t label, std::size_t num_classes) {
  std::vector<double> v(num_classes, 0.0);
  v[label] = 1.0;
  return v;
}

// Two-stage epoch sampler: stage 1 caps each group at per_group samples
// (uniform, without replacement); stage 2 draws exactly per_class samples
// for every class from the pooled stage-1 survivors, falling back to
// replacement when a class pool is smaller than per_class.
inline Dataset refine_batch(const Dataset& ds, std::size_t per_group, std::size_t per_class,
                            Rng& rng) {
  if (per_group == 0 || per_class == 0)
    fail(ErrorKind::invalid_input, "refine_batch: per_group and per_class must be >= 1");

  std::map<long long, std::vector<std::size_t>> groups;
  long long synthetic_group = -1;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    long long g = ds.samples[i].group;
    if (g < 0) g = --synthetic_group;  // ungrouped: each sample its own group
    groups[g].push_back(i);
  }

  std::vector<std::vector<std::size_t>> pool_by_class(ds.num_classes);
  for (auto& [gid, members] : groups) {
    if (members.size() > per_group) {
      // partial Fisher-Yates: the first per_group entries are a uniform
      // without-replacement draw
      for (std::size_t i = 0; i < per_group; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(members.size() - i));
        std::swap(members[i], members[j]);
      }
      members.resize(per_group);
    }
    for (std::size_t idx : members)
      pool_by_class[static_cast<std::size_t>(ds.samples[idx].label)].push_back(idx);
  }

  Dataset out;
  out.num_classes = ds.num_classes;
  out.dim = ds.dim;
  out.samples.reserve(ds.num_classes * per_class);
  for (std::size_t cls = 0; cls < ds.num_classes; ++cls) {
    auto& pool = pool_by_class[cls];
    if (pool.empty())
      fail(ErrorKind::missing_class,
           "refine_batch: class " + std::to_string(cls) + " absent from the stage-1 pool");
    if (pool.size() >= per_class) {
      for (std::size_t i = 0; i < per_class; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(pool.size() - i));
        std::swap(pool[i], pool[j]);
        out.samples.push_back(ds.samples[pool[i]]);
      }
    } else {
      for (std::size_t i = 0; i < per_class; ++i)
        out.samples.push_back(ds.samples[pool[rng.next_below(pool.size())]]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------
// Dataset files.
//
// Text: header "d N", then one line per sample: "label group v1 .. vd".
// Binary: magic-free little-endian layout of 32-bit counts then payload:
//   u32 d, u32 N, u32 sample_count, then per sample
//   i32 label, i64 group, f64 embedding[d].
// ---------------------------------------------------------------------

inline void save_dataset_text(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << ds.dim << " " << ds.num_classes << "\n";
  out.precision(17);
  for (const Sample& s : ds.samples) {
    out << s.label << " " << s.group;
    for (double v : s.embedding) out << " " << v;
    out << "\n";
  }
  if (!out) fail(ErrorKind::io, "short write to " + path);
}

inline Dataset load_dataset_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read " + path);
  std::string header;
  if (!std::getline(in, header)) fail(ErrorKind::parse, path + ":1: missing header");
  Dataset ds;
  {
    std::istringstream hs(header);
    if (!(hs >> ds.dim >> ds.num_classes) || ds.dim == 0 || ds.num_classes == 0)
      fail(ErrorKind::parse, path + ":1: expected header \"d N\"");
  }
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Sample s;
    if (!(ls >> s.label >> s.group))
      fail(ErrorKind::parse, path + ":" + std::to_string(lineno) + ": bad label/group");
    s.embedding.resize(ds.dim);
    for (std::size_t d = 0; d < ds.dim; ++d)
      if (!(ls >> s.embedding[d]))
        fail(ErrorKind::parse,
             path + ":" + std::to_string(lineno) + ": expected " + std::to_string(ds.dim) +
                 " embedding values");
    double extra;
    if (ls >> extra)
      fail(ErrorKind::parse, path + ":" + std::to_string(lineno) + ": trailing values");
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

namespace detail {
template <typename T>
void put_le(std::ofstream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}
template <typename T>
T get_le(std::ifstream& in, const std::string& path) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T)))
    fail(ErrorKind::parse, "truncated binary dataset " + path);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}
}  // namespace detail

inline void save_dataset_binary(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.dim));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.num_classes));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.samples.size()));
  for (const Sample& s : ds.samples) {
    detail::put_le<std::int32_t>(out, s.label);
    detail::put_le<std::int64_t>(out, s.group);
    for (double v : s.embedding) detail::put_le<double>(out, v);
  }
  if (!out) fail(ErrorKind::io, "short write to " + path);
}

inline Dataset load_dataset_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path);
  Dataset ds;
  ds.dim = detail::get_le<std::uint32_t>(in, path);
  ds.num_classes = detail::get_le<std::uint32_t>(in, path);
  const auto count = detail::get_le<std::uint32_t>(in, path);
  if (ds.dim == 0 || ds.num_classes == 0) fail(ErrorKind::parse, "bad binary header in " + path);
  ds.samples.resize(count);
  for (Sample& s : ds.samples) {
    s.label = detail::get_le<std::int32_t>(in, path);
    s.group = detail::get_le<std::int64_t>(in, path);
    s.embedding.resize(ds.dim);
    for (double& v : s.embedding) v = detail::get_le<double>(in, path);
  }
  ds.validate();
  return ds;
}

// Binary when the path ends in .bin, text otherwise.
inline bool is_binary_dataset_path(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  if (is_binary_dataset_path(path))
    save_dataset_binary(ds, path);
  else
    save_dataset_text(ds, path);
}

inline Dataset load_dataset(const std::string& path) {
  return is_binary_dataset_path(path) ? load_dataset_binary(path) : load_dataset_text(path);
}

// FNV-1a over a file's bytes; used for manifest checksums.
inline std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char ch;
  while (in.get(ch)) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace relbal
