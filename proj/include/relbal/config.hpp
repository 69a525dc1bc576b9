#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "relbal/error.hpp"

namespace relbal {

// Doubles are printed with 17 significant digits so that
// serialize -> parse round-trips bit-exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

// Union of every setting any subcommand reads, parsed from a flat
// `key = value` file with CLI flags overriding. A run serializes its
// fully resolved config so it can be replayed bit-exactly.
struct RunConfig {
  // shared
  std::uint64_t seed = 0;
  std::string out;  // output directory; empty -> $RELBAL_OUT_ROOT or ./runs

  // gen
  std::size_t classes = 8;
  std::size_t dim = 128;
  std::size_t samples_per_class = 600;
  std::size_t test_per_class = 150;
  double sigma = 1.0;
  double separation = 2.5;
  std::string format = "text";  // text | binary

  // dataset plumbing
  std::string train_path;      // key: train
  std::string eval_path;       // key: eval
  std::string manifest_path;   // key: manifest
  std::string checkpoint_path; // key: checkpoint
  std::string data_path;       // key: data
  double noise = 0.0;          // train-label noise level, percent

  // training
  std::size_t epochs = 1000;
  double base_lr = 3e-4;
  double lr_decay = 0.995;
  std::size_t batch_size = 64;
  double lambda_cls = 1.0;
  double lambda_a = 0.1;
  double lambda_c = 0.1;
  double smoothing = 0.0;  // label-smoothing term, percent
  std::size_t group_cap = 512;
  std::size_t class_quota = 500;
  std::size_t anchors = 8;  // K
  std::size_t tokens = 8;   // T
  std::size_t heads = 4;
  double delta = 1.0;
  std::size_t reduced_dim = 0;  // 0 = identity reduction (d = input dim)
  std::size_t hidden = 64;
  std::size_t eval_every = 1;
  double clip_norm = 0.0;
  bool dump_records = false;

  // sweep
  std::string axis;                 // anchors | noise | smoothing | lambda-a
  std::string values;               // comma-separated
  std::string seeds;                // comma-separated; empty -> {seed}
  std::string grid_anchors = "0,8"; // K grid for the noise sweep

  // audit
  std::size_t audit_instances = 20;
  double audit_step = 1e-5;
  double audit_tolerance = 1e-4;
};

namespace config_detail {

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long r = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    fail(ErrorKind::config, "key " + key + ": not an unsigned integer: '" + v + "'");
  return r;
}

inline double parse_f64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double r = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    fail(ErrorKind::config, "key " + key + ": not a number: '" + v + "'");
  return r;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::config, "key " + key + ": not a boolean: '" + v + "'");
}

inline const std::vector<Field>& fields() {
  auto u64 = [](const char* key, std::uint64_t RunConfig::*member) {
    return Field{key,
                 [member](const RunConfig& c) { return std::to_string(c.*member); },
                 [member, key](RunConfig& c, const std::string& v) {
                   c.*member = parse_u64(key, v);
                 }};
  };
  auto count = [](const char* key, std::size_t RunConfig::*member) {
    return Field{key,
                 [member](const RunConfig& c) { return std::to_string(c.*member); },
                 [member, key](RunConfig& c, const std::string& v) {
                   c.*member = static_cast<std::size_t>(parse_u64(key, v));
                 }};
  };
  auto f64 = [](const char* key, double RunConfig::*member) {
    return Field{key,
                 [member](const RunConfig& c) { return format_double(c.*member); },
                 [member, key](RunConfig& c, const std::string& v) {
                   c.*member = parse_f64(key, v);
                 }};
  };
  auto str = [](const char* key, std::string RunConfig::*member) {
    return Field{key, [member](const RunConfig& c) { return c.*member; },
                 [member](RunConfig& c, const std::string& v) { c.*member = v; }};
  };
  auto boolean = [](const char* key, bool RunConfig::*member) {
    return Field{key,
                 [member](const RunConfig& c) { return c.*member ? "true" : "false"; },
                 [member, key](RunConfig& c, const std::string& v) {
                   c.*member = parse_bool(key, v);
                 }};
  };
  static const std::vector<Field> table = {
      u64("seed", &RunConfig::seed),
      str("out", &RunConfig::out),
      count("classes", &RunConfig::classes),
      count("dim", &RunConfig::dim),
      count("samples-per-class", &RunConfig::samples_per_class),
      count("test-per-class", &RunConfig::test_per_class),
      f64("sigma", &RunConfig::sigma),
      f64("separation", &RunConfig::separation),
      str("format", &RunConfig::format),
      str("train", &RunConfig::train_path),
      str("eval", &RunConfig::eval_path),
      str("manifest", &RunConfig::manifest_path),
      str("checkpoint", &RunConfig::checkpoint_path),
      str("data", &RunConfig::data_path),
      f64("noise", &RunConfig::noise),
      count("epochs", &RunConfig::epochs),
      f64("base-lr", &RunConfig::base_lr),
      f64("lr-decay", &RunConfig::lr_decay),
      count("batch-size", &RunConfig::batch_size),
      f64("lambda-cls", &RunConfig::lambda_cls),
      f64("lambda-a", &RunConfig::lambda_a),
      f64("lambda-c", &RunConfig::lambda_c),
      f64("smoothing", &RunConfig::smoothing),
      count("group-cap", &RunConfig::group_cap),
      count("class-quota", &RunConfig::class_quota),
      count("anchors", &RunConfig::anchors),
      count("tokens", &RunConfig::tokens),
      count("heads", &RunConfig::heads),
      f64("delta", &RunConfig::delta),
      count("reduced-dim", &RunConfig::reduced_dim),
      count("hidden", &RunConfig::hidden),
      count("eval-every", &RunConfig::eval_every),
      f64("clip-norm", &RunConfig::clip_norm),
      boolean("dump-records", &RunConfig::dump_records),
      str("axis", &RunConfig::axis),
      str("values", &RunConfig::values),
      str("seeds", &RunConfig::seeds),
      str("grid-anchors", &RunConfig::grid_anchors),
      count("audit-instances", &RunConfig::audit_instances),
      f64("audit-step", &RunConfig::audit_step),
      f64("audit-tolerance", &RunConfig::audit_tolerance),
  };
  return table;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace config_detail

inline void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : config_detail::fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  fail(ErrorKind::config, "unknown config key '" + key + "'");
}

// `key = value` lines; blank lines and #-comments ignored.
inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read config " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::config, path + ":" + std::to_string(lineno) + ": expected key = value");
    apply_config_kv(cfg, config_detail::trim(t.substr(0, eq)),
                    config_detail::trim(t.substr(eq + 1)));
  }
}

// Every key, fixed order, one per line; parse(serialize(c)) == c.
inline std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& f : config_detail::fields()) out << f.key << " = " << f.get(cfg) << "\n";
  return out.str();
}

inline void save_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << serialize_config(cfg);
  if (!out) fail(ErrorKind::io, "short write to " + path);
}

inline std::vector<double> parse_value_list(const std::string& key, const std::string& csv) {
  std::vector<double> out;
  std::string token;
  std::istringstream in(csv);
  while (std::getline(in, token, ',')) {
    const std::string t = config_detail::trim(token);
    if (t.empty()) continue;
    out.push_back(config_detail::parse_f64(key, t));
  }
  return out;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::string token;
  std::istringstream in(csv);
  while (std::getline(in, token, ',')) {
    const std::string t = config_detail::trim(token);
    if (t.empty()) continue;
    out.push_back(config_detail::parse_u64("seeds", t));
  }
  return out;
}

}  // namespace relbal
