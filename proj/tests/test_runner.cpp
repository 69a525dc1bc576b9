// Command runners: artifact layout, determinism, error surfaces, and the
// installed command-line binary driven as a subprocess.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "relbal/runner.hpp"

#ifndef RELBAL_CLI_PATH
#error "RELBAL_CLI_PATH must point at the command-line binary"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using relbal::RunConfig;

namespace {

std::string fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("relbal_runner_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

// Small but structurally complete generation request.
RunConfig tiny_gen(const std::string& out, std::uint64_t seed) {
  RunConfig cfg;
  cfg.out = out;
  cfg.seed = seed;
  cfg.classes = 3;
  cfg.dim = 8;
  cfg.samples_per_class = 12;
  cfg.test_per_class = 6;
  cfg.sigma = 0.4;
  cfg.separation = 2.5;
  return cfg;
}

// Training request over a generated manifest, sized to finish fast.
RunConfig tiny_train(const std::string& out, const std::string& manifest, std::uint64_t seed) {
  RunConfig cfg;
  cfg.out = out;
  cfg.seed = seed;
  cfg.manifest_path = manifest;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.class_quota = 10;
  cfg.anchors = 2;
  cfg.tokens = 2;
  cfg.heads = 2;
  cfg.hidden = 16;
  cfg.base_lr = 0.01;
  return cfg;
}

int run_cli(const std::string& args, std::string* out = nullptr, std::string* err = nullptr) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path();
  const std::string out_path = (dir / ("relbal_cli_out_" + std::to_string(counter))).string();
  const std::string err_path = (dir / ("relbal_cli_err_" + std::to_string(counter))).string();
  ++counter;
  const std::string cmd =
      std::string(RELBAL_CLI_PATH) + " " + args + " >" + out_path + " 2>" + err_path;
  const int raw = std::system(cmd.c_str());
  if (out) *out = slurp(out_path);
  if (err) *err = slurp(err_path);
  std::remove(out_path.c_str());
  std::remove(err_path.c_str());
  if (raw == -1) return -1;
#ifdef WEXITSTATUS
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
#else
  return raw;
#endif
}

}  // namespace

TEST_CASE("config files round-trip exactly") {
  RunConfig cfg;
  cfg.seed = 12345678901234567ULL;
  cfg.out = "/some/dir";
  cfg.classes = 5;
  cfg.sigma = 0.1 + 0.2;  // awkward binary fraction
  cfg.base_lr = 2.8533303913973157e-4;
  cfg.lambda_a = 1.0 / 3.0;
  cfg.noise = 12.5;
  cfg.dump_records = true;
  cfg.axis = "noise";
  cfg.values = "0,10,20";
  cfg.grid_anchors = "0,4";
  const std::string text = relbal::serialize_config(cfg);

  const std::string path = fresh_dir("cfg") + "/roundtrip.cfg";
  relbal::write_text_file(path, text);
  RunConfig back;
  relbal::load_config_file(back, path);
  REQUIRE(relbal::serialize_config(back) == text);
  REQUIRE(back.sigma == cfg.sigma);          // bit-exact doubles
  REQUIRE(back.base_lr == cfg.base_lr);
  REQUIRE(back.lambda_a == cfg.lambda_a);
  REQUIRE(back.seed == cfg.seed);
  REQUIRE(back.dump_records == cfg.dump_records);
  REQUIRE(back.values == cfg.values);
}

TEST_CASE("config parsing rejects unknown keys and bad values") {
  const std::string dir = fresh_dir("cfgbad");
  SECTION("unknown key is named in the error") {
    relbal::write_text_file(dir + "/bad.cfg", "bogus-key = 1\n");
    RunConfig cfg;
    try {
      relbal::load_config_file(cfg, dir + "/bad.cfg");
      FAIL("expected config error");
    } catch (const relbal::Error& e) {
      REQUIRE(e.kind() == relbal::ErrorKind::config);
      REQUIRE(std::string(e.what()).find("bogus-key") != std::string::npos);
    }
  }
  SECTION("non-numeric count") {
    relbal::write_text_file(dir + "/bad.cfg", "epochs = abc\n");
    RunConfig cfg;
    try {
      relbal::load_config_file(cfg, dir + "/bad.cfg");
      FAIL("expected error");
    } catch (const relbal::Error& e) {
      REQUIRE(std::string(e.what()).find("epochs") != std::string::npos);
    }
  }
  SECTION("missing file is an io error") {
    RunConfig cfg;
    try {
      relbal::load_config_file(cfg, dir + "/absent.cfg");
      FAIL("expected io error");
    } catch (const relbal::Error& e) {
      REQUIRE(e.kind() == relbal::ErrorKind::io);
    }
  }
}

TEST_CASE("list parsing") {
  REQUIRE(relbal::parse_value_list("values", "0,1.5,-2") ==
          std::vector<double>{0.0, 1.5, -2.0});
  REQUIRE(relbal::parse_seed_list("3,5") == std::vector<std::uint64_t>{3, 5});
  REQUIRE_THROWS_AS(relbal::parse_value_list("values", ""), relbal::Error);
  REQUIRE_THROWS_AS(relbal::parse_value_list("values", "1,,2"), relbal::Error);
  REQUIRE_THROWS_AS(relbal::parse_seed_list("1,x"), relbal::Error);
}

TEST_CASE("output directory resolution") {
  const std::string root = fresh_dir("outroot");
  RunConfig cfg;
  cfg.out = root + "/explicit";
  REQUIRE(relbal::resolve_out_dir(cfg, "gen") == root + "/explicit");
  REQUIRE(fs::is_directory(root + "/explicit"));

  cfg.out.clear();
  setenv("RELBAL_OUT_ROOT", root.c_str(), 1);
  const std::string resolved = relbal::resolve_out_dir(cfg, "train");
  unsetenv("RELBAL_OUT_ROOT");
  REQUIRE(resolved == (fs::path(root) / "train").string());
  REQUIRE(fs::is_directory(resolved));
}

TEST_CASE("dataset generation artifacts") {
  const std::string d1 = fresh_dir("gen1"), d2 = fresh_dir("gen2");
  const auto g1 = relbal::run_gen(tiny_gen(d1, 5));
  const auto g2 = relbal::run_gen(tiny_gen(d2, 5));

  SECTION("same seed produces byte-identical files") {
    REQUIRE(slurp(g1.train_path) == slurp(g2.train_path));
    REQUIRE(slurp(g1.test_path) == slurp(g2.test_path));
  }
  SECTION("manifest echoes the request and checksums the payload") {
    const json m = json::parse(slurp(g1.manifest_path));
    REQUIRE(m.at("classes").get<std::size_t>() == 3);
    REQUIRE(m.at("dim").get<std::size_t>() == 8);
    REQUIRE(m.at("seed").get<std::uint64_t>() == 5);
    REQUIRE(m.at("samples_per_class").get<std::size_t>() == 12);
    REQUIRE(m.at("test_per_class").get<std::size_t>() == 6);
    REQUIRE(m.at("train").get<std::string>() == "train.txt");
    REQUIRE(m.at("checksums").at("train").get<std::string>() ==
            relbal::file_checksum(g1.train_path));
    REQUIRE(m.at("checksums").at("test").get<std::string>() ==
            relbal::file_checksum(g1.test_path));
    REQUIRE(fs::exists(fs::path(g1.dir) / "resolved-config.txt"));
  }
  SECTION("split sizes and shared class structure") {
    const relbal::Dataset train = relbal::load_dataset(g1.train_path);
    const relbal::Dataset test = relbal::load_dataset(g1.test_path);
    REQUIRE(train.size() == 36);
    REQUIRE(test.size() == 18);
    REQUIRE(train.num_classes == 3);
    REQUIRE(test.num_classes == 3);
    // both halves draw from the same class means: per-class centroids agree
    for (int c = 0; c < 3; ++c) {
      std::vector<double> m1(8, 0.0), m2(8, 0.0);
      std::size_t n1 = 0, n2 = 0;
      for (const auto& s : train.samples)
        if (s.label == c) {
          for (std::size_t i = 0; i < 8; ++i) m1[i] += s.embedding[i];
          ++n1;
        }
      for (const auto& s : test.samples)
        if (s.label == c) {
          for (std::size_t i = 0; i < 8; ++i) m2[i] += s.embedding[i];
          ++n2;
        }
      REQUIRE(n1 == 12);
      REQUIRE(n2 == 6);
      double gap = 0.0;
      for (std::size_t i = 0; i < 8; ++i) {
        const double d = m1[i] / double(n1) - m2[i] / double(n2);
        gap += d * d;
      }
      REQUIRE(std::sqrt(gap) < 1.0);  // sigma 0.4, so centroids sit close
    }
  }
  SECTION("binary format carries the identical dataset") {
    RunConfig cfg = tiny_gen(fresh_dir("genb"), 5);
    cfg.format = "binary";
    const auto gb = relbal::run_gen(cfg);
    REQUIRE(fs::path(gb.train_path).extension() == ".bin");
    const relbal::Dataset t_text = relbal::load_dataset(g1.train_path);
    const relbal::Dataset t_bin = relbal::load_dataset(gb.train_path);
    REQUIRE(t_text.size() == t_bin.size());
    for (std::size_t i = 0; i < t_text.size(); ++i) {
      REQUIRE(t_text.samples[i].label == t_bin.samples[i].label);
      REQUIRE(t_text.samples[i].embedding == t_bin.samples[i].embedding);
    }
  }
  SECTION("bad requests are config errors") {
    RunConfig cfg = tiny_gen(fresh_dir("genc"), 5);
    cfg.format = "csv";
    REQUIRE_THROWS_AS(relbal::run_gen(cfg), relbal::Error);
    cfg = tiny_gen(fresh_dir("gend"), 5);
    cfg.test_per_class = 0;
    REQUIRE_THROWS_AS(relbal::run_gen(cfg), relbal::Error);
  }
}

TEST_CASE("training command artifacts and determinism") {
  const auto gen = relbal::run_gen(tiny_gen(fresh_dir("tr_gen"), 7));

  const std::string d1 = fresh_dir("tr1");
  const auto t1 = relbal::run_train(tiny_train(d1, gen.manifest_path, 7));
  REQUIRE(fs::exists(t1.checkpoint_path));
  REQUIRE(fs::exists(t1.log_path));
  REQUIRE(fs::exists(t1.metrics_path));
  REQUIRE(fs::exists(t1.config_path));

  SECTION("log lines mirror the epoch history") {
    const auto lines = lines_of(slurp(t1.log_path));
    REQUIRE(lines.size() == 2);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const json rec = json::parse(lines[i]);
      REQUIRE(rec.at("epoch").get<std::size_t>() == i);
      REQUIRE(rec.at("lr").get<double>() > 0.0);
      REQUIRE(rec.contains("loss_cls"));
      REQUIRE(rec.contains("loss_anchor"));
      REQUIRE(rec.contains("loss_center"));
      REQUIRE(rec.contains("loss_total"));
      REQUIRE(rec.contains("eval_accuracy"));
    }
    // eval_every defaults to 1: accuracy present on every line
    REQUIRE_FALSE(json::parse(lines[0]).at("eval_accuracy").is_null());
  }
  SECTION("metrics file carries the held-out report") {
    const json m = json::parse(slurp(t1.metrics_path));
    REQUIRE(m.at("accuracy").get<double>() >= 0.0);
    REQUIRE(m.at("accuracy").get<double>() <= 1.0);
    REQUIRE(m.at("confusion").size() == 3);
    REQUIRE(m.contains("davies_bouldin"));
    REQUIRE(m.contains("primary_std"));
    REQUIRE(m.contains("mean_corrected_confidence"));
  }
  SECTION("a rerun reproduces every artifact byte for byte") {
    const std::string d2 = fresh_dir("tr2");
    const auto t2 = relbal::run_train(tiny_train(d2, gen.manifest_path, 7));
    REQUIRE(slurp(t1.checkpoint_path) == slurp(t2.checkpoint_path));
    REQUIRE(slurp(t1.log_path) == slurp(t2.log_path));
    REQUIRE(slurp(t1.metrics_path) == slurp(t2.metrics_path));
  }
  SECTION("label noise changes the train set but stays reproducible") {
    RunConfig cfg = tiny_train(fresh_dir("tr3"), gen.manifest_path, 7);
    cfg.noise = 30.0;
    const auto t3 = relbal::run_train(cfg);
    cfg.out = fresh_dir("tr4");
    const auto t4 = relbal::run_train(cfg);
    REQUIRE(slurp(t3.checkpoint_path) == slurp(t4.checkpoint_path));
    REQUIRE(slurp(t3.checkpoint_path) != slurp(t1.checkpoint_path));
  }
  SECTION("noise outside the percent range is rejected") {
    RunConfig cfg = tiny_train(fresh_dir("tr5"), gen.manifest_path, 7);
    cfg.noise = 150.0;
    try {
      (void)relbal::run_train(cfg);
      FAIL("expected config error");
    } catch (const relbal::Error& e) {
      REQUIRE(e.kind() == relbal::ErrorKind::config);
    }
  }
  SECTION("explicit train/eval paths override the manifest") {
    RunConfig cfg = tiny_train(fresh_dir("tr6"), "", 7);
    cfg.train_path = gen.train_path;
    cfg.eval_path = gen.test_path;
    const auto t6 = relbal::run_train(cfg);
    REQUIRE(slurp(t6.checkpoint_path) == slurp(t1.checkpoint_path));
  }
  SECTION("missing data sources are config errors") {
    RunConfig cfg = tiny_train(fresh_dir("tr7"), "", 7);
    REQUIRE_THROWS_AS(relbal::run_train(cfg), relbal::Error);
  }
}

TEST_CASE("evaluation command") {
  const auto gen = relbal::run_gen(tiny_gen(fresh_dir("ev_gen"), 9));
  const auto tr = relbal::run_train(tiny_train(fresh_dir("ev_tr"), gen.manifest_path, 9));

  RunConfig cfg;
  cfg.out = fresh_dir("ev1");
  cfg.checkpoint_path = tr.checkpoint_path;
  cfg.data_path = gen.test_path;
  cfg.dump_records = true;
  const auto e1 = relbal::run_eval(cfg);

  SECTION("metrics and records are emitted and deterministic") {
    REQUIRE(fs::exists(e1.metrics_path));
    const json m = json::parse(slurp(e1.metrics_path));
    REQUIRE(m.at("accuracy").get<double>() >= 0.0);
    const auto recs = lines_of(slurp(e1.records_path));
    REQUIRE(recs.size() == 18);
    const json r0 = json::parse(recs[0]);
    for (const char* key : {"primary", "anchor_term", "attentive_term", "fused", "final", "c_l",
                            "c_g", "c_a", "c_t", "predicted", "label"})
      REQUIRE(r0.contains(key));
    double sum = 0.0;
    for (double v : r0.at("final").get<std::vector<double>>()) sum += v;
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));

    cfg.out = fresh_dir("ev2");
    const auto e2 = relbal::run_eval(cfg);
    REQUIRE(slurp(e1.metrics_path) == slurp(e2.metrics_path));
    REQUIRE(slurp(e1.records_path) == slurp(e2.records_path));
  }
  SECTION("anchor-free checkpoints write null anchor terms") {
    RunConfig tcfg = tiny_train(fresh_dir("ev_tr0"), gen.manifest_path, 9);
    tcfg.anchors = 0;
    const auto tr0 = relbal::run_train(tcfg);
    RunConfig ecfg;
    ecfg.out = fresh_dir("ev3");
    ecfg.checkpoint_path = tr0.checkpoint_path;
    ecfg.data_path = gen.test_path;
    ecfg.dump_records = true;
    const auto e3 = relbal::run_eval(ecfg);
    const json r0 = json::parse(lines_of(slurp(e3.records_path))[0]);
    REQUIRE(r0.at("anchor_term").is_null());
    REQUIRE(r0.at("c_g").get<double>() == 0.0);
  }
  SECTION("dimension mismatch is reported as incompatible") {
    RunConfig gcfg = tiny_gen(fresh_dir("ev_gen4"), 9);
    gcfg.dim = 4;
    const auto gen4 = relbal::run_gen(gcfg);
    RunConfig ecfg;
    ecfg.out = fresh_dir("ev4");
    ecfg.checkpoint_path = tr.checkpoint_path;
    ecfg.data_path = gen4.test_path;
    try {
      (void)relbal::run_eval(ecfg);
      FAIL("expected incompatible");
    } catch (const relbal::Error& e) {
      REQUIRE(e.kind() == relbal::ErrorKind::incompatible);
    }
  }
  SECTION("both inputs are mandatory") {
    RunConfig ecfg;
    ecfg.out = fresh_dir("ev5");
    ecfg.data_path = gen.test_path;
    REQUIRE_THROWS_AS(relbal::run_eval(ecfg), relbal::Error);
  }
}

TEST_CASE("sweep command") {
  const auto gen = relbal::run_gen(tiny_gen(fresh_dir("sw_gen"), 3));

  SECTION("one row per value-seed pair on a plain axis") {
    RunConfig cfg = tiny_train(fresh_dir("sw1"), gen.manifest_path, 3);
    cfg.epochs = 1;
    cfg.axis = "anchors";
    cfg.values = "0,2";
    cfg.seeds = "1,2";
    const auto sw = relbal::run_sweep(cfg);
    REQUIRE(sw.rows.size() == 4);
    for (const auto& row : sw.rows) REQUIRE(row.status == "ok");
    REQUIRE(sw.rows[0].anchors == 0);
    REQUIRE(sw.rows[2].anchors == 2);
    const auto results = lines_of(slurp(sw.results_path));
    REQUIRE(results.size() == 5);  // header + 4 rows
    REQUIRE(results[0].rfind("axis,value,anchors,noise,", 0) == 0);
    const auto summary = lines_of(slurp(sw.summary_path));
    REQUIRE(summary.size() == 3);  // header + one line per value
  }
  SECTION("the noise axis crosses the anchor grid") {
    RunConfig cfg = tiny_train(fresh_dir("sw2"), gen.manifest_path, 3);
    cfg.epochs = 1;
    cfg.axis = "noise";
    cfg.values = "0,40";
    cfg.grid_anchors = "0,2";
    const auto sw = relbal::run_sweep(cfg);
    REQUIRE(sw.rows.size() == 4);
    std::size_t with_anchors = 0;
    for (const auto& row : sw.rows)
      if (row.anchors == 2) ++with_anchors;
    REQUIRE(with_anchors == 2);
  }
  SECTION("a failing cell becomes an explicit error row") {
    RunConfig cfg = tiny_train(fresh_dir("sw3"), gen.manifest_path, 3);
    cfg.epochs = 1;
    cfg.axis = "smoothing";
    cfg.values = "0,150";  // 150 is outside the valid smoothing range
    const auto sw = relbal::run_sweep(cfg);
    REQUIRE(sw.rows.size() == 2);
    REQUIRE(sw.rows[0].status == "ok");
    REQUIRE(sw.rows[1].status == "config-error");
    const auto results = lines_of(slurp(sw.results_path));
    REQUIRE(results[2].find("config-error") != std::string::npos);
    // error rows leave the metric columns empty
    REQUIRE(results[2].substr(results[2].size() - 8) == ",,,,,,,,");
  }
  SECTION("scale-factor axis multiplies the anchor-spread weight") {
    RunConfig cfg = tiny_train(fresh_dir("sw4"), gen.manifest_path, 3);
    cfg.epochs = 1;
    cfg.axis = "lambda-a";
    cfg.lambda_a = 0.1;
    cfg.values = "0,10";
    const auto sw = relbal::run_sweep(cfg);
    REQUIRE(sw.rows.size() == 2);
    REQUIRE(sw.rows[0].lambda_a == Catch::Approx(0.0));
    REQUIRE(sw.rows[1].lambda_a == Catch::Approx(1.0));
  }
  SECTION("bad axes and bad anchor counts are config errors") {
    RunConfig cfg = tiny_train(fresh_dir("sw5"), gen.manifest_path, 3);
    cfg.axis = "gamma";
    cfg.values = "1";
    REQUIRE_THROWS_AS(relbal::run_sweep(cfg), relbal::Error);
    cfg.axis = "anchors";
    cfg.values = "1.5";
    REQUIRE_THROWS_AS(relbal::run_sweep(cfg), relbal::Error);
    cfg.values = "-1";
    REQUIRE_THROWS_AS(relbal::run_sweep(cfg), relbal::Error);
  }
}

TEST_CASE("gradient audit command") {
  RunConfig cfg;
  cfg.out = fresh_dir("audit");
  cfg.seed = 13;
  cfg.audit_instances = 4;
  const auto summary = relbal::run_audit(cfg);
  REQUIRE(summary.instances.size() == 4);
  REQUIRE(summary.pass);
  REQUIRE(summary.max_rel_err < 1e-4);
  // the four canned variants all appear
  std::vector<std::string> names;
  for (const auto& inst : summary.instances) names.push_back(inst.variant);
  REQUIRE(std::find(names.begin(), names.end(), "base") != names.end());
  REQUIRE(std::find(names.begin(), names.end(), "no-anchors") != names.end());
  REQUIRE(std::find(names.begin(), names.end(), "single-token") != names.end());
  REQUIRE(std::find(names.begin(), names.end(), "with-reduction") != names.end());
}

TEST_CASE("command-line binary") {
  REQUIRE(fs::exists(RELBAL_CLI_PATH));

  SECTION("gen writes the dataset and reports the paths") {
    const std::string dir = fresh_dir("cli_gen");
    std::string out, err;
    const int rc = run_cli("gen --classes 3 --dim 8 --samples-per-class 6 --test-per-class 3 "
                           "--sigma 0.4 --seed 5 --out " + dir, &out, &err);
    INFO(err);
    REQUIRE(rc == 0);
    REQUIRE(fs::exists(fs::path(dir) / "train.txt"));
    REQUIRE(out.find("train.txt") != std::string::npos);
  }
  SECTION("invalid requests exit nonzero with a classed one-line error") {
    std::string out, err;
    const int rc = run_cli("gen --classes 0 --out " + fresh_dir("cli_bad"), &out, &err);
    REQUIRE(rc == 1);
    const auto errs = lines_of(err);
    REQUIRE(errs.size() == 1);
    REQUIRE(errs[0].rfind("invalid-input:", 0) == 0);
  }
  SECTION("an unknown subcommand fails") {
    std::string out, err;
    REQUIRE(run_cli("frobnicate", &out, &err) != 0);
  }
  SECTION("eval without a checkpoint is a config error") {
    std::string out, err;
    const int rc = run_cli("eval --out " + fresh_dir("cli_ev"), &out, &err);
    REQUIRE(rc == 1);
    REQUIRE(err.rfind("config-error:", 0) == 0);
  }
  SECTION("a missing config file is an io error") {
    std::string out, err;
    const int rc = run_cli("gen --config /nonexistent/relbal.cfg", &out, &err);
    REQUIRE(rc == 1);
    REQUIRE(err.rfind("io-error:", 0) == 0);
  }
  SECTION("flags override the config file") {
    const std::string dir = fresh_dir("cli_cfg");
    const std::string cfg_path = dir + "/run.cfg";
    relbal::write_text_file(cfg_path,
                            "classes = 3\ndim = 8\nsamples-per-class = 6\ntest-per-class = 3\n"
                            "sigma = 0.4\nseed = 9\n");
    std::string out, err;
    const int rc =
        run_cli("gen --config " + cfg_path + " --seed 5 --out " + dir + "/run", &out, &err);
    INFO(err);
    REQUIRE(rc == 0);
    const json m = json::parse(slurp(dir + "/run/manifest.json"));
    REQUIRE(m.at("seed").get<std::uint64_t>() == 5);     // flag wins
    REQUIRE(m.at("classes").get<std::size_t>() == 3);    // file value applies
    REQUIRE(m.at("samples_per_class").get<std::size_t>() == 6);
  }
  SECTION("train and eval complete end to end") {
    const std::string base = fresh_dir("cli_e2e");
    std::string out, err;
    int rc = run_cli("gen --classes 3 --dim 8 --samples-per-class 12 --test-per-class 6 "
                     "--sigma 0.4 --seed 7 --out " + base + "/data", &out, &err);
    REQUIRE(rc == 0);
    rc = run_cli("train --manifest " + base + "/data/manifest.json --epochs 2 --anchors 2 "
                 "--tokens 2 --heads 2 --hidden 16 --class-quota 10 --batch-size 16 --seed 7 "
                 "--out " + base + "/train", &out, &err);
    INFO(err);
    REQUIRE(rc == 0);
    REQUIRE(fs::exists(base + "/train/checkpoint.bin"));
    rc = run_cli("eval --checkpoint " + base + "/train/checkpoint.bin --data " + base +
                 "/data/test.txt --dump-records --out " + base + "/eval", &out, &err);
    INFO(err);
    REQUIRE(rc == 0);
    REQUIRE(fs::exists(base + "/eval/metrics.json"));
    REQUIRE(fs::exists(base + "/eval/records.jsonl"));
    REQUIRE(out.find("accuracy") != std::string::npos);
  }
  SECTION("audit prints one line per instance") {
    std::string out, err;
    const int rc = run_cli("audit --audit-instances 2 --seed 13 --out " + fresh_dir("cli_audit"),
                           &out, &err);
    INFO(err);
    REQUIRE(rc == 0);
    REQUIRE(lines_of(out).size() >= 2);
    REQUIRE(out.find("max rel err") != std::string::npos);
  }
}
