#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>

#include "glsasm/io.hpp"
#include "support.hpp"

using namespace glsasm;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "glsasm_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run(const std::string& args, const std::string& env = "") {
  const fs::path out = work_dir() / "stdout.txt";
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = env + " \"" GLSASM_CLI_PATH "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

int count_files(const fs::path& dir, const std::string& ext) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

// A small corpus shared by the later cases.
const std::string& corpus() {
  static const std::string manifest = [] {
    const Run r = run("synth --out " + path("corpus") + " --count 12 --size 240 --occlude 25-31 --seed 3");
    REQUIRE(r.code == 0);
    return path("corpus") + "/manifest.tsv";
  }();
  return manifest;
}

const std::string& trained_model() {
  static const std::string model = [] {
    REQUIRE(run("train --data " + corpus() + " --out " + path("model.json")).code == 0);
    return path("model.json");
  }();
  return model;
}

const std::string& calibrated_model() {
  static const std::string model = [] {
    REQUIRE(run("calibrate --data " + corpus() + " --model " + trained_model() + " --out " + path("cal.json")).code == 0);
    return path("cal.json");
  }();
  return model;
}

double value_after(const std::string& text, const std::string& key) {
  const auto pos = text.find(key);
  REQUIRE(pos != std::string::npos);
  return std::stod(text.substr(pos + key.size()));
}

}  // namespace

TEST_CASE("synth writes a deterministic corpus") {
  REQUIRE(run("synth --out " + path("s1") + " --count 4 --size 96").code == 0);
  CHECK(count_files(path("s1"), ".pgm") == 4);
  CHECK(count_files(path("s1"), ".txt") == 4);
  CHECK(fs::exists(path("s1") + "/manifest.tsv"));
  REQUIRE(run("synth --out " + path("s2") + " --count 4 --size 96").code == 0);
  CHECK(read_file(path("s1") + "/manifest.tsv") == read_file(path("s2") + "/manifest.tsv"));
  CHECK(read_file(path("s1") + "/phantom_0002.pgm") == read_file(path("s2") + "/phantom_0002.pgm"));
  REQUIRE(run("synth --out " + path("s3") + " --count 4 --size 96 --seed 1").code == 0);
  CHECK(read_file(path("s1") + "/phantom_0002.pgm") != read_file(path("s3") + "/phantom_0002.pgm"));

  CHECK(run("synth --out " + path("s0") + " --count 0").code == 1);
  const Run again = run("synth --out " + path("s1") + " --count 4 --size 96");
  CHECK(again.code == 2);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(run("synth --out " + path("s1") + " --count 3 --size 96 --force").code == 0);
  CHECK(load_manifest(path("s1") + "/manifest.tsv").entries.size() == 3u);
  CHECK(run("synth").code == 1);
  CHECK(run("frobnicate").code == 1);
}

TEST_CASE("train produces a loadable model") {
  const Run r = run("train --data " + corpus() + " --out " + path("t.json"));
  REQUIRE(r.code == 0);
  const ModelBundle b = load_model(path("t.json"));
  CHECK(b.pdm.n_landmarks() == 40);
  CHECK(static_cast<int>(value_after(r.out, "modes p = ")) == b.pdm.n_modes());
  CHECK(r.out.find("landmark\tprofile_condition") != std::string::npos);

  const Run full = run("train --data " + corpus() + " --out " + path("t1.json") + " --variance 1.0");
  REQUIRE(full.code == 0);
  // Every mode with nonzero variance is kept: the phantom shapes only vary in
  // a few radial modes, far fewer than min(2N, M - 1) = 11.
  CHECK(value_after(full.out, "retained variance = ") == doctest::Approx(1.0));
  const int p_full = load_model(path("t1.json")).pdm.n_modes();
  CHECK(p_full >= b.pdm.n_modes());
  CHECK(p_full <= 11);

  REQUIRE(run("synth --out " + path("single") + " --count 1 --size 96").code == 0);
  CHECK(run("train --data " + path("single") + "/manifest.tsv --out " + path("x.json")).code == 2);
  CHECK(run("train --data " + path("nowhere") + "/manifest.tsv --out " + path("x.json")).code == 2);
}

TEST_CASE("calibrate stores the covariance and the gate") {
  REQUIRE(run("synth --out " + path("clean") + " --count 10 --size 240 --noise 0.02").code == 0);
  const std::string data = path("clean") + "/manifest.tsv";
  REQUIRE(run("train --data " + data + " --out " + path("c.json")).code == 0);
  const Run r = run("calibrate --data " + data + " --model " + path("c.json"));
  REQUIRE(r.code == 0);
  const ModelBundle b = load_model(path("c.json"));
  REQUIRE(b.calibration.has_value());
  CHECK(b.calibration->record_count == 5 * 5);
  std::istringstream stds(r.out.substr(r.out.find("min/median/max = ") + 17));
  double lo = 0, mid = 0, hi = 0;
  stds >> lo >> mid >> hi;
  CHECK(mid < 1.0);

  boost::math::chi_squared dist(10);
  const double oracle = boost::math::quantile(boost::math::complement(dist, 0.10));
  CHECK(std::abs(value_after(r.out, "critical value = ") - oracle) < 1e-6);
  CHECK(std::abs(b.gate.critical_value - oracle) < 1e-6);

  const Run full = run("calibrate --data " + data + " --model " + path("c.json") + " --out " + path("cf.json") + " --full");
  CHECK(full.code == 0);
  CHECK(full.err.find("warning") != std::string::npos);
  CHECK_FALSE(load_model(path("cf.json")).calibration->diagonal_only);
  CHECK(run("calibrate --data " + data + " --model " + path("c.json") + " --full --diagonal").code == 1);
}

TEST_CASE("segment writes landmarks and a trace") {
  const std::string model = trained_model();
  const std::string image = path("corpus") + "/phantom_0000.pgm";
  const Run r2 = run("segment --model " + model + " --image " + image + " --out " + path("seg.txt") +
                     " --strategy identity --iters 12 --trace " + path("trace.txt"));
  REQUIRE(r2.code == 0);
  CHECK(load_landmarks(path("seg.txt")).size() == 40);
  CHECK(read_file(path("seg.txt")).rfind("# ", 0) == 0);
  std::istringstream trace(read_file(path("trace.txt")));
  std::string line;
  int rows = 0;
  while (std::getline(trace, line)) rows += !line.empty() && line[0] != '#';
  CHECK(rows == static_cast<int>(value_after(r2.out, "iterations = ")));
  CHECK(rows == 12);

  const Run uncal = run("segment --model " + model + " --image " + image + " --out " + path("seg2.txt"));
  CHECK(uncal.code == 1);
  CHECK(uncal.err.find("calibrate") != std::string::npos);
  CHECK(run("segment --model " + calibrated_model() + " --image " + image + " --out " + path("seg3.txt") + " --iters 5").code == 0);
  CHECK(run("segment --model " + model + " --image " + image + " --out " + path("seg4.txt") +
            " --strategy identity --init " + path("corpus") + "/phantom_0001.txt --iters 3").code == 0);
  CHECK(run("segment --model " + model + " --image " + path("missing.pgm") + " --out " + path("s.txt")).code == 2);
}

TEST_CASE("evaluate is deterministic and validates strategy names") {
  const std::string args = "evaluate --data " + corpus() + " --iters 10 --strategies identity,gls_diagonal";
  const Run a = run(args + " --out " + path("ev1"));
  REQUIRE(a.code == 0);
  CHECK(a.out.find("folds 12 succeeded, 0 failed") != std::string::npos);
  const Run b = run(args + " --out " + path("ev2") + " --threads 2");
  REQUIRE(b.code == 0);
  CHECK(read_file(path("ev1") + "/results.tsv") == read_file(path("ev2") + "/results.tsv"));
  CHECK(read_file(path("ev1") + "/summary.txt") == read_file(path("ev2") + "/summary.txt"));
  const std::string table = read_file(path("ev1") + "/results.tsv");
  CHECK(table.find("# manifest_checksum=" + load_manifest(corpus()).manifest_checksum()) != std::string::npos);
  CHECK(table.find("# seed=0") != std::string::npos);

  const Run bad = run("evaluate --data " + corpus() + " --out " + path("ev3") + " --strategies identity,ols");
  CHECK(bad.code == 1);
  for (const char* name : {"identity", "zhao", "yang", "gls_diagonal", "gls_full"}) {
    CHECK(bad.err.find(name) != std::string::npos);
  }
}

TEST_CASE("configuration file and environment variables") {
  write_file(path("run.ini"), "seed = 9\n[synth]\ncount = 3\nsize = 80\n");
  REQUIRE(run("--config " + path("run.ini") + " synth --out " + path("cfg")).code == 0);
  CHECK(count_files(path("cfg"), ".pgm") == 3);
  const Dataset ds = load_manifest(path("cfg") + "/manifest.tsv");
  CHECK(ds.provenance.at("seed") == "9");

  REQUIRE(run("synth --out " + path("env") + " --count 2 --size 80", "GLSASM_SEED=9").code == 0);
  CHECK(read_file(path("env") + "/phantom_0001.pgm") == read_file(path("cfg") + "/phantom_0001.pgm"));
  CHECK(run("synth --out " + path("env2") + " --count 2 --size 80", "GLSASM_THREADS=0").code == 1);
}

TEST_CASE("gate-histogram writes a density table") {
  const Run r = run("gate-histogram --data " + corpus() + " --out " + path("hist.tsv") + " --iters 2 --bins 10");
  REQUIRE(r.code == 0);
  std::istringstream in(read_file(path("hist.tsv")));
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) rows += !line.empty() && line[0] != '#';
  CHECK(rows == 11);  // header plus one row per bin
  CHECK(r.out.find("ks valid") != std::string::npos);
}
