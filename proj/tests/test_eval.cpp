#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "glsasm/eval.hpp"
#include "glsasm/phantom.hpp"
#include "support.hpp"

using namespace glsasm;

namespace {

// Dense sampling of the polyline, independent of the segment projection.
double sampled_distance(Complex p, const LandmarkVector& contour, bool closed) {
  const Eigen::Index n = contour.size();
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < (closed ? n : n - 1); ++i) {
    const Complex a = contour[i];
    const Complex b = contour[(i + 1) % n];
    for (int k = 0; k <= 20000; ++k) best = std::min(best, std::abs(p - (a + (k / 20000.0) * (b - a))));
  }
  return best;
}

std::vector<LabeledImage> corpus(std::uint64_t seed, int count, const std::string& occlusion = "") {
  PhantomConfig pc;
  pc.seed = seed;
  if (!occlusion.empty()) pc.occlusions = parse_occlusion_list(occlusion);
  return generate_corpus(pc, count);
}

LooConfig quick_config() {
  LooConfig cfg;
  cfg.max_iterations = 15;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("point to contour distance examples") {
  LandmarkVector square(4);
  square << Complex(0, 0), Complex(10, 0), Complex(10, 10), Complex(0, 10);
  CHECK(point_to_contour_distance(Complex(5, 0), square, true) == 0.0);
  CHECK(point_to_contour_distance(Complex(5, 3), square, true) == 3.0);
  CHECK(point_to_contour_distance(Complex(-3, -4), square, true) == 5.0);
  // The closing edge x = 0 only counts on a closed contour.
  CHECK(point_to_contour_distance(Complex(1, 5), square, true) == 1.0);
  CHECK(point_to_contour_distance(Complex(1, 5), square, false) == 5.0);
  CHECK_ERROR_KIND(point_to_contour_distance(Complex(0, 0), square.head(1), true), ErrorKind::InvariantViolation);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const LandmarkVector c = testing::random_shape(rng, 6, 10.0);
    const Complex p = testing::random_complex(rng, 12.0);
    const bool closed = trial % 2 == 0;
    const double exact = point_to_contour_distance(p, c, closed);
    CHECK(exact <= sampled_distance(p, c, closed) + 1e-12);
    CHECK(sampled_distance(p, c, closed) - exact < 5e-3);
  }
}

TEST_CASE("identical phantoms leave no shape variance") {
  PhantomConfig pc;
  const Phantom ph = generate_phantom(pc);
  std::vector<LabeledImage> same;
  for (int i = 0; i < 5; ++i) same.push_back({i, ph.image, ph.landmarks, ph.occlusions});
  const LooReport r = run_leave_one_out(same, {Strategy::Identity}, quick_config());
  CHECK(r.image_ids.empty());
  REQUIRE(r.failures.size() == 5u);
  for (const auto& f : r.failures) CHECK(f.message.find("NoVariance") != std::string::npos);
  CHECK_ERROR_KIND(run_leave_one_out({same[0], same[1], same[2]}, {Strategy::Identity}, quick_config()),
                   ErrorKind::InsufficientData);
}

TEST_CASE("leave-one-out over 30 phantoms gives finite per-landmark errors") {
  const auto samples = corpus(30, 30, "25-31");
  LooConfig cfg = quick_config();
  cfg.occluded_landmarks = {25, 26, 27, 28, 29, 30, 31};
  const LooReport r = run_leave_one_out(samples, {Strategy::Identity, Strategy::GlsDiagonal}, cfg);
  CHECK(r.failures.empty());
  CHECK(r.image_ids.size() == 30u);
  REQUIRE(r.strategies.size() == 2u);
  for (const auto& s : r.strategies) {
    CHECK(s.rmse.size() == 40);
    CHECK(s.rmse.allFinite());
    CHECK(s.image_errors.size() == 30u);
    // rmse is the root mean square of the per-image errors.
    double ms = 0.0;
    for (const auto& e : s.image_errors) ms += e[3] * e[3];
    CHECK(std::abs(s.rmse[3] - std::sqrt(ms / 30.0)) < 1e-12);
    for (int it : s.iterations) CHECK(it == 15);
  }
  CHECK(&r.find(Strategy::GlsDiagonal) == &r.strategies[1]);
  CHECK_ERROR_KIND(r.find(Strategy::YangTrace), ErrorKind::ConfigError);
  const double occluded = r.find(Strategy::Identity).group_rmse(cfg.occluded_landmarks);
  double manual = 0.0;
  for (int i : cfg.occluded_landmarks) manual += r.strategies[0].rmse[i];
  CHECK(std::abs(occluded - manual / 7.0) < 1e-15);
}

TEST_CASE("leave-one-out results do not depend on threads or sample order") {
  const auto samples = corpus(31, 10);
  LooConfig cfg = quick_config();
  const std::vector<Strategy> strategies{Strategy::ZhaoInverseDistance, Strategy::GlsDiagonal};
  const LooReport one = run_leave_one_out(samples, strategies, cfg);
  cfg.threads = 3;
  const LooReport three = run_leave_one_out(samples, strategies, cfg);
  std::vector<LabeledImage> shuffled(samples.rbegin(), samples.rend());
  const LooReport reversed = run_leave_one_out(shuffled, strategies, cfg);
  CHECK(format_results_table(one) == format_results_table(three));
  CHECK(format_results_table(one) == format_results_table(reversed));
  for (std::size_t k = 0; k < strategies.size(); ++k) {
    CHECK(one.strategies[k].rmse == three.strategies[k].rmse);
    CHECK(one.strategies[k].rmse == reversed.strategies[k].rmse);
  }
  CHECK(one.provenance.count("threads") == 0u);
}

TEST_CASE("fold failures are recorded instead of thrown") {
  auto samples = corpus(32, 8);
  LooConfig cfg = quick_config();
  const LooReport clean = run_leave_one_out(samples, {Strategy::Identity}, cfg);
  // Image 3 no longer contains its landmarks, so every fold that trains on it fails.
  samples[3].image = Image(16, 16, 0.5);
  const LooReport hurt = run_leave_one_out(samples, {Strategy::Identity}, cfg);
  CHECK(hurt.image_ids == std::vector<int>{3});
  REQUIRE(hurt.failures.size() == 7u);
  for (const auto& f : hurt.failures) CHECK(f.message.find("OutOfBounds") != std::string::npos);
  CHECK(hurt.strategies[0].rmse.allFinite());
  CHECK(clean.failures.empty());
}

TEST_CASE("report rendering") {
  LooReport empty;
  empty.provenance = {{"seed", "1"}};
  CHECK(format_results_table(empty) == "# glsasm leave-one-out results\n# seed=1\nlandmark\tstrategy\trmse\n");

  const auto samples = corpus(33, 6, "25-31");
  LooConfig cfg = quick_config();
  cfg.occluded_landmarks = {25, 26, 27, 28, 29, 30, 31};
  const LooReport r = run_leave_one_out(samples, {Strategy::Identity, Strategy::YangTrace}, cfg);
  const std::string table = format_results_table(r);
  const std::string summary = format_summary(r);
  CHECK(std::count(table.begin(), table.end(), '\n') == 1 + static_cast<long>(r.provenance.size()) + 1 + 80);
  CHECK(summary.find("folds 6 succeeded, 0 failed") != std::string::npos);

  // The summary mean matches the mean over the table rows.
  std::istringstream in(table);
  std::string line;
  double sum = 0.0;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("landmark", 0) == 0) continue;
    if (line.find("\tyang\t") == std::string::npos) continue;
    sum += std::stod(line.substr(line.rfind('\t') + 1));
    ++rows;
  }
  CHECK(rows == 40);
  const auto pos = summary.find("\nyang\t");
  REQUIRE(pos != std::string::npos);
  const double mean = std::stod(summary.substr(pos + 6));
  CHECK(std::abs(mean - sum / 40.0) < 1e-4 * std::max(1.0, mean));

  const auto dir = std::filesystem::temp_directory_path() / "glsasm_test_eval_report";
  std::filesystem::remove_all(dir);
  render_report(r, dir);
  CHECK(std::filesystem::exists(dir / "results.tsv"));
  CHECK(std::filesystem::exists(dir / "summary.txt"));
  write_file(dir / "blocker", "x");
  CHECK_ERROR_KIND(render_report(r, dir / "blocker" / "sub"), ErrorKind::IoError);
}

TEST_CASE("gate histogram: searches that straddle the truth are valid and mostly pass") {
  const auto samples = corpus(34, 12);
  GateHistogramConfig cfg;
  cfg.base = quick_config();
  cfg.iterations = 1;
  cfg.truth_offset = cfg.base.profiles.search_half_width - 1;
  const GateHistogram h = gate_histogram_experiment(samples, cfg);
  const double total = static_cast<double>(h.valid_samples.size() + h.invalid_samples.size());
  CHECK(total == 12.0 * 40.0);
  CHECK(h.valid_samples.size() >= 0.99 * total);
  CHECK(h.edges.size() == 41u);
  CHECK(h.edges.back() == doctest::Approx(4.0 * h.critical_value));
  double mass = 0.0;
  for (double d : h.density_valid) mass += d * (h.edges[1] - h.edges[0]);
  const double beyond = static_cast<double>(std::count_if(h.valid_samples.begin(), h.valid_samples.end(),
                                                          [&](double v) { return v >= h.edges.back(); }));
  CHECK(std::abs(mass + beyond / static_cast<double>(h.valid_samples.size()) - 1.0) < 1e-12);
  CHECK(h.chi_square_density.size() == 40u);
}

TEST_CASE("gate histogram: fully occluded images yield no valid samples") {
  auto samples = corpus(35, 8);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& s : samples) {
    for (double& v : s.image.pixels) v = unit(rng);
    s.occlusions = {Rect{-1000, -1000, 1000, 1000}};
  }
  GateHistogramConfig cfg;
  cfg.base = quick_config();
  cfg.iterations = 2;
  const GateHistogram h = gate_histogram_experiment(samples, cfg);
  CHECK(h.valid_samples.empty());
  CHECK(h.invalid_samples.size() > 0u);
  CHECK(h.coverage_valid == 0.0);
  CHECK(h.ks_valid == 1.0);
}

TEST_CASE("chi-square KS distance") {
  CHECK(ks_distance_chi_square({}, 10) == 1.0);
  // A single sample at the median sits half a step from the empirical CDF.
  CHECK(ks_distance_chi_square({9.341817765591966}, 10) == doctest::Approx(0.5).epsilon(1e-9));
  std::mt19937_64 rng(4);
  std::chi_squared_distribution<double> chi(10.0);
  std::vector<double> draws;
  for (int i = 0; i < 20000; ++i) draws.push_back(chi(rng));
  CHECK(ks_distance_chi_square(draws, 10) < 0.015);
  for (double& d : draws) d *= 1.5;
  CHECK(ks_distance_chi_square(draws, 10) > 0.1);
}
