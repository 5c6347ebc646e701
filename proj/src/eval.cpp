#include "glsasm/eval.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "glsasm/chi_square.hpp"
#include "glsasm/error.hpp"

namespace glsasm {

double point_to_contour_distance(Complex p, const LandmarkVector& contour, bool closed) {
  const Eigen::Index n = contour.size();
  if (n < 2) throw Error(ErrorKind::InvariantViolation, "a contour needs at least 2 points");
  double best = std::numeric_limits<double>::infinity();
  const Eigen::Index segments = closed ? n : n - 1;
  for (Eigen::Index i = 0; i < segments; ++i) {
    const Complex a = contour[i];
    const Complex b = contour[(i + 1) % n];
    const Complex ab = b - a;
    const double len2 = std::norm(ab);
    double t = len2 > 0.0 ? ((p - a) * std::conj(ab)).real() / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, std::abs(p - (a + t * ab)));
  }
  return best;
}

double StrategyReport::group_rmse(const std::vector<int>& landmarks) const {
  if (landmarks.empty()) return 0.0;
  double sum = 0.0;
  for (int i : landmarks) sum += rmse[i];
  return sum / static_cast<double>(landmarks.size());
}

const StrategyReport& LooReport::find(Strategy s) const {
  for (const auto& r : strategies) {
    if (r.strategy == s) return r;
  }
  throw Error(ErrorKind::ConfigError, "strategy " + std::string(strategy_name(s)) + " is not part of the report");
}

Provenance LooConfig::provenance() const {
  Provenance p;
  p["seed"] = std::to_string(seed);
  p["variance_fraction"] = fmt::format("{}", pdm.variance_fraction);
  p["xi"] = fmt::format("{}", pdm.xi);
  p["profile_len"] = std::to_string(profiles.profile_len);
  p["search_half_width"] = std::to_string(profiles.search_half_width);
  p["profile_shrinkage"] = fmt::format("{}", profiles.shrinkage);
  p["closed"] = profiles.closed ? "1" : "0";
  p["draws"] = std::to_string(perturbation.draws);
  p["max_offset"] = fmt::format("{}", perturbation.max_offset);
  p["perturbation_seed"] = std::to_string(perturbation.seed);
  p["alpha"] = fmt::format("{}", alpha);
  p["gate_enabled"] = gate_enabled ? "1" : "0";
  p["gate_baselines"] = gate_baselines ? "1" : "0";
  p["gate_fallback"] = gate_fallback ? "1" : "0";
  p["iterations"] = std::to_string(max_iterations);
  p["inner_alternations"] = std::to_string(inner_alternations);
  p["convergence_tol"] = fmt::format("{}", convergence_tol);
  p["diagonal_shrinkage"] = fmt::format("{}", diagonal_shrinkage);
  p["full_shrinkage"] = fmt::format("{}", full_shrinkage);
  p["centered_residuals"] = centered_residuals ? "1" : "0";
  p["scale_fraction"] = fmt::format("{}", placement.scale_fraction);
  return p;
}

TrainedModels train_models(const std::vector<const LabeledImage*>& training, const LooConfig& config,
                           bool calibrate, std::uint64_t calibration_seed) {
  std::vector<LandmarkVector> shapes;
  std::vector<const Image*> images;
  for (const auto* s : training) {
    shapes.push_back(s->landmarks);
    images.push_back(&s->image);
  }
  TrainedModels models;
  const ProcrustesResult aligned = procrustes_align(shapes);
  models.pdm = train_pdm(aligned.aligned, config.pdm);
  models.profiles = train_profiles(images, shapes, config.profiles);
  if (calibrate) {
    std::vector<const LabeledImage*> sorted = training;
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
    std::vector<const LabeledImage*> half_a;
    std::vector<const LabeledImage*> half_b;
    for (const auto* s : sorted) (s->id % 2 == 0 ? half_a : half_b).push_back(s);
    PerturbationConfig perturbation = config.perturbation;
    perturbation.seed = calibration_seed;
    const auto records = simulate_residuals(half_a, half_b, config.profiles, perturbation);
    Calibration cal;
    cal.r_hat = sample_residual_covariance(records, config.centered_residuals);
    cal.record_count = static_cast<int>(records.size());
    cal.centered = config.centered_residuals;
    cal.diagonal_only = true;
    cal.shrinkage = config.diagonal_shrinkage;
    models.calibration = std::move(cal);
  }
  return models;
}

WeightSpec make_weight_spec(Strategy strategy, const TrainedModels& models, const LooConfig& config) {
  WeightSpec spec;
  spec.strategy = strategy;
  spec.gate = GateConfig::make(config.alpha, config.profiles.effective_len(), models.pdm.n_landmarks());
  spec.gate.enabled = config.gate_enabled;
  spec.gate.fallback = config.gate_fallback;
  spec.gate_baselines = config.gate_baselines;
  if (needs_covariance(strategy)) {
    if (!models.calibration) throw Error(ErrorKind::ConfigError, "strategy needs a residual calibration");
    const bool diagonal = strategy == Strategy::GlsDiagonal;
    const auto& cal = *models.calibration;
    spec.covariance = regularize_covariance(cal.r_hat, diagonal, diagonal ? config.diagonal_shrinkage : config.full_shrinkage,
                                            cal.record_count, cal.centered);
  }
  return spec;
}

namespace {

std::uint64_t fold_seed(std::uint64_t seed, int id) {
  return seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(id + 1));
}

struct FoldOutcome {
  bool ok = false;
  std::string error;
  std::vector<Eigen::VectorXd> errors;  // per strategy
  std::vector<int> iterations;
  std::vector<double> mean_valid;
};

// Runs fn(i) for i in [0, count) on up to `threads` workers. The exception of
// the lowest failing index, if any, is rethrown after all workers finish.
template <class Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(count, 0)));
  const auto guarded = [&](int i) {
    try {
      fn(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  };
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) guarded(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int i = next++; i < count; i = next++) guarded(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

LooReport run_leave_one_out(const std::vector<LabeledImage>& samples, const std::vector<Strategy>& strategies,
                            const LooConfig& config) {
  if (samples.size() < 4) throw Error(ErrorKind::InsufficientData, "leave-one-out needs at least 4 images");
  const Eigen::Index n = samples.front().landmarks.size();
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return samples[a].id < samples[b].id; });

  const bool calibrate = std::any_of(strategies.begin(), strategies.end(), needs_covariance);
  std::vector<FoldOutcome> outcomes(samples.size());
  parallel_for(static_cast<int>(order.size()), config.threads, [&](int fold) {
    const LabeledImage& test = samples[order[static_cast<std::size_t>(fold)]];
    FoldOutcome& out = outcomes[static_cast<std::size_t>(fold)];
    try {
      std::vector<const LabeledImage*> training;
      for (std::size_t k : order) {
        if (samples[k].id != test.id) training.push_back(&samples[k]);
      }
      const TrainedModels models = train_models(training, config, calibrate, fold_seed(config.seed, test.id));
      const LandmarkVector init = initialize_from_mean(test.image, models.pdm, config.placement);
      for (Strategy s : strategies) {
        AsmConfig asm_config;
        asm_config.max_iterations = config.max_iterations;
        asm_config.inner_alternations = config.inner_alternations;
        asm_config.convergence_tol = config.convergence_tol;
        asm_config.weight_spec = make_weight_spec(s, models, config);
        asm_config.seed = fold_seed(config.seed, test.id);
        const SegmentResult seg = asm_segment(test.image, init, models.pdm, models.profiles, asm_config);
        Eigen::VectorXd err(n);
        for (Eigen::Index i = 0; i < n; ++i) {
          err[i] = point_to_contour_distance(seg.fit.landmarks[i], test.landmarks, config.profiles.closed);
        }
        double valid = 0.0;
        for (const auto& t : seg.trace) valid += static_cast<double>(t.valid_count);
        out.errors.push_back(std::move(err));
        out.iterations.push_back(static_cast<int>(seg.trace.size()));
        out.mean_valid.push_back(seg.trace.empty() ? 0.0 : valid / static_cast<double>(seg.trace.size()));
      }
      out.ok = true;
    } catch (const Error& e) {
      out.error = e.what();
    }
  });

  LooReport report;
  report.n_landmarks = static_cast<int>(n);
  report.seed = config.seed;
  report.occluded_landmarks = config.occluded_landmarks;
  report.provenance = config.provenance();
  for (Strategy s : strategies) {
    StrategyReport r;
    r.strategy = s;
    r.rmse = Eigen::VectorXd::Zero(n);
    report.strategies.push_back(std::move(r));
  }
  for (std::size_t fold = 0; fold < order.size(); ++fold) {
    const FoldOutcome& out = outcomes[fold];
    const int id = samples[order[fold]].id;
    if (!out.ok) {
      report.failures.push_back({id, out.error});
      continue;
    }
    report.image_ids.push_back(id);
    for (std::size_t k = 0; k < strategies.size(); ++k) {
      auto& r = report.strategies[k];
      r.rmse += out.errors[k].array().square().matrix();
      r.image_errors.push_back(out.errors[k]);
      r.iterations.push_back(out.iterations[k]);
      r.mean_valid.push_back(out.mean_valid[k]);
    }
  }
  if (!report.image_ids.empty()) {
    for (auto& r : report.strategies) {
      r.rmse = (r.rmse / static_cast<double>(report.image_ids.size())).cwiseSqrt();
    }
  }
  return report;
}

double ks_distance_chi_square(std::vector<double> samples, double dof) {
  if (samples.empty()) return 1.0;
  std::sort(samples.begin(), samples.end());
  const double count = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = chi_square_cdf(samples[i], dof);
    d = std::max({d, std::abs(f - static_cast<double>(i) / count), std::abs(f - static_cast<double>(i + 1) / count)});
  }
  return d;
}

namespace {

// Parameter along [p, q] where it crosses segment [a, b], if it does.
std::optional<Complex> segment_intersection(Complex p, Complex q, Complex a, Complex b) {
  const Complex r = q - p;
  const Complex s = b - a;
  const double denom = r.real() * s.imag() - r.imag() * s.real();
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const Complex ap = a - p;
  const double t = (ap.real() * s.imag() - ap.imag() * s.real()) / denom;
  const double u = (ap.real() * r.imag() - ap.imag() * r.real()) / denom;
  if (t < 0.0 || t > 1.0 || u < 0.0 || u > 1.0) return std::nullopt;
  return p + t * r;
}

bool truth_in_view(Complex from, Complex to, const LabeledImage& sample, bool closed) {
  const Eigen::Index n = sample.landmarks.size();
  const Eigen::Index segments = closed ? n : n - 1;
  for (Eigen::Index i = 0; i < segments; ++i) {
    const auto hit = segment_intersection(from, to, sample.landmarks[i], sample.landmarks[(i + 1) % n]);
    if (!hit) continue;
    const bool hidden = std::any_of(sample.occlusions.begin(), sample.occlusions.end(),
                                    [&](const Rect& r) { return r.contains(*hit); });
    if (!hidden) return true;
  }
  return false;
}

}  // namespace

GateHistogram gate_histogram_experiment(const std::vector<LabeledImage>& samples, const GateHistogramConfig& config) {
  if (samples.size() < 4) throw Error(ErrorKind::InsufficientData, "the gate experiment needs at least 4 images");
  const LooConfig& base = config.base;
  const int s = base.profiles.search_half_width;

  GateHistogram out;
  out.dof = base.profiles.effective_len();
  out.critical_value = chi_square_upper_quantile(base.alpha, out.dof);

  // Leave-one-out: each image is searched with models trained on the others.
  std::vector<std::vector<double>> fold_valid(samples.size());
  std::vector<std::vector<double>> fold_invalid(samples.size());
  parallel_for(static_cast<int>(samples.size()), base.threads, [&](int fold) {
    const LabeledImage& test = samples[static_cast<std::size_t>(fold)];
    std::vector<const LabeledImage*> training;
    for (const auto& sample : samples) {
      if (&sample != &test) training.push_back(&sample);
    }
    const TrainedModels models = train_models(training, base, false, 0);
    AsmConfig asm_config;
    asm_config.max_iterations = config.iterations;
    asm_config.inner_alternations = base.inner_alternations;
    asm_config.convergence_tol = 0.0;
    asm_config.weight_spec = make_weight_spec(Strategy::Identity, models, base);
    LandmarkVector init;
    if (config.truth_offset >= 0.0) {
      std::mt19937_64 rng(base.seed ^ static_cast<std::uint64_t>(test.id));
      std::uniform_real_distribution<double> offset(-config.truth_offset, config.truth_offset);
      const LandmarkVector normals = contour_normals(test.landmarks, base.profiles.closed);
      init = test.landmarks;
      for (Eigen::Index i = 0; i < init.size(); ++i) init[i] += offset(rng) * normals[i];
    } else {
      init = initialize_from_mean(test.image, models.pdm, base.placement);
    }
    auto& valid = fold_valid[static_cast<std::size_t>(fold)];
    auto& invalid = fold_invalid[static_cast<std::size_t>(fold)];
    asm_segment(test.image, init, models.pdm, models.profiles, asm_config,
                [&](int, const LandmarkVector& current, const DetectionResult& det) {
                  for (Eigen::Index i = 0; i < det.size(); ++i) {
                    const double d = det.distances[i];
                    if (!std::isfinite(d)) continue;
                    const Complex from = current[i] - static_cast<double>(s) * det.normals[i];
                    const Complex to = current[i] + static_cast<double>(s) * det.normals[i];
                    (truth_in_view(from, to, test, base.profiles.closed) ? valid : invalid).push_back(d);
                  }
                });
  });
  for (std::size_t k = 0; k < samples.size(); ++k) {
    out.valid_samples.insert(out.valid_samples.end(), fold_valid[k].begin(), fold_valid[k].end());
    out.invalid_samples.insert(out.invalid_samples.end(), fold_invalid[k].begin(), fold_invalid[k].end());
  }

  const double top = config.max_value > 0 ? config.max_value : 4.0 * out.critical_value;
  const int bins = std::max(1, config.bins);
  const double width = top / bins;
  for (int b = 0; b <= bins; ++b) out.edges.push_back(b * width);
  const auto histogram = [&](const std::vector<double>& values) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (double v : values) {
      const int b = static_cast<int>(v / width);
      if (b >= 0 && b < bins) h[static_cast<std::size_t>(b)] += 1.0;
    }
    if (!values.empty()) {
      for (double& x : h) x /= static_cast<double>(values.size()) * width;
    }
    return h;
  };
  out.density_valid = histogram(out.valid_samples);
  out.density_invalid = histogram(out.invalid_samples);
  for (int b = 0; b < bins; ++b) out.chi_square_density.push_back(chi_square_pdf((b + 0.5) * width, out.dof));
  const auto coverage = [&](const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const auto inside = std::count_if(values.begin(), values.end(), [&](double v) { return v <= out.critical_value; });
    return static_cast<double>(inside) / static_cast<double>(values.size());
  };
  out.coverage_valid = coverage(out.valid_samples);
  out.coverage_invalid = coverage(out.invalid_samples);
  out.ks_valid = ks_distance_chi_square(out.valid_samples, out.dof);
  return out;
}

std::string format_results_table(const LooReport& report) {
  std::string out = "# glsasm leave-one-out results\n";
  for (const auto& [k, v] : report.provenance) out += fmt::format("# {}={}\n", k, v);
  out += "landmark\tstrategy\trmse\n";
  for (const auto& r : report.strategies) {
    for (Eigen::Index i = 0; i < r.rmse.size(); ++i) {
      out += fmt::format("{}\t{}\t{:.6g}\n", i, strategy_name(r.strategy), r.rmse[i]);
    }
  }
  return out;
}

std::string format_summary(const LooReport& report) {
  std::string out = "glsasm leave-one-out summary\n";
  for (const auto& [k, v] : report.provenance) out += fmt::format("config {}={}\n", k, v);
  out += fmt::format("folds {} succeeded, {} failed\n", report.image_ids.size(), report.failures.size());
  for (const auto& f : report.failures) out += fmt::format("failed fold {}: {}\n", f.image_id, f.message);
  std::vector<int> clear;
  for (int i = 0; i < report.n_landmarks; ++i) {
    if (std::find(report.occluded_landmarks.begin(), report.occluded_landmarks.end(), i) == report.occluded_landmarks.end()) {
      clear.push_back(i);
    }
  }
  out += "strategy\tmean_rmse\toccluded_rmse\tclear_rmse\tmean_iterations\tmean_valid\n";
  for (const auto& r : report.strategies) {
    double iters = 0.0;
    double valid = 0.0;
    for (int it : r.iterations) iters += it;
    for (double v : r.mean_valid) valid += v;
    const double folds = std::max<double>(1.0, static_cast<double>(r.iterations.size()));
    out += fmt::format("{}\t{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\n", strategy_name(r.strategy), r.mean_rmse(),
                       r.group_rmse(report.occluded_landmarks), r.group_rmse(clear), iters / folds, valid / folds);
  }
  return out;
}

void render_report(const LooReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::IoError, out_dir.string() + ": " + ec.message());
  write_file(out_dir / "results.tsv", format_results_table(report));
  write_file(out_dir / "summary.txt", format_summary(report));
}

}  // namespace glsasm
