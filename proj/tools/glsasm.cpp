// glsasm command-line front end: synth, train, calibrate, segment, evaluate,
// gate-histogram.
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "glsasm/chi_square.hpp"
#include "glsasm/engine.hpp"
#include "glsasm/error.hpp"
#include "glsasm/eval.hpp"
#include "glsasm/io.hpp"
#include "glsasm/phantom.hpp"

namespace fs = std::filesystem;
using namespace glsasm;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
      return kUsage;
    case ErrorKind::SingularSystem:
    case ErrorKind::NonConvergence:
    case ErrorKind::AllLandmarksInvalid:
      return kNumerical;
    default:
      return kData;
  }
}

struct Global {
  std::uint64_t seed = 0;
  int threads = 1;
  bool verbose = false;
};

void log(const Global& g, const std::string& msg) {
  if (g.verbose) std::cerr << msg << '\n';
}

std::string provenance_header(const Provenance& p) {
  std::string out;
  for (const auto& [k, v] : p) out += fmt::format("# {}={}\n", k, v);
  return out;
}

struct ModelOptions {
  double variance = 0.98;
  double xi = 9.0;
  int profile_len = 11;
  int search = 7;
  double profile_shrinkage = 0.1;

  void add(CLI::App* app) {
    app->add_option("--variance", variance, "retained shape variance fraction")->capture_default_str();
    app->add_option("--xi", xi, "plausibility threshold")->capture_default_str();
    app->add_option("--profile-len", profile_len, "raw profile samples")->capture_default_str();
    app->add_option("--search", search, "search half-width in px")->capture_default_str();
    app->add_option("--profile-shrinkage", profile_shrinkage, "profile covariance shrinkage")->capture_default_str();
  }

  void apply(LooConfig& c, bool closed) const {
    c.pdm.variance_fraction = variance;
    c.pdm.xi = xi;
    c.profiles.profile_len = profile_len;
    c.profiles.search_half_width = search;
    c.profiles.shrinkage = profile_shrinkage;
    c.profiles.closed = closed;
  }
};

std::vector<Strategy> parse_strategy_list(const std::string& text) {
  std::vector<Strategy> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const Strategy s = parse_strategy(item);
    if (std::find(out.begin(), out.end(), s) != out.end()) {
      throw Error(ErrorKind::ConfigError, "strategy " + item + " listed twice");
    }
    out.push_back(s);
  }
  if (out.empty()) throw Error(ErrorKind::ConfigError, "no strategies given");
  return out;
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  fs::path out;
  int count = 30;
  int size = 480;
  int landmarks = 40;
  double noise = 0.05;
  double blur = 1.5;
  std::string occlude;
  double occlusion_probability = 1.0;
  double occlusion_intensity = 0.95;
  int modes = 3;
  double amplitude = 0.08;
  double mode_clip = 1.5;
  bool open = false;
  bool force = false;
};

int cmd_synth(const SynthOptions& o, const Global& g) {
  if (o.count < 1) throw Error(ErrorKind::ConfigError, "--count must be >= 1");
  const fs::path manifest = o.out / "manifest.tsv";
  if (fs::exists(manifest) && !o.force) {
    std::cerr << "error: " << manifest.string() << " exists; pass --force to overwrite\n";
    return kData;
  }
  PhantomConfig pc;
  pc.n_landmarks = o.landmarks;
  pc.image_size = o.size;
  pc.noise_sigma = o.noise;
  pc.blur_sigma = o.blur;
  pc.shape_modes = o.modes;
  pc.mode_amplitude = o.amplitude;
  pc.mode_clip = o.mode_clip;
  pc.closed = !o.open;
  pc.seed = g.seed;
  pc.occlusions = parse_occlusion_list(o.occlude);
  for (auto& spec : pc.occlusions) {
    spec.probability = o.occlusion_probability;
    spec.intensity = o.occlusion_intensity;
  }
  pc.validate();

  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw Error(ErrorKind::IoError, o.out.string() + ": " + ec.message());

  Dataset ds;
  ds.n_landmarks = o.landmarks;
  ds.closed = pc.closed;
  ds.occluded_landmarks = occluded_landmarks(pc.occlusions);
  ds.provenance = {{"seed", std::to_string(g.seed)},
                   {"count", std::to_string(o.count)},
                   {"size", std::to_string(o.size)},
                   {"landmarks", std::to_string(o.landmarks)},
                   {"noise", fmt::format("{}", o.noise)},
                   {"blur", fmt::format("{}", o.blur)},
                   {"occlude", o.occlude.empty() ? "-" : o.occlude},
                   {"occlusion_probability", fmt::format("{}", o.occlusion_probability)},
                   {"occlusion_intensity", fmt::format("{}", o.occlusion_intensity)},
                   {"modes", std::to_string(o.modes)},
                   {"amplitude", fmt::format("{}", o.amplitude)},
                   {"mode_clip", fmt::format("{}", o.mode_clip)},
                   {"closed", pc.closed ? "1" : "0"}};
  ds.root = o.out;
  const std::vector<LabeledImage> corpus = generate_corpus(pc, o.count);
  for (const LabeledImage& s : corpus) {
    DatasetEntry e;
    e.id = s.id;
    e.image_path = fmt::format("phantom_{:04d}.pgm", s.id);
    e.landmark_path = fmt::format("phantom_{:04d}.txt", s.id);
    const std::string image_bytes = encode_pgm(s.image);
    const std::string landmark_bytes = format_landmarks(s.landmarks);
    write_file(o.out / e.image_path, image_bytes);
    write_file(o.out / e.landmark_path, landmark_bytes);
    e.checksum = checksum(image_bytes + landmark_bytes);
    e.occlusions = s.occlusions;
    ds.entries.push_back(std::move(e));
    log(g, fmt::format("phantom {}/{}", s.id + 1, o.count));
  }
  save_manifest(manifest, ds);
  std::cout << fmt::format("wrote {} phantoms and {}\n", o.count, manifest.string());
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  fs::path data;
  fs::path out;
  ModelOptions model;
};

int cmd_train(const TrainOptions& o, const Global& g) {
  const Dataset ds = load_manifest(o.data);
  const std::vector<LabeledImage> samples = load_samples(ds);
  LooConfig c;
  o.model.apply(c, ds.closed);
  std::vector<const LabeledImage*> training;
  for (const auto& s : samples) training.push_back(&s);
  TrainedModels models;
  try {
    models = train_models(training, c, false, 0);
  } catch (const Error& e) {
    throw Error(e.kind(), fmt::format("training on {} images from {}: {}", samples.size(), o.data.string(), e.what()));
  }

  ModelBundle bundle;
  bundle.pdm = models.pdm;
  bundle.profiles = models.profiles;
  bundle.gate = GateConfig::make(0.10, c.profiles.effective_len(), models.pdm.n_landmarks());
  bundle.provenance = c.provenance();
  bundle.provenance["seed"] = std::to_string(g.seed);
  bundle.provenance["manifest_checksum"] = ds.manifest_checksum();
  bundle.provenance["training_images"] = std::to_string(samples.size());
  save_model(o.out, bundle);

  std::cout << fmt::format("modes p = {}\nretained variance = {:.6g}\n", models.pdm.n_modes(),
                           models.pdm.retained_fraction);
  if (models.profiles.rank_deficient) {
    std::cerr << "warning: fewer training images than profile dimensions; covariances rely on shrinkage\n";
  }
  std::cout << "landmark\tprofile_condition\n";
  for (std::size_t n = 0; n < models.profiles.covariances.size(); ++n) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(models.profiles.covariances[n], Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    std::cout << fmt::format("{}\t{:.6g}\n", n, ev.maxCoeff() / ev.minCoeff());
  }
  log(g, "model written to " + o.out.string());
  return kOk;
}

// ---------------------------------------------------------------- calibrate

struct CalibrateOptions {
  fs::path data;
  fs::path model;
  fs::path out;  // defaults to --model
  int draws = 5;
  int max_offset = -1;
  bool diagonal = false;
  bool full = false;
  std::optional<double> shrinkage;
  double alpha = 0.10;
  bool centered = false;
  bool no_fallback = false;
};

int cmd_calibrate(const CalibrateOptions& o, const Global& g) {
  if (o.diagonal && o.full) throw Error(ErrorKind::ConfigError, "--diagonal and --full are exclusive");
  const bool diagonal = !o.full;
  ModelBundle bundle = load_model(o.model);
  const Dataset ds = load_manifest(o.data);
  if (ds.n_landmarks != bundle.pdm.n_landmarks()) {
    throw Error(ErrorKind::InvariantViolation, "dataset and model disagree on the landmark count");
  }
  const std::vector<LabeledImage> samples = load_samples(ds);
  std::vector<const LabeledImage*> half_a;
  std::vector<const LabeledImage*> half_b;
  for (const auto& s : samples) (s.id % 2 == 0 ? half_a : half_b).push_back(&s);

  PerturbationConfig pc;
  pc.draws = o.draws;
  pc.max_offset = o.max_offset;
  pc.seed = g.seed;
  const auto records = simulate_residuals(half_a, half_b, bundle.profiles.config, pc);

  Calibration cal;
  cal.r_hat = sample_residual_covariance(records, o.centered);
  cal.record_count = static_cast<int>(records.size());
  cal.centered = o.centered;
  cal.diagonal_only = diagonal;
  cal.shrinkage = o.shrinkage.value_or(default_covariance_shrinkage(diagonal));
  const ResidualCovariance cov = cal.covariance(diagonal);
  bundle.calibration = cal;

  const Eigen::Index n = bundle.pdm.n_landmarks();
  bundle.gate = GateConfig::make(o.alpha, bundle.profiles.config.effective_len(), n);
  bundle.gate.fallback = !o.no_fallback;
  bundle.provenance["calibration_seed"] = std::to_string(g.seed);
  bundle.provenance["calibration_draws"] = std::to_string(o.draws);
  bundle.provenance["calibration_mode"] = diagonal ? "diagonal" : "full";
  bundle.provenance["calibration_shrinkage"] = fmt::format("{}", cal.shrinkage);
  bundle.provenance["calibration_centered"] = o.centered ? "1" : "0";
  bundle.provenance["alpha"] = fmt::format("{}", o.alpha);
  bundle.provenance["calibration_manifest_checksum"] = ds.manifest_checksum();
  save_model(o.out.empty() ? o.model : o.out, bundle);

  if (!diagonal && cal.record_count < 2 * n) {
    std::cerr << fmt::format(
        "warning: {} residual records for a {}x{} full covariance; the estimate is dominated by shrinkage {}\n",
        cal.record_count, n, n, cal.shrinkage);
  }
  std::vector<double> stds(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) stds[static_cast<std::size_t>(i)] = std::sqrt(std::max(0.0, cal.r_hat(i, i).real()));
  std::vector<double> sorted = stds;
  std::sort(sorted.begin(), sorted.end());
  std::cout << fmt::format("residual records = {}\ncritical value = {:.10g}\n", cal.record_count,
                           bundle.gate.critical_value);
  std::cout << fmt::format("residual std min/median/max = {:.6g} {:.6g} {:.6g} px\n", sorted.front(),
                           sorted[sorted.size() / 2], sorted.back());
  std::cout << "landmark\tresidual_std\tweight\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    std::cout << fmt::format("{}\t{:.6g}\t{:.6g}\n", i, stds[static_cast<std::size_t>(i)], cov.r_inv(i, i).real());
  }
  return kOk;
}

// ---------------------------------------------------------------- segment

struct SegmentOptions {
  fs::path model;
  fs::path image;
  fs::path out;
  fs::path trace;
  std::string strategy = "gls_diagonal";
  std::string init = "center";
  int iters = 100;
  int inner = 5;
  double tol = 0.0;
  double scale_fraction = 0.6;
  bool no_gate = false;
  bool gate_baselines = false;
};

int cmd_segment(const SegmentOptions& o, const Global& g) {
  const Strategy strategy = parse_strategy(o.strategy);
  const ModelBundle bundle = load_model(o.model);
  const Image img = load_image(o.image);

  WeightSpec spec;
  spec.strategy = strategy;
  spec.gate = bundle.gate;
  if (o.no_gate) spec.gate.enabled = false;
  spec.gate_baselines = o.gate_baselines;
  if (needs_covariance(strategy)) {
    if (!bundle.calibration) {
      throw Error(ErrorKind::ConfigError, fmt::format("strategy {} needs a calibrated model; run calibrate first",
                                                      strategy_name(strategy)));
    }
    spec.covariance = bundle.calibration->covariance(strategy == Strategy::GlsDiagonal);
  }

  LandmarkVector init;
  if (o.init == "center") {
    Placement placement;
    placement.scale_fraction = o.scale_fraction;
    init = initialize_from_mean(img, bundle.pdm, placement);
  } else {
    init = load_landmarks(o.init);
    if (init.size() != bundle.pdm.n_landmarks()) {
      throw Error(ErrorKind::InvariantViolation, "initial landmarks do not match the model's landmark count");
    }
  }

  AsmConfig ac;
  ac.max_iterations = o.iters;
  ac.inner_alternations = o.inner;
  ac.convergence_tol = o.tol;
  ac.weight_spec = spec;
  ac.seed = g.seed;
  const SegmentResult result = asm_segment(img, init, bundle.pdm, bundle.profiles, ac);

  Provenance p = bundle.provenance;
  p["segment_strategy"] = std::string(strategy_name(strategy));
  p["segment_iterations"] = std::to_string(o.iters);
  p["segment_tol"] = fmt::format("{}", o.tol);
  p["segment_init"] = o.init;
  p["segment_gate"] = spec.uses_gate() ? "1" : "0";
  p["seed"] = std::to_string(g.seed);
  write_file(o.out, provenance_header(p) + format_landmarks(result.fit.landmarks));

  if (!o.trace.empty()) {
    std::string t = provenance_header(p);
    t += "# iteration\tobjective\tvalid\tfallback\tdegraded\tmean_move\tlandmarks (x y ...)\n";
    for (const TraceEntry& e : result.trace) {
      t += fmt::format("{}\t{:.17g}\t{}\t{}\t{}\t{:.17g}", e.iteration, e.objective, e.valid_count,
                       e.gate_fallback ? 1 : 0, e.degraded ? 1 : 0, e.mean_move);
      for (Eigen::Index i = 0; i < e.landmarks.size(); ++i) {
        t += fmt::format("\t{:.17g} {:.17g}", e.landmarks[i].real(), e.landmarks[i].imag());
      }
      t += '\n';
    }
    write_file(o.trace, t);
  }
  std::cout << fmt::format("iterations = {}\nobjective = {:.6g}\ndegraded = {}\n", result.trace.size(),
                           result.fit.objective, result.fit.degraded ? "yes" : "no");
  return kOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateOptions {
  fs::path data;
  fs::path out;
  std::string strategies = "identity,zhao,yang,gls_diagonal";
  int iters = 100;
  int inner = 5;
  double tol = 0.0;
  int draws = 5;
  double alpha = 0.10;
  bool no_gate = false;
  bool gate_baselines = false;
  bool no_fallback = false;
  bool centered = false;
  double diagonal_shrinkage = 0.05;
  double full_shrinkage = 0.2;
  double scale_fraction = 0.6;
  ModelOptions model;
};

LooConfig loo_config(const EvaluateOptions& o, const Dataset& ds, const Global& g) {
  LooConfig c;
  o.model.apply(c, ds.closed);
  c.perturbation.draws = o.draws;
  c.perturbation.seed = g.seed;
  c.alpha = o.alpha;
  c.gate_enabled = !o.no_gate;
  c.gate_baselines = o.gate_baselines;
  c.gate_fallback = !o.no_fallback;
  c.max_iterations = o.iters;
  c.inner_alternations = o.inner;
  c.convergence_tol = o.tol;
  c.diagonal_shrinkage = o.diagonal_shrinkage;
  c.full_shrinkage = o.full_shrinkage;
  c.centered_residuals = o.centered;
  c.placement.scale_fraction = o.scale_fraction;
  c.seed = g.seed;
  c.threads = g.threads;
  c.occluded_landmarks = ds.occluded_landmarks;
  return c;
}

int cmd_evaluate(const EvaluateOptions& o, const Global& g) {
  const std::vector<Strategy> strategies = parse_strategy_list(o.strategies);
  const Dataset ds = load_manifest(o.data);
  const std::vector<LabeledImage> samples = load_samples(ds);
  const LooConfig c = loo_config(o, ds, g);
  log(g, fmt::format("leave-one-out over {} images, {} strategies, {} threads", samples.size(), strategies.size(),
                     g.threads));
  LooReport report = run_leave_one_out(samples, strategies, c);
  report.provenance["manifest_checksum"] = ds.manifest_checksum();
  std::string names;
  for (Strategy s : strategies) names += (names.empty() ? "" : ",") + std::string(strategy_name(s));
  report.provenance["strategies"] = names;
  render_report(report, o.out);
  std::cout << format_summary(report);

  const std::size_t folds = report.image_ids.size() + report.failures.size();
  if (10 * report.failures.size() > folds) {
    std::cerr << fmt::format("error: {} of {} folds failed\n", report.failures.size(), folds);
    return kNumerical;
  }
  return kOk;
}

// ---------------------------------------------------------------- gate-histogram

struct HistogramOptions {
  fs::path data;
  fs::path out;
  int iters = 10;
  int bins = 40;
  double max_value = 0.0;
  EvaluateOptions eval;
};

int cmd_gate_histogram(const HistogramOptions& o, const Global& g) {
  const Dataset ds = load_manifest(o.data);
  const std::vector<LabeledImage> samples = load_samples(ds);
  GateHistogramConfig hc;
  hc.base = loo_config(o.eval, ds, g);
  hc.iterations = o.iters;
  hc.bins = o.bins;
  hc.max_value = o.max_value;
  const GateHistogram h = gate_histogram_experiment(samples, hc);

  Provenance p = hc.base.provenance();
  p["manifest_checksum"] = ds.manifest_checksum();
  p["histogram_iterations"] = std::to_string(o.iters);
  std::string t = provenance_header(p);
  t += fmt::format("# valid_samples={} invalid_samples={} critical_value={:.6g} dof={}\n", h.valid_samples.size(),
                   h.invalid_samples.size(), h.critical_value, h.dof);
  t += "bin_lo\tbin_hi\tdensity_valid\tdensity_invalid\tchi_square_density\n";
  for (std::size_t b = 0; b + 1 < h.edges.size(); ++b) {
    t += fmt::format("{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\n", h.edges[b], h.edges[b + 1], h.density_valid[b],
                     h.density_invalid[b], h.chi_square_density[b]);
  }
  write_file(o.out, t);
  std::cout << fmt::format(
      "valid samples = {}\ninvalid samples = {}\ncoverage valid = {:.6g}\ncoverage invalid = {:.6g}\n"
      "ks valid = {:.6g}\n",
      h.valid_samples.size(), h.invalid_samples.size(), h.coverage_valid, h.coverage_invalid, h.ks_valid);
  return kOk;
}

void add_eval_flags(CLI::App* app, EvaluateOptions& o) {
  app->add_option("--inner", o.inner, "pose/shape alternations per fit")->capture_default_str();
  app->add_option("--tol", o.tol, "early-stop mean movement in px (0 runs all iterations)")->capture_default_str();
  app->add_option("--draws", o.draws, "perturbation draws per calibration image")->capture_default_str();
  app->add_option("--alpha", o.alpha, "gate false-alarm rate")->capture_default_str();
  app->add_flag("--no-gate", o.no_gate, "disable the validity gate");
  app->add_flag("--gate-baselines", o.gate_baselines, "gate the baseline strategies as well");
  app->add_flag("--no-fallback", o.no_fallback, "fail instead of ungating when too few landmarks pass");
  app->add_flag("--centered", o.centered, "center residuals before the covariance estimate");
  app->add_option("--diagonal-shrinkage", o.diagonal_shrinkage)->capture_default_str();
  app->add_option("--full-shrinkage", o.full_shrinkage)->capture_default_str();
  app->add_option("--scale-fraction", o.scale_fraction, "initial mean-shape extent / image side")
      ->capture_default_str();
  o.model.add(app);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active shape model segmentation with residual-covariance weighting"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "key = value file with one [section] per subcommand");
  Global g;
  app.add_option("--seed", g.seed, "random seed")->envname("GLSASM_SEED")->capture_default_str();
  app.add_option("--threads", g.threads, "fold-level worker threads")
      ->envname("GLSASM_THREADS")
      ->capture_default_str();
  app.add_flag("-v,--verbose", g.verbose, "progress on stderr");

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "generate a phantom corpus and manifest");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--count", synth.count, "number of phantoms")->capture_default_str();
  s->add_option("--size", synth.size, "image side in px")->capture_default_str();
  s->add_option("--landmarks", synth.landmarks, "landmarks per contour")->capture_default_str();
  s->add_option("--noise", synth.noise, "additive noise sigma")->capture_default_str();
  s->add_option("--blur", synth.blur, "Gaussian blur sigma in px")->capture_default_str();
  s->add_option("--occlude", synth.occlude, "occluded landmark ranges, e.g. 25-31,5-9");
  s->add_option("--occlusion-probability", synth.occlusion_probability)->capture_default_str();
  s->add_option("--occlusion-intensity", synth.occlusion_intensity)->capture_default_str();
  s->add_option("--modes", synth.modes, "random radial shape modes")->capture_default_str();
  s->add_option("--amplitude", synth.amplitude, "first mode std relative to the radius")->capture_default_str();
  s->add_option("--mode-clip", synth.mode_clip, "redraw mode coefficients beyond this many std (0 = off)")
      ->capture_default_str();
  s->add_flag("--open", synth.open, "open contour");
  s->add_flag("--force", synth.force, "overwrite an existing manifest");

  TrainOptions train;
  auto* t = app.add_subcommand("train", "train the shape and profile models");
  t->add_option("--data", train.data, "manifest")->required();
  t->add_option("--out", train.out, "model file")->required();
  train.model.add(t);

  CalibrateOptions cal;
  auto* c = app.add_subcommand("calibrate", "estimate the residual covariance and gate");
  c->add_option("--data", cal.data, "manifest")->required();
  c->add_option("--model", cal.model, "model file")->required();
  c->add_option("--out", cal.out, "output model file (default: overwrite --model)");
  c->add_option("--draws", cal.draws, "perturbation draws per image")->capture_default_str();
  c->add_option("--max-offset", cal.max_offset, "largest perturbation in px (default s-1)");
  c->add_flag("--diagonal", cal.diagonal, "diagonal covariance (default)");
  c->add_flag("--full", cal.full, "full covariance");
  c->add_option("--shrinkage", cal.shrinkage, "regularization weight");
  c->add_option("--alpha", cal.alpha, "gate false-alarm rate")->capture_default_str();
  c->add_flag("--centered", cal.centered, "center residuals");
  c->add_flag("--no-fallback", cal.no_fallback, "fail instead of ungating when too few landmarks pass");

  SegmentOptions seg;
  auto* sg = app.add_subcommand("segment", "segment one image");
  sg->add_option("--model", seg.model, "model file")->required();
  sg->add_option("--image", seg.image, "PGM image")->required();
  sg->add_option("--out", seg.out, "final landmarks")->required();
  sg->add_option("--trace", seg.trace, "per-iteration trace");
  sg->add_option("--strategy", seg.strategy, "weighting strategy")->capture_default_str();
  sg->add_option("--init", seg.init, "center or a landmark file")->capture_default_str();
  sg->add_option("--iters", seg.iters, "ASM iterations")->capture_default_str();
  sg->add_option("--inner", seg.inner, "pose/shape alternations per fit")->capture_default_str();
  sg->add_option("--tol", seg.tol, "early-stop mean movement in px (0 runs all iterations)")->capture_default_str();
  sg->add_option("--scale-fraction", seg.scale_fraction)->capture_default_str();
  sg->add_flag("--no-gate", seg.no_gate, "disable the validity gate");
  sg->add_flag("--gate-baselines", seg.gate_baselines, "gate the baseline strategies as well");

  EvaluateOptions ev;
  auto* e = app.add_subcommand("evaluate", "leave-one-out comparison of weighting strategies");
  e->add_option("--data", ev.data, "manifest")->required();
  e->add_option("--out", ev.out, "report directory")->required();
  e->add_option("--strategies", ev.strategies, "comma-separated strategy names")->capture_default_str();
  e->add_option("--iters", ev.iters, "ASM iterations")->capture_default_str();
  add_eval_flags(e, ev);

  HistogramOptions hist;
  auto* h = app.add_subcommand("gate-histogram", "distance histograms split by ground-truth validity");
  h->add_option("--data", hist.data, "manifest")->required();
  h->add_option("--out", hist.out, "histogram table")->required();
  h->add_option("--iters", hist.iters, "ASM iterations per image")->capture_default_str();
  h->add_option("--bins", hist.bins)->capture_default_str();
  h->add_option("--max-value", hist.max_value, "upper edge (default 4x critical value)");
  add_eval_flags(h, hist.eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (g.threads < 1) throw Error(ErrorKind::ConfigError, "--threads must be >= 1");
    if (*s) return cmd_synth(synth, g);
    if (*t) return cmd_train(train, g);
    if (*c) return cmd_calibrate(cal, g);
    if (*sg) return cmd_segment(seg, g);
    if (*e) return cmd_evaluate(ev, g);
    if (*h) return cmd_gate_histogram(hist, g);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code(err.kind());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kData;
  }
  return kUsage;
}
