#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "glsasm/appearance.hpp"
#include "glsasm/engine.hpp"
#include "glsasm/image.hpp"
#include "glsasm/io.hpp"
#include "glsasm/pdm.hpp"
#include "glsasm/weighting.hpp"

namespace glsasm {

/// Exact minimum distance from p to the polyline through `contour`
/// (closing segment included iff `closed`).
double point_to_contour_distance(Complex p, const LandmarkVector& contour, bool closed);

struct LooConfig {
  PdmOptions pdm;
  ProfileConfig profiles;
  PerturbationConfig perturbation;
  double alpha = 0.10;
  bool gate_enabled = true;
  bool gate_baselines = false;
  bool gate_fallback = true;
  int max_iterations = 100;
  int inner_alternations = 5;
  double convergence_tol = 0.0;  // fixed iteration count by default
  double diagonal_shrinkage = 0.05;
  double full_shrinkage = 0.2;
  bool centered_residuals = false;
  Placement placement;
  std::uint64_t seed = 0;
  int threads = 1;
  std::vector<int> occluded_landmarks;  // report breakdown group

  Provenance provenance() const;
};

struct StrategyReport {
  Strategy strategy = Strategy::Identity;
  Eigen::VectorXd rmse;                     // per landmark
  std::vector<Eigen::VectorXd> image_errors;  // per successful fold, per landmark distance
  std::vector<int> iterations;
  std::vector<double> mean_valid;           // mean gate pass count per iteration, per fold

  double mean_rmse() const { return rmse.size() ? rmse.mean() : 0.0; }
  double group_rmse(const std::vector<int>& landmarks) const;
};

struct FoldFailure {
  int image_id = 0;
  std::string message;
};

struct LooReport {
  std::vector<StrategyReport> strategies;
  std::vector<int> image_ids;  // successful folds, id order
  std::vector<FoldFailure> failures;
  std::vector<int> occluded_landmarks;
  int n_landmarks = 0;
  std::uint64_t seed = 0;
  Provenance provenance;

  const StrategyReport& find(Strategy s) const;
};

/// Everything a fold trains from its training images.
struct TrainedModels {
  PointDistributionModel pdm;
  ProfileModel profiles;
  std::optional<Calibration> calibration;
};

/// PDM, profiles and (optionally) the residual calibration on an odd/even id
/// split of `training`.
TrainedModels train_models(const std::vector<const LabeledImage*>& training, const LooConfig& config,
                           bool calibrate, std::uint64_t calibration_seed);

WeightSpec make_weight_spec(Strategy strategy, const TrainedModels& models, const LooConfig& config);

LooReport run_leave_one_out(const std::vector<LabeledImage>& samples, const std::vector<Strategy>& strategies,
                            const LooConfig& config);

struct GateHistogramConfig {
  LooConfig base;
  int iterations = 10;   // ASM iterations simulated per test image
  int bins = 40;
  double max_value = 0;  // histogram upper edge; <= 0 uses 4x the critical value
  // >= 0: start from the true landmarks moved along their normals by uniform
  // offsets of at most this many px instead of the mean-shape placement.
  double truth_offset = -1;
};

struct GateHistogram {
  std::vector<double> edges;
  std::vector<double> density_valid;
  std::vector<double> density_invalid;
  std::vector<double> chi_square_density;  // at bin centers
  std::vector<double> valid_samples;
  std::vector<double> invalid_samples;
  double critical_value = 0;
  int dof = 0;
  double coverage_valid = 0;    // fraction of valid samples <= critical value
  double coverage_invalid = 0;
  double ks_valid = 0;          // KS distance of valid samples to chi^2_dof
};

/// Records every detector distance over leave-one-out ASM runs (identity
/// weights, fixed iteration count) and splits them by ground-truth validity:
/// the true contour crosses the searched segment at a point not covered by an
/// occluder. Folds run on base.threads workers.
GateHistogram gate_histogram_experiment(const std::vector<LabeledImage>& samples, const GateHistogramConfig& config);

/// Kolmogorov-Smirnov distance between the samples and the chi-square CDF.
double ks_distance_chi_square(std::vector<double> samples, double dof);

/// Writes results.tsv (landmark, strategy, rmse) and summary.txt.
void render_report(const LooReport& report, const std::filesystem::path& out_dir);
std::string format_results_table(const LooReport& report);
std::string format_summary(const LooReport& report);

}  // namespace glsasm
