#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "glsasm/appearance.hpp"
#include "glsasm/pdm.hpp"
#include "glsasm/shape.hpp"
#include "glsasm/weighting.hpp"

namespace glsasm {

struct FitResult {
  SimilarityTransform pose;
  ShapeParams shape;
  LandmarkVector landmarks;
  double objective = 0.0;
  Eigen::VectorXd flags;      // validity gate used for this fit
  Eigen::VectorXd distances;  // detector distances behind the targets
  bool degraded = false;      // a sub-solve was singular; previous state kept
  int alternations = 0;
};

struct FitOptions {
  int inner_alternations = 5;
  double objective_tol = 1e-10;  // stop once a round improves by less; 0 runs every round
};

/// Weighted fit of a plausible shape to `targets`: alternates the closed-form
/// pose solve with the weighted shape solve followed by the plausibility
/// projection. Post-projection objectives never increase across rounds
/// beyond a relative rounding slack of 1e-13.
FitResult gls_fit(const LandmarkVector& targets, const HermitianWeight& weight, const PointDistributionModel& model,
                  const std::optional<FitResult>& init = std::nullopt, const FitOptions& options = {});

struct AsmConfig {
  int max_iterations = 100;
  int inner_alternations = 5;
  double convergence_tol = 0.05;  // mean landmark movement in px; <= 0 runs all iterations
  WeightSpec weight_spec;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TraceEntry {
  int iteration = 0;
  LandmarkVector landmarks;
  double objective = 0.0;
  Eigen::Index valid_count = 0;
  bool gate_fallback = false;
  bool degraded = false;
  double mean_move = 0.0;
};

struct SegmentResult {
  FitResult fit;
  std::vector<TraceEntry> trace;
};

/// Called with the landmarks searched from and the detection of every iteration.
using DetectionObserver = std::function<void(int iteration, const LandmarkVector& current, const DetectionResult&)>;

SegmentResult asm_segment(const Image& img, const LandmarkVector& init, const PointDistributionModel& pdm,
                          const ProfileModel& profiles, const AsmConfig& config,
                          const DetectionObserver& observer = {});

struct Placement {
  double scale_fraction = 0.6;  // larger extent of the mean shape / smaller image side
  std::optional<SimilarityTransform> pose;
};

/// Mean shape centered in the image, or at an explicit pose.
LandmarkVector initialize_from_mean(const Image& img, const PointDistributionModel& pdm, const Placement& placement = {});

/// Pose that places the mean shape as `initialize_from_mean` does.
SimilarityTransform initial_pose(const Image& img, const PointDistributionModel& pdm, const Placement& placement = {});

}  // namespace glsasm
