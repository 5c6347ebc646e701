#include "glsasm/engine.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "glsasm/error.hpp"

namespace glsasm {

namespace {

double fit_objective(const ShapeParams& b, const SimilarityTransform& pose, const LandmarkVector& targets,
                     const HermitianWeight& weight, const PointDistributionModel& model) {
  return weight.quadratic(reconstruct(b, pose, model) - targets);
}

// argmin_b (V(v) - mean - P b)^T W_R (V(v) - mean - P b) for the model-frame
// targets v; minimum-norm when the weighted system is rank deficient.
ShapeParams solve_shape(const LandmarkVector& model_frame_targets, const HermitianWeight& weight,
                        const PointDistributionModel& model) {
  const Eigen::Index p = model.n_modes();
  if (p == 0) return ShapeParams::Zero(0);
  const Eigen::VectorXd y = to_real(model_frame_targets) - model.mean;
  const Eigen::MatrixXd& modes = model.modes;
  Eigen::MatrixXd normal;
  Eigen::VectorXd rhs;
  if (weight.is_diagonal()) {
    const Eigen::VectorXd w = weight.diagonal_values();
    Eigen::VectorXd wr(2 * w.size());
    wr << w, w;
    const Eigen::MatrixXd weighted = wr.asDiagonal() * modes;
    normal = modes.transpose() * weighted;
    rhs = weighted.transpose() * y;
  } else {
    const Eigen::MatrixXd weighted = weight.real_form() * modes;
    normal = modes.transpose() * weighted;
    rhs = weighted.transpose() * y;
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(normal);
  cod.setThreshold(1e-12);
  return cod.solve(rhs);
}

}  // namespace

FitResult gls_fit(const LandmarkVector& targets, const HermitianWeight& weight, const PointDistributionModel& model,
                  const std::optional<FitResult>& init, const FitOptions& options) {
  if (targets.size() != model.n_landmarks() || weight.size() != targets.size()) {
    throw Error(ErrorKind::InvariantViolation, "gls_fit: size mismatch");
  }
  const auto degraded_result = [&]() {
    if (!init) throw Error(ErrorKind::SingularSystem, "weighted fit is singular and no previous state exists");
    FitResult out = *init;
    out.degraded = true;
    return out;
  };

  ShapeParams b = init ? init->shape : ShapeParams::Zero(model.n_modes());
  SimilarityTransform pose;
  double objective = std::numeric_limits<double>::infinity();
  if (init) {
    pose = init->pose;
    objective = fit_objective(b, pose, targets, weight, model);
  }

  FitResult result;
  int rounds = 0;
  for (int round = 0; round < options.inner_alternations; ++round) {
    SimilarityTransform next_pose;
    try {
      next_pose = solve_pose(model_points(b, model), targets, weight);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingularSystem) throw;
      if (rounds == 0) return degraded_result();
      break;
    }
    const ShapeParams next_b = constrain(solve_shape(apply_transform(targets, next_pose), weight, model), model);
    const double next_objective = fit_objective(next_b, next_pose, targets, weight, model);
    ++rounds;
    // Increases within rounding of the current value are not treated as
    // increases; the parameters may still be converging.
    if (next_objective > objective + 1e-13 * objective) {
      // Only the projection can cause this; the pose step alone cannot.
      const double pose_only = fit_objective(b, next_pose, targets, weight, model);
      if (pose_only < objective) {
        pose = next_pose;
        objective = pose_only;
      }
      break;
    }
    const double improvement = objective - next_objective;
    const bool unchanged = next_b == b && next_pose.r == pose.r && next_pose.t == pose.t;
    pose = next_pose;
    b = next_b;
    objective = next_objective;
    if (unchanged || (options.objective_tol > 0.0 && improvement < options.objective_tol)) break;
  }
  if (!std::isfinite(objective)) return degraded_result();

  result.pose = pose;
  result.shape = b;
  result.landmarks = reconstruct(b, pose, model);
  result.objective = objective;
  result.alternations = rounds;
  return result;
}

void AsmConfig::validate() const {
  if (max_iterations < 1) throw Error(ErrorKind::ConfigError, "max_iterations must be >= 1");
  if (inner_alternations < 1) throw Error(ErrorKind::ConfigError, "inner_alternations must be >= 1");
  weight_spec.validate();
}

SegmentResult asm_segment(const Image& img, const LandmarkVector& init, const PointDistributionModel& pdm,
                          const ProfileModel& profiles, const AsmConfig& config, const DetectionObserver& observer) {
  config.validate();
  if (init.size() != pdm.n_landmarks()) throw Error(ErrorKind::InvariantViolation, "initial landmark count differs from the model");
  const FitOptions fit_options{config.inner_alternations, 1e-10};
  const WeightSpec& spec = config.weight_spec;

  SegmentResult out;
  LandmarkVector current = init;
  std::optional<FitResult> previous;
  for (int it = 1; it <= config.max_iterations; ++it) {
    const DetectionResult detection = detect_targets(img, current, profiles);
    if (observer) observer(it, current, detection);
    GateResult gate;
    if (spec.uses_gate()) {
      gate = chi_square_gate(detection, spec.gate);
    } else {
      gate.flags = Eigen::VectorXd::Ones(detection.size());
      gate.valid_count = detection.size();
    }
    const HermitianWeight weight = build_weight_matrix(spec, detection, profiles, gate);

    FitResult fit;
    try {
      fit = gls_fit(detection.targets, weight, pdm, previous, fit_options);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingularSystem) throw;
      fit.landmarks = current;
      fit.shape = ShapeParams::Zero(pdm.n_modes());
      fit.objective = 0.0;
      fit.degraded = true;
    }
    fit.flags = gate.flags;
    fit.distances = detection.distances;

    const double move = (fit.landmarks - current).cwiseAbs().mean();
    out.trace.push_back({it, fit.landmarks, fit.objective, gate.valid_count, gate.fallback, fit.degraded, move});
    current = fit.landmarks;
    if (!fit.degraded) previous = fit;
    out.fit = std::move(fit);
    if (config.convergence_tol > 0.0 && move < config.convergence_tol) break;
  }
  return out;
}

SimilarityTransform initial_pose(const Image& img, const PointDistributionModel& pdm, const Placement& placement) {
  if (placement.pose) return *placement.pose;
  if (!(placement.scale_fraction > 0.0)) throw Error(ErrorKind::ConfigError, "scale fraction must be positive");
  const LandmarkVector mean = from_real(pdm.mean);
  const double extent = std::max(mean.real().maxCoeff() - mean.real().minCoeff(),
                                 mean.imag().maxCoeff() - mean.imag().minCoeff());
  if (!(extent > 0.0)) throw Error(ErrorKind::DegenerateShape, "mean shape has no extent");
  const double scale = placement.scale_fraction * std::min(img.width, img.height) / extent;
  const Complex center(0.5 * (img.width - 1), 0.5 * (img.height - 1));
  const Complex r = 1.0 / scale;
  return {r, mean.mean() - r * center};
}

LandmarkVector initialize_from_mean(const Image& img, const PointDistributionModel& pdm, const Placement& placement) {
  return reconstruct(ShapeParams::Zero(pdm.n_modes()), initial_pose(img, pdm, placement), pdm);
}

}  // namespace glsasm
