#pragma once

#include <vector>

#include <Eigen/Core>

#include "glsasm/shape.hpp"

namespace glsasm {

using ShapeParams = Eigen::VectorXd;

struct PointDistributionModel {
  RealShapeVector mean;        // 2N
  Eigen::MatrixXd modes;       // 2N x p, orthonormal columns
  Eigen::VectorXd eigenvalues; // p, descending, positive
  double xi = 9.0;
  double variance_fraction = 0.98;
  double retained_fraction = 1.0;  // retained / total variance actually achieved

  Eigen::Index n_landmarks() const { return mean.size() / 2; }
  Eigen::Index n_modes() const { return modes.cols(); }

  /// Throws InvariantViolation if orthonormality, ordering or positivity fail.
  void validate(double tolerance = 1e-8) const;
};

struct PdmOptions {
  double variance_fraction = 0.98;
  double xi = 9.0;
};

PointDistributionModel train_pdm(const std::vector<RealShapeVector>& aligned, const PdmOptions& options = {});

ShapeParams project_to_params(const RealShapeVector& x, const PointDistributionModel& model);

/// b^T Lambda^-1 b.
double plausibility(const ShapeParams& b, const PointDistributionModel& model);

/// Radial projection onto the ellipsoid b^T Lambda^-1 b <= xi.
ShapeParams constrain(const ShapeParams& b, const PointDistributionModel& model);

/// Model-frame landmarks V^-1(mean + P b).
LandmarkVector model_points(const ShapeParams& b, const PointDistributionModel& model);

/// Image-frame landmarks (V^-1(mean + P b) - t) / r.
LandmarkVector reconstruct(const ShapeParams& b, const SimilarityTransform& pose, const PointDistributionModel& model);

}  // namespace glsasm
