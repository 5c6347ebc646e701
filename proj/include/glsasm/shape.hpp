#pragma once

#include <complex>
#include <vector>

#include <Eigen/Core>

namespace glsasm {

using Complex = std::complex<double>;

/// N landmark positions in the image plane, x in the real part and y in the
/// imaginary part.
using LandmarkVector = Eigen::VectorXcd;

/// Real description of a landmark vector: [x_0..x_{N-1}, y_0..y_{N-1}].
using RealShapeVector = Eigen::VectorXd;

/// Complex-affine similarity z -> r z + t.
struct SimilarityTransform {
  Complex r{1.0, 0.0};
  Complex t{0.0, 0.0};

  SimilarityTransform inverse() const;
  SimilarityTransform compose(const SimilarityTransform& inner) const;  // this(inner(z))
};

/// Hermitian positive semidefinite N x N weight on the landmark residual.
class HermitianWeight {
public:
  HermitianWeight() = default;
  explicit HermitianWeight(Eigen::MatrixXcd matrix);

  static HermitianWeight identity(Eigen::Index n);
  static HermitianWeight diagonal(const Eigen::VectorXd& weights);

  const Eigen::MatrixXcd& matrix() const { return matrix_; }
  Eigen::Index size() const { return matrix_.rows(); }
  bool is_diagonal() const { return diagonal_; }
  Eigen::VectorXd diagonal_values() const { return matrix_.diagonal().real(); }

  /// Number of landmarks whose diagonal weight is strictly positive.
  Eigen::Index positive_count() const;

  /// 2N x 2N real form [[Re W, -Im W], [Im W, Re W]] acting on V(z).
  Eigen::MatrixXd real_form() const;

  /// z^H W z.
  double quadratic(const Eigen::VectorXcd& z) const;

  HermitianWeight scaled(double c) const;

private:
  Eigen::MatrixXcd matrix_;
  bool diagonal_ = true;
};

RealShapeVector to_real(const LandmarkVector& k);
LandmarkVector from_real(const RealShapeVector& x);

/// Throws InvariantViolation unless N >= 3 and every coordinate is finite.
void validate_landmarks(const LandmarkVector& k);

LandmarkVector apply_transform(const LandmarkVector& k, const SimilarityTransform& transform);
LandmarkVector invert_transform(const LandmarkVector& k, const SimilarityTransform& transform);

Complex centroid(const LandmarkVector& k);

struct ProcrustesOptions {
  double tolerance = 1e-10;
  int max_iterations = 100;
};

struct ProcrustesResult {
  std::vector<RealShapeVector> aligned;
  std::vector<SimilarityTransform> transforms;
  RealShapeVector mean;
  int iterations = 0;
};

/// Generalized Procrustes alignment. Shapes are centered, the evolving mean is
/// kept at unit norm and rotated into a canonical orientation, and every shape
/// is aligned to it by an unweighted least-squares similarity until the mean
/// stops moving.
ProcrustesResult procrustes_align(const std::vector<LandmarkVector>& shapes,
                                  const ProcrustesOptions& options = {});

/// Weighted least-squares pose: the (r, t) minimizing e^H W e with
/// e = (model_points - t) / r - targets. Solved in closed form through
/// a = 1/r, c = -t/r. Throws SingularSystem when the normal equations are
/// rank deficient.
SimilarityTransform solve_pose(const LandmarkVector& model_points, const LandmarkVector& targets,
                               const HermitianWeight& weight);

}  // namespace glsasm
