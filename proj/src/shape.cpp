#include "glsasm/shape.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "glsasm/error.hpp"

namespace glsasm {

SimilarityTransform SimilarityTransform::inverse() const {
  if (std::abs(r) == 0.0) throw Error(ErrorKind::InvariantViolation, "similarity with r = 0");
  return {1.0 / r, -t / r};
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& inner) const {
  return {r * inner.r, r * inner.t + t};
}

HermitianWeight::HermitianWeight(Eigen::MatrixXcd matrix) : matrix_(std::move(matrix)) {
  if (matrix_.rows() != matrix_.cols()) {
    throw Error(ErrorKind::InvariantViolation, "weight matrix must be square");
  }
  diagonal_ = true;
  for (Eigen::Index j = 0; j < matrix_.cols() && diagonal_; ++j) {
    for (Eigen::Index i = 0; i < matrix_.rows(); ++i) {
      if (i != j && matrix_(i, j) != Complex{}) {
        diagonal_ = false;
        break;
      }
    }
  }
}

HermitianWeight HermitianWeight::identity(Eigen::Index n) {
  return HermitianWeight(Eigen::MatrixXcd::Identity(n, n));
}

HermitianWeight HermitianWeight::diagonal(const Eigen::VectorXd& weights) {
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(weights.size(), weights.size());
  m.diagonal() = weights.cast<Complex>();
  return HermitianWeight(std::move(m));
}

Eigen::Index HermitianWeight::positive_count() const {
  return (matrix_.diagonal().real().array() > 0.0).count();
}

Eigen::MatrixXd HermitianWeight::real_form() const {
  const Eigen::Index n = size();
  Eigen::MatrixXd out(2 * n, 2 * n);
  const Eigen::MatrixXd re = matrix_.real();
  const Eigen::MatrixXd im = matrix_.imag();
  out.topLeftCorner(n, n) = re;
  out.topRightCorner(n, n) = -im;
  out.bottomLeftCorner(n, n) = im;
  out.bottomRightCorner(n, n) = re;
  return out;
}

double HermitianWeight::quadratic(const Eigen::VectorXcd& z) const {
  if (diagonal_) {
    return (matrix_.diagonal().real().array() * z.array().abs2()).sum();
  }
  return (z.adjoint() * matrix_ * z)(0, 0).real();
}

HermitianWeight HermitianWeight::scaled(double c) const { return HermitianWeight(matrix_ * c); }

RealShapeVector to_real(const LandmarkVector& k) {
  const Eigen::Index n = k.size();
  RealShapeVector x(2 * n);
  x.head(n) = k.real();
  x.tail(n) = k.imag();
  return x;
}

LandmarkVector from_real(const RealShapeVector& x) {
  if (x.size() % 2 != 0) throw Error(ErrorKind::InvariantViolation, "real shape vector has odd length");
  const Eigen::Index n = x.size() / 2;
  LandmarkVector k(n);
  for (Eigen::Index i = 0; i < n; ++i) k[i] = Complex(x[i], x[n + i]);
  return k;
}

void validate_landmarks(const LandmarkVector& k) {
  if (k.size() < 3) throw Error(ErrorKind::InvariantViolation, "a landmark vector needs at least 3 points");
  for (Eigen::Index i = 0; i < k.size(); ++i) {
    if (!std::isfinite(k[i].real()) || !std::isfinite(k[i].imag())) {
      throw Error(ErrorKind::InvariantViolation, "non-finite landmark coordinate at index " + std::to_string(i));
    }
  }
}

LandmarkVector apply_transform(const LandmarkVector& k, const SimilarityTransform& transform) {
  if (std::abs(transform.r) == 0.0) throw Error(ErrorKind::InvariantViolation, "similarity with r = 0");
  return (transform.r * k.array() + transform.t).matrix();
}

LandmarkVector invert_transform(const LandmarkVector& k, const SimilarityTransform& transform) {
  return apply_transform(k, transform.inverse());
}

Complex centroid(const LandmarkVector& k) { return k.mean(); }

namespace {

// Least-squares r minimizing |r z - target|^2 for centered z.
Complex align_scale_rotation(const Eigen::VectorXcd& z, const Eigen::VectorXcd& target) {
  return z.dot(target) / z.squaredNorm();
}

// Center, scale to unit norm and rotate so that landmark `anchor` lies on the
// positive real axis.
Eigen::VectorXcd normalize_mean(Eigen::VectorXcd mean, Eigen::Index anchor) {
  mean.array() -= mean.mean();
  mean /= mean.norm();
  const Complex a = mean[anchor];
  mean *= std::conj(a) / std::abs(a);
  return mean;
}

}  // namespace

ProcrustesResult procrustes_align(const std::vector<LandmarkVector>& shapes,
                                  const ProcrustesOptions& options) {
  if (shapes.size() < 2) throw Error(ErrorKind::InsufficientData, "Procrustes alignment needs at least 2 shapes");
  const Eigen::Index n = shapes.front().size();
  std::vector<Eigen::VectorXcd> centered;
  centered.reserve(shapes.size());
  for (std::size_t m = 0; m < shapes.size(); ++m) {
    const auto& s = shapes[m];
    if (s.size() != n) throw Error(ErrorKind::InvariantViolation, "shapes differ in landmark count");
    validate_landmarks(s);
    Eigen::VectorXcd c = s.array() - s.mean();
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    if (c.norm() <= 1e-12 * scale) {
      throw Error(ErrorKind::DegenerateShape, "shape " + std::to_string(m) + " has all points coincident");
    }
    centered.push_back(std::move(c));
  }

  // The anchor depends only on relative magnitudes within the first shape,
  // which a similarity does not change.
  const Eigen::VectorXcd& first = centered.front();
  const double max_mag = first.cwiseAbs().maxCoeff();
  Eigen::Index anchor = 0;
  while (std::abs(first[anchor]) < 0.5 * max_mag) ++anchor;

  Eigen::VectorXcd mean = normalize_mean(first, anchor);
  std::vector<Complex> scales(shapes.size());
  ProcrustesResult result;
  bool converged = false;
  for (int it = 1; it <= options.max_iterations; ++it) {
    Eigen::VectorXcd sum = Eigen::VectorXcd::Zero(n);
    for (std::size_t m = 0; m < centered.size(); ++m) {
      scales[m] = align_scale_rotation(centered[m], mean);
      sum += scales[m] * centered[m];
    }
    Eigen::VectorXcd next = normalize_mean(sum / static_cast<double>(centered.size()), anchor);
    const double moved = (next - mean).norm();
    mean = std::move(next);
    result.iterations = it;
    if (moved < options.tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) throw Error(ErrorKind::NonConvergence, "Procrustes mean did not settle");

  result.mean = to_real(mean);
  for (std::size_t m = 0; m < shapes.size(); ++m) {
    const Complex r = align_scale_rotation(centered[m], mean);
    const SimilarityTransform transform{r, -r * shapes[m].mean()};
    result.transforms.push_back(transform);
    result.aligned.push_back(to_real(apply_transform(shapes[m], transform)));
  }
  return result;
}

SimilarityTransform solve_pose(const LandmarkVector& model_points, const LandmarkVector& targets,
                               const HermitianWeight& weight) {
  const Eigen::Index n = model_points.size();
  if (targets.size() != n || weight.size() != n) {
    throw Error(ErrorKind::InvariantViolation, "solve_pose: size mismatch");
  }
  if (weight.positive_count() < 2) {
    throw Error(ErrorKind::SingularSystem, "fewer than 2 landmarks carry positive weight");
  }

  // Columns of the design matrix are the model points and the all-ones vector;
  // unknowns are a = 1/r and c = -t/r.
  Eigen::Matrix2cd normal;
  Eigen::Vector2cd rhs;
  if (weight.is_diagonal()) {
    const Eigen::ArrayXd w = weight.diagonal_values().array();
    const Eigen::ArrayXcd m = model_points.array();
    const Eigen::ArrayXcd y = targets.array();
    normal(0, 0) = (w * m.abs2()).sum();
    normal(0, 1) = (w * m.conjugate()).sum();
    normal(1, 0) = std::conj(normal(0, 1));
    normal(1, 1) = w.sum();
    rhs(0) = (w * m.conjugate() * y).sum();
    rhs(1) = (w * y).sum();
  } else {
    Eigen::MatrixXcd design(n, 2);
    design.col(0) = model_points;
    design.col(1).setOnes();
    const Eigen::MatrixXcd wd = weight.matrix() * design;
    normal = design.adjoint() * wd;
    rhs = wd.adjoint() * targets;
  }

  const double det = std::abs(normal(0, 0) * normal(1, 1) - normal(0, 1) * normal(1, 0));
  const double scale = std::abs(normal(0, 0)) * std::abs(normal(1, 1));
  if (!(det > 1e-12 * scale) || scale == 0.0) {
    throw Error(ErrorKind::SingularSystem, "pose normal equations are rank deficient");
  }
  const Eigen::Vector2cd sol = normal.partialPivLu().solve(rhs);
  const Complex a = sol(0);
  const Complex c = sol(1);
  if (!(std::abs(a) > 0.0) || !std::isfinite(std::abs(a))) {
    throw Error(ErrorKind::SingularSystem, "degenerate pose scale");
  }
  return {1.0 / a, -c / a};
}

}  // namespace glsasm
