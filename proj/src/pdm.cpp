#include "glsasm/pdm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "glsasm/error.hpp"

namespace glsasm {

void PointDistributionModel::validate(double tolerance) const {
  if (mean.size() < 6 || mean.size() % 2 != 0) {
    throw Error(ErrorKind::InvariantViolation, "mean shape must have even length >= 6");
  }
  if (modes.rows() != mean.size() || modes.cols() != eigenvalues.size()) {
    throw Error(ErrorKind::InvariantViolation, "mode matrix shape does not match mean/eigenvalues");
  }
  if (!mean.allFinite() || !modes.allFinite() || !eigenvalues.allFinite()) {
    throw Error(ErrorKind::InvariantViolation, "non-finite model entries");
  }
  const Eigen::MatrixXd gram = modes.transpose() * modes;
  const double dev = (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
  if (gram.size() > 0 && dev > tolerance) {
    throw Error(ErrorKind::InvariantViolation, "modes are not orthonormal (max deviation " + std::to_string(dev) + ")");
  }
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    if (!(eigenvalues[i] > 0.0)) throw Error(ErrorKind::InvariantViolation, "eigenvalue " + std::to_string(i) + " is not positive");
    if (i > 0 && eigenvalues[i] > eigenvalues[i - 1]) {
      throw Error(ErrorKind::InvariantViolation, "eigenvalues are not sorted in descending order");
    }
  }
  if (!(xi > 0.0)) throw Error(ErrorKind::InvariantViolation, "xi must be positive");
}

PointDistributionModel train_pdm(const std::vector<RealShapeVector>& aligned, const PdmOptions& options) {
  if (aligned.size() < 2) throw Error(ErrorKind::InsufficientData, "PDM training needs at least 2 shapes");
  if (!(options.variance_fraction > 0.0 && options.variance_fraction <= 1.0)) {
    throw Error(ErrorKind::ConfigError, "variance_fraction must lie in (0, 1]");
  }
  if (!(options.xi > 0.0)) throw Error(ErrorKind::ConfigError, "xi must be positive");

  const Eigen::Index dim = aligned.front().size();
  const auto count = static_cast<Eigen::Index>(aligned.size());
  Eigen::MatrixXd data(dim, count);
  for (Eigen::Index m = 0; m < count; ++m) {
    if (aligned[m].size() != dim) throw Error(ErrorKind::InvariantViolation, "aligned shapes differ in length");
    data.col(m) = aligned[m];
  }

  PointDistributionModel model;
  model.xi = options.xi;
  model.variance_fraction = options.variance_fraction;
  model.mean = data.rowwise().mean();
  const Eigen::MatrixXd centered = data.colwise() - model.mean;
  const double denom = static_cast<double>(count - 1);

  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  if (count < dim) {
    // Gram trick: eigenvectors of D^T D map to those of D D^T.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered.transpose() * centered / denom);
    values = eig.eigenvalues();
    vectors = eig.eigenvectors();
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered * centered.transpose() / denom);
    values = eig.eigenvalues();
    vectors = eig.eigenvectors();
  }

  const double total = centered.squaredNorm() / denom;
  const double scale = std::max(1.0, model.mean.squaredNorm());
  if (!(total > 1e-20 * scale)) throw Error(ErrorKind::NoVariance, "all training shapes are identical");

  std::vector<Eigen::Index> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return values[a] > values[b]; });
  const double largest = values[order.front()];

  std::vector<Eigen::Index> kept;
  double cumulative = 0.0;
  for (Eigen::Index idx : order) {
    if (values[idx] <= 1e-12 * largest) break;
    kept.push_back(idx);
    cumulative += values[idx];
    if (cumulative >= options.variance_fraction * total * (1.0 - 1e-12)) break;
  }

  const auto p = static_cast<Eigen::Index>(kept.size());
  model.modes.resize(dim, p);
  model.eigenvalues.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const Eigen::Index idx = kept[static_cast<std::size_t>(j)];
    Eigen::VectorXd u;
    if (count < dim) {
      u = centered * vectors.col(idx);
    } else {
      u = vectors.col(idx);
    }
    u.normalize();
    Eigen::Index arg = 0;
    u.cwiseAbs().maxCoeff(&arg);
    if (u[arg] < 0) u = -u;
    model.modes.col(j) = u;
    model.eigenvalues[j] = values[idx];
  }
  // Re-orthonormalize to absorb the rounding of the Gram route.
  if (p > 0) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(model.modes);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, p);
    for (Eigen::Index j = 0; j < p; ++j) {
      if (q.col(j).dot(model.modes.col(j)) < 0) q.col(j) = -q.col(j);
    }
    model.modes = q;
  }
  model.retained_fraction = model.eigenvalues.sum() / total;
  return model;
}

ShapeParams project_to_params(const RealShapeVector& x, const PointDistributionModel& model) {
  if (x.size() != model.mean.size()) throw Error(ErrorKind::InvariantViolation, "shape vector length mismatch");
  return model.modes.transpose() * (x - model.mean);
}

double plausibility(const ShapeParams& b, const PointDistributionModel& model) {
  return (b.array().square() / model.eigenvalues.array()).sum();
}

ShapeParams constrain(const ShapeParams& b, const PointDistributionModel& model) {
  const double q = plausibility(b, model);
  if (q <= model.xi) return b;
  ShapeParams out = b * std::sqrt(model.xi / q);
  // Rounding can leave the scaled vector a hair outside; shrink until inside.
  while (plausibility(out, model) > model.xi) out *= (1.0 - 1e-15);
  return out;
}

LandmarkVector model_points(const ShapeParams& b, const PointDistributionModel& model) {
  return from_real(model.mean + model.modes * b);
}

LandmarkVector reconstruct(const ShapeParams& b, const SimilarityTransform& pose, const PointDistributionModel& model) {
  return invert_transform(model_points(b, model), pose);
}

}  // namespace glsasm
