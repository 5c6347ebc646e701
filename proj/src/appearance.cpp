#include "glsasm/appearance.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

#include <Eigen/Dense>

#include "glsasm/error.hpp"

namespace glsasm {

void ProfileConfig::validate() const {
  if (profile_len < 3 || profile_len % 2 == 0) throw Error(ErrorKind::ConfigError, "profile length must be odd and >= 3");
  if (search_half_width < 1) throw Error(ErrorKind::ConfigError, "search half width must be >= 1");
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) throw Error(ErrorKind::ConfigError, "profile shrinkage must lie in [0, 1]");
}

void ProfileModel::finalize() {
  inverses.clear();
  inverses.reserve(covariances.size());
  for (std::size_t n = 0; n < covariances.size(); ++n) {
    const Eigen::MatrixXd& s = covariances[n];
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
      throw Error(ErrorKind::InvariantViolation, "profile covariance " + std::to_string(n) + " is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorKind::InvariantViolation, "profile covariance " + std::to_string(n) + " is not positive definite");
    }
    Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(s.rows(), s.cols()));
    inverses.push_back(0.5 * (inv + inv.transpose()));
  }
}

LandmarkVector contour_normals(const LandmarkVector& landmarks, bool closed) {
  const Eigen::Index n = landmarks.size();
  LandmarkVector normals(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index prev = i - 1;
    Eigen::Index next = i + 1;
    if (closed) {
      prev = (i + n - 1) % n;
      next = (i + 1) % n;
    } else {
      prev = std::max<Eigen::Index>(prev, 0);
      next = std::min<Eigen::Index>(next, n - 1);
    }
    const Complex tangent = landmarks[next] - landmarks[prev];
    const double len = std::abs(tangent);
    normals[i] = len > 0.0 ? Complex(0.0, -1.0) * tangent / len : Complex(1.0, 0.0);
  }
  return normals;
}

Eigen::VectorXd sample_raw_profile(const Image& img, Complex center, Complex normal, int len) {
  Eigen::VectorXd raw(len);
  const int half = len / 2;
  for (int k = 0; k < len; ++k) raw[k] = img.sample(center + static_cast<double>(k - half) * normal);
  return raw;
}

Eigen::VectorXd normalize_profile(const Eigen::VectorXd& raw) {
  const Eigen::Index m = raw.size() - 1;
  Eigen::VectorXd g = raw.tail(m) - raw.head(m);
  const double l1 = g.cwiseAbs().sum();
  if (l1 < 1e-12) return Eigen::VectorXd::Zero(m);
  return g / l1;
}

Eigen::VectorXd sample_profile(const Image& img, Complex center, Complex normal, int len) {
  if (!img.contains(center)) throw Error(ErrorKind::OutOfBounds, "profile center lies outside the image");
  return normalize_profile(sample_raw_profile(img, center, normal, len));
}

ProfileModel train_profiles(const std::vector<const Image*>& images, const std::vector<LandmarkVector>& landmark_sets,
                            const ProfileConfig& config) {
  config.validate();
  if (images.size() != landmark_sets.size()) {
    throw Error(ErrorKind::InvariantViolation, "one landmark set per training image is required");
  }
  if (images.size() < 2) throw Error(ErrorKind::InsufficientData, "profile training needs at least 2 images");
  const Eigen::Index n = landmark_sets.front().size();
  const int dim = config.effective_len();
  const auto count = static_cast<Eigen::Index>(images.size());

  std::vector<Eigen::MatrixXd> samples(static_cast<std::size_t>(n), Eigen::MatrixXd(dim, count));
  for (Eigen::Index m = 0; m < count; ++m) {
    const auto& lm = landmark_sets[static_cast<std::size_t>(m)];
    if (lm.size() != n) throw Error(ErrorKind::InvariantViolation, "landmark sets differ in size");
    const LandmarkVector normals = contour_normals(lm, config.closed);
    for (Eigen::Index i = 0; i < n; ++i) {
      samples[static_cast<std::size_t>(i)].col(m) =
          sample_profile(*images[static_cast<std::size_t>(m)], lm[i], normals[i], config.profile_len);
    }
  }

  ProfileModel model;
  model.config = config;
  model.training_count = static_cast<int>(count);
  model.rank_deficient = count < dim + 1;
  constexpr double kFloor = 1e-8;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::MatrixXd& x = samples[static_cast<std::size_t>(i)];
    Eigen::VectorXd mean = x.rowwise().mean();
    const Eigen::MatrixXd centered = x.colwise() - mean;
    Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(count - 1);
    const double level = std::max(cov.trace() / dim, kFloor);
    cov = (1.0 - config.shrinkage) * cov;
    cov.diagonal().array() += config.shrinkage * level;
    if (config.shrinkage == 0.0) cov.diagonal().array() += kFloor;
    model.means.push_back(std::move(mean));
    model.covariances.push_back(0.5 * (cov + cov.transpose()));
  }
  model.finalize();
  return model;
}

double mahalanobis(const Eigen::VectorXd& g, Eigen::Index landmark, const ProfileModel& model) {
  const auto idx = static_cast<std::size_t>(landmark);
  const Eigen::VectorXd diff = g - model.means[idx];
  return std::max(0.0, diff.dot(model.inverses[idx] * diff));
}

DetectionResult detect_targets(const Image& img, const LandmarkVector& current, const ProfileModel& model) {
  const Eigen::Index n = current.size();
  if (n != model.n_landmarks()) throw Error(ErrorKind::InvariantViolation, "landmark count differs from profile model");
  const int len = model.config.profile_len;
  const int half = len / 2;
  const int s = model.config.search_half_width;

  DetectionResult result;
  result.targets = current;
  result.distances = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  result.profiles.assign(static_cast<std::size_t>(n), Eigen::VectorXd::Zero(model.config.effective_len()));
  result.offsets = Eigen::VectorXi::Zero(n);
  result.normals = contour_normals(current, model.config.closed);

  // Candidate order: 0, -1, +1, -2, +2, ... so a strict '<' realizes the
  // tie-break toward small displacement and then the negative side.
  std::vector<int> order{0};
  for (int k = 1; k <= s; ++k) {
    order.push_back(-k);
    order.push_back(k);
  }

  // Raw samples along the whole search line, reused by every candidate.
  Eigen::VectorXd line(2 * (s + half) + 1);
  std::vector<bool> inside(static_cast<std::size_t>(line.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex normal = result.normals[i];
    for (Eigen::Index j = 0; j < line.size(); ++j) {
      const Complex p = current[i] + static_cast<double>(j - s - half) * normal;
      inside[static_cast<std::size_t>(j)] = img.contains(p);
      line[j] = img.sample(p);
    }
    double best = std::numeric_limits<double>::infinity();
    for (int k : order) {
      const int start = k + s;  // index of the first raw sample of this candidate
      bool ok = true;
      for (int j = start; j < start + len && ok; ++j) ok = inside[static_cast<std::size_t>(j)];
      if (!ok) continue;
      const Eigen::VectorXd g = normalize_profile(line.segment(start, len));
      const double d = mahalanobis(g, i, model);
      if (d < best) {
        best = d;
        result.distances[i] = d;
        result.offsets[i] = k;
        result.targets[i] = current[i] + static_cast<double>(k) * normal;
        result.profiles[static_cast<std::size_t>(i)] = g;
      }
    }
  }
  return result;
}

}  // namespace glsasm
