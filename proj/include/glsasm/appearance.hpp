#pragma once

#include <vector>

#include <Eigen/Core>

#include "glsasm/image.hpp"
#include "glsasm/shape.hpp"

namespace glsasm {

struct ProfileConfig {
  int profile_len = 11;       // raw samples along the normal, odd
  int search_half_width = 7;  // candidate offsets -s..s
  double shrinkage = 0.1;     // gamma in (1-gamma) S + gamma tr(S)/l I
  bool closed = true;         // contour topology used for normals

  /// Length of the normalized derivative profile, which is also the
  /// chi-square degrees of freedom.
  int effective_len() const { return profile_len - 1; }
  void validate() const;
};

/// Per-landmark gray-level profile statistics.
struct ProfileModel {
  ProfileConfig config;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;  // after shrinkage
  std::vector<Eigen::MatrixXd> inverses;
  int training_count = 0;
  bool rank_deficient = false;  // fewer training images than profile entries + 1

  Eigen::Index n_landmarks() const { return static_cast<Eigen::Index>(means.size()); }

  /// Rebuilds `inverses` and checks symmetry / positive definiteness.
  void finalize();
};

struct DetectionResult {
  LandmarkVector targets;
  Eigen::VectorXd distances;               // +inf where no candidate fit in the image
  std::vector<Eigen::VectorXd> profiles;   // profile at the chosen target
  Eigen::VectorXi offsets;                 // chosen step along the normal
  LandmarkVector normals;

  Eigen::Index size() const { return targets.size(); }
};

/// Unit normals perpendicular to the chord between contour neighbours
/// (one-sided at the ends of an open contour).
LandmarkVector contour_normals(const LandmarkVector& landmarks, bool closed);

/// Raw bilinear samples at unit spacing along `normal`, centered on `center`.
Eigen::VectorXd sample_raw_profile(const Image& img, Complex center, Complex normal, int len);

/// Adjacent differences scaled to unit L1 norm; zero when the norm is < 1e-12.
Eigen::VectorXd normalize_profile(const Eigen::VectorXd& raw);

/// Normalized derivative profile (length len - 1). Throws OutOfBounds when
/// the center is outside the image; off-image samples are clamped.
Eigen::VectorXd sample_profile(const Image& img, Complex center, Complex normal, int len);

ProfileModel train_profiles(const std::vector<const Image*>& images, const std::vector<LandmarkVector>& landmark_sets,
                            const ProfileConfig& config = {});

double mahalanobis(const Eigen::VectorXd& g, Eigen::Index landmark, const ProfileModel& model);

/// Searches 2s+1 candidates along each landmark normal for the profile with
/// the smallest Mahalanobis distance.
DetectionResult detect_targets(const Image& img, const LandmarkVector& current, const ProfileModel& model);

}  // namespace glsasm
