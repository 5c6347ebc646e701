#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "glsasm/appearance.hpp"
#include "glsasm/image.hpp"
#include "glsasm/shape.hpp"

namespace glsasm {

enum class Strategy { Identity, ZhaoInverseDistance, YangTrace, GlsDiagonal, GlsFull };

std::string_view strategy_name(Strategy strategy);
/// Throws ConfigError listing the valid names.
Strategy parse_strategy(std::string_view name);
std::vector<Strategy> all_strategies();
bool needs_covariance(Strategy strategy);

struct ResidualRecord {
  LandmarkVector residuals;  // true - detected, pixels
  int source_image_id = 0;
  int draw = 0;
};

struct ResidualCovariance {
  Eigen::MatrixXcd r_hat;  // as used: off-diagonals zeroed when diagonal_only
  Eigen::MatrixXcd r_inv;  // regularized inverse
  bool diagonal_only = true;
  double shrinkage = 0.05;
  bool centered = false;
  bool identity_fallback = false;  // all-zero residuals
  int record_count = 0;

  Eigen::Index size() const { return r_hat.rows(); }
};

double default_covariance_shrinkage(bool diagonal_only);

/// (1/S) E E^H, optionally centering the residuals first.
Eigen::MatrixXcd sample_residual_covariance(const std::vector<ResidualRecord>& records, bool centered = false);

/// Applies the diagonal restriction and shrinkage and inverts:
/// ((1 - gamma) R + gamma tr(R)/N I)^-1.
ResidualCovariance regularize_covariance(const Eigen::MatrixXcd& r_hat, bool diagonal_only, double shrinkage,
                                         int record_count = 0, bool centered = false);

ResidualCovariance estimate_covariance(const std::vector<ResidualRecord>& records, bool diagonal_only,
                                       double shrinkage, bool centered = false);

struct GateConfig {
  bool enabled = true;
  double alpha = 0.10;
  int dof = 10;
  double critical_value = 0.0;
  int min_valid_landmarks = 6;
  bool fallback = true;

  /// critical_value from the chi-square quantile and min_valid = max(6, N/4).
  static GateConfig make(double alpha, int dof, Eigen::Index n_landmarks);
  void validate() const;
};

struct GateResult {
  Eigen::VectorXd flags;     // 0 or 1 per landmark
  Eigen::Index valid_count = 0;
  bool fallback = false;      // too few passed; all flags forced to 1
  bool insufficient = false;  // too few passed and fallback disabled
};

GateResult chi_square_gate(const Eigen::VectorXd& distances, const GateConfig& gate);
GateResult chi_square_gate(const DetectionResult& detection, const GateConfig& gate);

struct WeightSpec {
  Strategy strategy = Strategy::Identity;
  std::optional<ResidualCovariance> covariance;
  GateConfig gate;
  bool gate_baselines = false;  // apply F to zhao / yang as well

  void validate() const;
  bool uses_gate() const;
};

/// W for one ASM iteration. Gated strategies get F W F with F = diag(f).
HermitianWeight build_weight_matrix(const WeightSpec& spec, const DetectionResult& detection,
                                    const ProfileModel& profiles, const GateResult& gate);

struct PerturbationConfig {
  int draws = 5;
  double max_offset = -1.0;  // negative: search_half_width - 1
  std::uint64_t seed = 0;
};

/// Residuals of `detector` started from normal-direction perturbations of
/// the true landmarks of every held-out image.
std::vector<ResidualRecord> simulate_residuals(const ProfileModel& detector,
                                               const std::vector<const LabeledImage*>& held_out,
                                               const PerturbationConfig& perturbation);

/// Trains the detector on `half_a` and measures residuals on `half_b`.
std::vector<ResidualRecord> simulate_residuals(const std::vector<const LabeledImage*>& half_a,
                                               const std::vector<const LabeledImage*>& half_b,
                                               const ProfileConfig& profile_config,
                                               const PerturbationConfig& perturbation);

/// -log of the zero-mean circular complex normal density with covariance R.
double complex_normal_neg_log_likelihood(const Eigen::VectorXcd& eps, const Eigen::MatrixXcd& covariance);

}  // namespace glsasm
