#include "glsasm/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "glsasm/chi_square.hpp"
#include "glsasm/error.hpp"

namespace glsasm {

std::string_view strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::Identity: return "identity";
    case Strategy::ZhaoInverseDistance: return "zhao";
    case Strategy::YangTrace: return "yang";
    case Strategy::GlsDiagonal: return "gls_diagonal";
    case Strategy::GlsFull: return "gls_full";
  }
  return "unknown";
}

std::vector<Strategy> all_strategies() {
  return {Strategy::Identity, Strategy::ZhaoInverseDistance, Strategy::YangTrace, Strategy::GlsDiagonal,
          Strategy::GlsFull};
}

Strategy parse_strategy(std::string_view name) {
  std::string valid;
  for (Strategy s : all_strategies()) {
    if (name == strategy_name(s)) return s;
    if (!valid.empty()) valid += ", ";
    valid += strategy_name(s);
  }
  // Long-form aliases.
  if (name == "zhao_inverse_distance") return Strategy::ZhaoInverseDistance;
  if (name == "yang_trace") return Strategy::YangTrace;
  throw Error(ErrorKind::ConfigError, "unknown strategy '" + std::string(name) + "' (valid: " + valid + ")");
}

bool needs_covariance(Strategy strategy) {
  return strategy == Strategy::GlsDiagonal || strategy == Strategy::GlsFull;
}

double default_covariance_shrinkage(bool diagonal_only) { return diagonal_only ? 0.05 : 0.2; }

Eigen::MatrixXcd sample_residual_covariance(const std::vector<ResidualRecord>& records, bool centered) {
  if (records.empty()) throw Error(ErrorKind::InsufficientData, "no residual records");
  const Eigen::Index n = records.front().residuals.size();
  const auto count = static_cast<Eigen::Index>(records.size());
  Eigen::MatrixXcd e(n, count);
  for (Eigen::Index s = 0; s < count; ++s) {
    const auto& r = records[static_cast<std::size_t>(s)].residuals;
    if (r.size() != n) throw Error(ErrorKind::InvariantViolation, "residual records differ in length");
    if (!r.allFinite()) throw Error(ErrorKind::InvariantViolation, "non-finite residual");
    e.col(s) = r;
  }
  if (centered) e = e.colwise() - e.rowwise().mean();
  Eigen::MatrixXcd r_hat = e * e.adjoint() / static_cast<double>(count);
  return 0.5 * (r_hat + r_hat.adjoint());
}

ResidualCovariance regularize_covariance(const Eigen::MatrixXcd& r_hat, bool diagonal_only, double shrinkage,
                                         int record_count, bool centered) {
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) throw Error(ErrorKind::ConfigError, "shrinkage must lie in [0, 1]");
  const Eigen::Index n = r_hat.rows();
  ResidualCovariance cov;
  cov.diagonal_only = diagonal_only;
  cov.shrinkage = shrinkage;
  cov.centered = centered;
  cov.record_count = record_count;
  cov.r_hat = r_hat;
  if (diagonal_only) {
    cov.r_hat = Eigen::MatrixXcd::Zero(n, n);
    cov.r_hat.diagonal() = r_hat.diagonal().real().cast<Complex>();
  }
  const double trace = cov.r_hat.diagonal().real().sum();
  if (!(trace > 0.0)) {
    cov.identity_fallback = true;
    cov.r_inv = Eigen::MatrixXcd::Identity(n, n);
    return cov;
  }
  Eigen::MatrixXcd reg = (1.0 - shrinkage) * cov.r_hat;
  reg.diagonal().array() += shrinkage * trace / static_cast<double>(n);
  if (diagonal_only) {
    cov.r_inv = Eigen::MatrixXcd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = reg(i, i).real();
      if (!(v > 0.0)) throw Error(ErrorKind::SingularSystem, "residual covariance is singular; increase shrinkage");
      cov.r_inv(i, i) = 1.0 / v;
    }
    return cov;
  }
  Eigen::LLT<Eigen::MatrixXcd> llt(reg);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::SingularSystem, "residual covariance is singular; increase shrinkage");
  }
  Eigen::MatrixXcd inv = llt.solve(Eigen::MatrixXcd::Identity(n, n));
  cov.r_inv = 0.5 * (inv + inv.adjoint());
  return cov;
}

ResidualCovariance estimate_covariance(const std::vector<ResidualRecord>& records, bool diagonal_only,
                                       double shrinkage, bool centered) {
  return regularize_covariance(sample_residual_covariance(records, centered), diagonal_only, shrinkage,
                               static_cast<int>(records.size()), centered);
}

GateConfig GateConfig::make(double alpha, int dof, Eigen::Index n_landmarks) {
  GateConfig gate;
  gate.alpha = alpha;
  gate.dof = dof;
  gate.critical_value = chi_square_upper_quantile(alpha, dof);
  gate.min_valid_landmarks = static_cast<int>(std::max<Eigen::Index>(6, n_landmarks / 4));
  return gate;
}

void GateConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::ConfigError, "false alarm rate must lie in (0, 1)");
  if (dof < 1) throw Error(ErrorKind::ConfigError, "gate degrees of freedom must be >= 1");
  const double expected = chi_square_upper_quantile(alpha, dof);
  if (std::abs(expected - critical_value) > 1e-6 * std::max(1.0, expected)) {
    throw Error(ErrorKind::InvariantViolation, "gate critical value disagrees with the chi-square quantile");
  }
}

GateResult chi_square_gate(const Eigen::VectorXd& distances, const GateConfig& gate) {
  GateResult result;
  const Eigen::Index n = distances.size();
  result.flags = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (distances[i] <= gate.critical_value) result.flags[i] = 1.0;
  }
  result.valid_count = static_cast<Eigen::Index>(result.flags.sum());
  if (result.valid_count < gate.min_valid_landmarks) {
    if (gate.fallback) {
      result.fallback = true;
      result.flags.setOnes();
    } else {
      result.insufficient = true;
    }
  }
  return result;
}

GateResult chi_square_gate(const DetectionResult& detection, const GateConfig& gate) {
  return chi_square_gate(detection.distances, gate);
}

void WeightSpec::validate() const {
  if (needs_covariance(strategy) && !covariance) {
    throw Error(ErrorKind::ConfigError,
                "strategy " + std::string(strategy_name(strategy)) + " needs a calibrated residual covariance");
  }
}

bool WeightSpec::uses_gate() const {
  if (!gate.enabled) return false;
  switch (strategy) {
    case Strategy::Identity: return false;
    case Strategy::ZhaoInverseDistance:
    case Strategy::YangTrace: return gate_baselines;
    case Strategy::GlsDiagonal:
    case Strategy::GlsFull: return true;
  }
  return false;
}

HermitianWeight build_weight_matrix(const WeightSpec& spec, const DetectionResult& detection,
                                    const ProfileModel& profiles, const GateResult& gate) {
  spec.validate();
  const Eigen::Index n = detection.size();
  const bool gated = spec.uses_gate();
  if (gated && gate.insufficient) {
    throw Error(ErrorKind::AllLandmarksInvalid, "too few landmarks passed the validity gate");
  }
  const Eigen::VectorXd f = gated ? gate.flags : Eigen::VectorXd::Ones(n);

  switch (spec.strategy) {
    case Strategy::Identity:
      return HermitianWeight::identity(n);
    case Strategy::ZhaoInverseDistance: {
      Eigen::VectorXd w(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = detection.distances[i];
        w[i] = std::isinf(d) ? 0.0 : f[i] / std::max(d, 1e-6);
      }
      return HermitianWeight::diagonal(w);
    }
    case Strategy::YangTrace: {
      Eigen::VectorXd w(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        w[i] = f[i] / (1.0 + profiles.covariances[static_cast<std::size_t>(i)].trace());
      }
      return HermitianWeight::diagonal(w);
    }
    case Strategy::GlsDiagonal:
    case Strategy::GlsFull: {
      const ResidualCovariance& cov = *spec.covariance;
      if (cov.size() != n) throw Error(ErrorKind::InvariantViolation, "covariance size differs from landmark count");
      if (spec.strategy == Strategy::GlsDiagonal && !cov.diagonal_only) {
        throw Error(ErrorKind::ConfigError, "gls_diagonal needs a diagonal residual covariance");
      }
      if (cov.diagonal_only) {
        return HermitianWeight::diagonal(f.cwiseProduct(cov.r_inv.diagonal().real()));
      }
      Eigen::MatrixXcd w = f.cast<Complex>().asDiagonal() * cov.r_inv * f.cast<Complex>().asDiagonal();
      return HermitianWeight(std::move(w));
    }
  }
  throw Error(ErrorKind::ConfigError, "unhandled strategy");
}

std::vector<ResidualRecord> simulate_residuals(const ProfileModel& detector,
                                               const std::vector<const LabeledImage*>& held_out,
                                               const PerturbationConfig& perturbation) {
  if (perturbation.draws < 1) throw Error(ErrorKind::ConfigError, "at least one perturbation draw is required");
  const double max_offset =
      perturbation.max_offset < 0.0 ? detector.config.search_half_width - 1.0 : perturbation.max_offset;
  std::vector<ResidualRecord> records;
  records.reserve(held_out.size() * static_cast<std::size_t>(perturbation.draws));
  for (const LabeledImage* sample : held_out) {
    std::mt19937_64 rng(perturbation.seed ^ static_cast<std::uint64_t>(sample->id));
    std::uniform_real_distribution<double> offset(-max_offset, max_offset);
    const LandmarkVector& truth = sample->landmarks;
    const LandmarkVector normals = contour_normals(truth, detector.config.closed);
    for (int draw = 0; draw < perturbation.draws; ++draw) {
      LandmarkVector start = truth;
      if (max_offset > 0.0) {
        for (Eigen::Index i = 0; i < truth.size(); ++i) start[i] += offset(rng) * normals[i];
      }
      const DetectionResult det = detect_targets(sample->image, start, detector);
      records.push_back({truth - det.targets, sample->id, draw});
    }
  }
  return records;
}

std::vector<ResidualRecord> simulate_residuals(const std::vector<const LabeledImage*>& half_a,
                                               const std::vector<const LabeledImage*>& half_b,
                                               const ProfileConfig& profile_config,
                                               const PerturbationConfig& perturbation) {
  if (half_a.size() < 2 || half_b.size() < 2) {
    throw Error(ErrorKind::InsufficientData, "each calibration half needs at least 2 images");
  }
  for (const auto* a : half_a) {
    for (const auto* b : half_b) {
      if (a->id == b->id) throw Error(ErrorKind::InvariantViolation, "calibration halves must be disjoint");
    }
  }
  std::vector<const Image*> images;
  std::vector<LandmarkVector> landmarks;
  for (const auto* a : half_a) {
    images.push_back(&a->image);
    landmarks.push_back(a->landmarks);
  }
  const ProfileModel detector = train_profiles(images, landmarks, profile_config);
  return simulate_residuals(detector, half_b, perturbation);
}

double complex_normal_neg_log_likelihood(const Eigen::VectorXcd& eps, const Eigen::MatrixXcd& covariance) {
  const Eigen::Index n = eps.size();
  Eigen::LLT<Eigen::MatrixXcd> llt(covariance);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::SingularSystem, "covariance is not positive definite");
  const Eigen::VectorXcd whitened = llt.matrixL().solve(eps);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().real().array().log().sum();
  return static_cast<double>(n) * std::log(std::numbers::pi) + log_det + whitened.squaredNorm();
}

}  // namespace glsasm
