#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "glsasm/appearance.hpp"
#include "glsasm/image.hpp"
#include "glsasm/pdm.hpp"
#include "glsasm/weighting.hpp"

namespace glsasm {

// Binary 8-bit PGM ("P5"); intensities map to [0, 1] as v / 255.
Image decode_pgm(const std::string& bytes);
std::string encode_pgm(const Image& img);
Image load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image& img);

// One "x y" pair per line; LF or CRLF. Text after '#' is a comment.
LandmarkVector parse_landmarks(const std::string& text);
std::string format_landmarks(const LandmarkVector& k);
LandmarkVector load_landmarks(const std::filesystem::path& path);
void save_landmarks(const std::filesystem::path& path, const LandmarkVector& k);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

/// CRC-32 of the bytes as 8 lowercase hex digits.
std::string checksum(const std::string& bytes);

using Provenance = std::map<std::string, std::string>;

/// Raw residual covariance as calibrated; the per-strategy regularization is
/// derived from it on demand.
struct Calibration {
  Eigen::MatrixXcd r_hat;
  int record_count = 0;
  bool centered = false;
  bool diagonal_only = true;
  double shrinkage = 0.05;

  ResidualCovariance covariance(bool diagonal_only) const;
};

struct ModelBundle {
  PointDistributionModel pdm;
  ProfileModel profiles;
  std::optional<Calibration> calibration;
  GateConfig gate;
  Provenance provenance;
};

inline constexpr int kModelFormatVersion = 1;

std::string encode_model(const ModelBundle& bundle);
/// Validates every stored invariant; throws VersionMismatch, FormatError or
/// InvariantViolation.
ModelBundle decode_model(const std::string& text);
void save_model(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_model(const std::filesystem::path& path);

struct DatasetEntry {
  int id = 0;
  std::string image_path;     // relative to the manifest directory
  std::string landmark_path;
  std::string checksum;       // over image bytes followed by landmark bytes
  std::vector<Rect> occlusions;
};

struct Dataset {
  std::vector<DatasetEntry> entries;
  int n_landmarks = 0;
  bool closed = true;
  std::vector<int> occluded_landmarks;
  Provenance provenance;
  std::filesystem::path root;

  /// Checksum over the entry rows in id order.
  std::string manifest_checksum() const;
};

std::string encode_manifest(const Dataset& dataset);
Dataset decode_manifest(const std::string& text, const std::filesystem::path& root);
void save_manifest(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_manifest(const std::filesystem::path& path);

/// Loads every entry, verifying per-entry checksums.
std::vector<LabeledImage> load_samples(const Dataset& dataset);

}  // namespace glsasm
