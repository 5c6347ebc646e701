#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "glsasm/image.hpp"
#include "glsasm/shape.hpp"

namespace glsasm {

/// An occluder painted over the landmarks first..last (inclusive, 0-based):
/// their bounding box grown by a margin drawn uniformly per image.
struct OcclusionSpec {
  int first_landmark = 0;
  int last_landmark = 0;
  double margin_min = 3.0;
  double margin_max = 9.0;
  double intensity = 0.95;
  double probability = 1.0;  // chance that a given phantom carries it
};

struct PhantomConfig {
  int n_landmarks = 40;
  int image_size = 480;
  int shape_modes = 3;
  double mode_amplitude = 0.08;  // std of the first radial mode, relative to the radius
  double mode_clip = 1.5;        // mode coefficients are redrawn beyond this many std; 0 disables
  double noise_sigma = 0.05;
  double blur_sigma = 1.5;
  std::vector<OcclusionSpec> occlusions;
  bool closed = true;
  double size_fraction = 0.6;      // shape extent relative to the image side
  double translation_jitter = 8.0; // px
  double rotation_jitter = 0.05;   // rad
  double scale_jitter = 0.05;      // relative
  std::uint64_t seed = 0;

  void validate() const;
};

struct Phantom {
  Image image;
  LandmarkVector landmarks;
  std::vector<Rect> occlusions;
};

/// Pure function of the config: smooth closed bone-like contour, interior 0.7
/// on background 0.3, Gaussian blur, additive noise, occluders at their
/// intensity, 8-bit quantization.
Phantom generate_phantom(const PhantomConfig& config);

/// Seed of phantom `index` within a corpus seeded with `seed`.
std::uint64_t corpus_seed(std::uint64_t seed, int index);

/// `count` phantoms; phantom i uses config with seed corpus_seed(config.seed, i).
/// Ids are 0..count-1.
std::vector<LabeledImage> generate_corpus(const PhantomConfig& config, int count);

/// Parses "25-31,37-40" (0-based, inclusive) into occlusion specs.
std::vector<OcclusionSpec> parse_occlusion_list(std::string_view text);
std::string format_occlusion_list(const std::vector<OcclusionSpec>& specs);

/// Landmark indices covered by the specs, sorted and unique.
std::vector<int> occluded_landmarks(const std::vector<OcclusionSpec>& specs);

}  // namespace glsasm
