#pragma once

#include <cstddef>
#include <vector>

#include "glsasm/shape.hpp"

namespace glsasm {

/// Row-major grayscale image with intensities in [0, 1]. Pixel (x, y) has its
/// center at the complex coordinate x + iy.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, double fill = 0.0);

  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool contains(Complex p) const;

  /// Bilinear interpolation; coordinates are clamped to the image.
  double sample(Complex p) const;

  /// Throws InvariantViolation unless the size is at least 16 x 16.
  void validate() const;
};

/// Axis-aligned rectangle in pixel coordinates (inclusive bounds).
struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(Complex p) const { return p.real() >= x0 && p.real() <= x1 && p.imag() >= y0 && p.imag() <= y1; }
};

/// A training or test image with its ground-truth landmarks and any
/// occluding rectangles painted over it.
struct LabeledImage {
  int id = 0;
  Image image;
  LandmarkVector landmarks;
  std::vector<Rect> occlusions;
};

}  // namespace glsasm
