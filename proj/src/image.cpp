#include "glsasm/image.hpp"

#include <algorithm>
#include <cmath>

#include "glsasm/error.hpp"

namespace glsasm {

Image::Image(int w, int h, double fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

bool Image::contains(Complex p) const {
  return p.real() >= 0.0 && p.imag() >= 0.0 && p.real() <= width - 1 && p.imag() <= height - 1;
}

double Image::sample(Complex p) const {
  const double x = std::clamp(p.real(), 0.0, static_cast<double>(width - 1));
  const double y = std::clamp(p.imag(), 0.0, static_cast<double>(height - 1));
  const int x0 = std::min(static_cast<int>(x), width - 2);
  const int y0 = std::min(static_cast<int>(y), height - 2);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0);
  const double bottom = (1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1);
  return (1.0 - fy) * top + fy * bottom;
}

void Image::validate() const {
  if (width < 16 || height < 16) throw Error(ErrorKind::InvariantViolation, "images must be at least 16x16");
  if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorKind::InvariantViolation, "pixel count does not match width x height");
  }
}

}  // namespace glsasm
