#include "glsasm/phantom.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "glsasm/error.hpp"

namespace glsasm {

void PhantomConfig::validate() const {
  if (n_landmarks < 3) throw Error(ErrorKind::ConfigError, "phantoms need at least 3 landmarks");
  if (image_size < 64) throw Error(ErrorKind::ConfigError, "image_size must be >= 64");
  if (noise_sigma < 0.0 || blur_sigma < 0.0) throw Error(ErrorKind::ConfigError, "noise and blur must be >= 0");
  if (shape_modes < 0) throw Error(ErrorKind::ConfigError, "shape_modes must be >= 0");
  if (mode_clip < 0.0 || (mode_clip > 0.0 && mode_clip < 0.5)) {
    throw Error(ErrorKind::ConfigError, "mode_clip must be 0 or >= 0.5");
  }
  if (!(size_fraction > 0.0 && size_fraction < 0.9)) throw Error(ErrorKind::ConfigError, "size_fraction must lie in (0, 0.9)");
  for (const auto& o : occlusions) {
    if (o.first_landmark < 0 || o.last_landmark >= n_landmarks || o.first_landmark > o.last_landmark) {
      throw Error(ErrorKind::ConfigError, "occlusion landmark range out of bounds");
    }
    if (o.margin_min < 0.0 || o.margin_max < o.margin_min) throw Error(ErrorKind::ConfigError, "bad occlusion margins");
  }
}

namespace {

struct RadialShape {
  double radius;
  std::vector<double> amplitudes;

  // Bone-like base outline plus seeded sinusoidal radial modes.
  double operator()(double theta) const {
    double r = 1.0 + 0.18 * std::cos(2.0 * theta) + 0.07 * std::cos(3.0 * theta + 0.4);
    for (std::size_t k = 0; k < amplitudes.size(); ++k) {
      r += amplitudes[k] * std::cos(static_cast<double>(k + 2) * theta + 0.7 * static_cast<double>(k));
    }
    return radius * r;
  }
};

void gaussian_blur(Image& img, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (double& k : kernel) k /= sum;

  Image tmp(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * img.at(std::clamp(x + i, 0, img.width - 1), y);
      }
      tmp.at(x, y) = acc;
    }
  }
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(x, std::clamp(y + i, 0, img.height - 1));
      }
      img.at(x, y) = acc;
    }
  }
}

}  // namespace

Phantom generate_phantom(const PhantomConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  const double size = config.image_size;
  // The base outline spans about 2.36 radii horizontally.
  RadialShape shape{config.size_fraction * size / 2.36, {}};
  for (int k = 0; k < config.shape_modes; ++k) {
    double z = normal(rng);
    while (config.mode_clip > 0.0 && std::abs(z) > config.mode_clip) z = normal(rng);
    shape.amplitudes.push_back(z * config.mode_amplitude / (k + 1));
  }
  const Complex center = Complex(0.5 * (size - 1), 0.5 * (size - 1)) +
                         Complex(unit(rng), unit(rng)) * config.translation_jitter;
  const double angle = unit(rng) * config.rotation_jitter;
  const double scale = 1.0 + unit(rng) * config.scale_jitter;
  const Complex rotation = std::polar(scale, angle);

  Phantom out;
  const int n = config.n_landmarks;
  out.landmarks.resize(n);
  const double span = config.closed ? 2.0 * std::numbers::pi : 1.5 * std::numbers::pi;
  for (int i = 0; i < n; ++i) {
    const double theta = config.closed ? span * i / n : span * i / (n - 1);
    out.landmarks[i] = center + rotation * std::polar(shape(theta), theta);
  }

  out.image = Image(config.image_size, config.image_size);
  for (int y = 0; y < config.image_size; ++y) {
    for (int x = 0; x < config.image_size; ++x) {
      const Complex local = (Complex(x, y) - center) / rotation;
      const bool inside = std::abs(local) < shape(std::arg(local));
      out.image.at(x, y) = inside ? 0.7 : 0.3;
    }
  }
  gaussian_blur(out.image, config.blur_sigma);
  if (config.noise_sigma > 0.0) {
    for (double& v : out.image.pixels) v += config.noise_sigma * normal(rng);
  }

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (const auto& spec : config.occlusions) {
    const double present = u01(rng);
    const double margin = spec.margin_min + (spec.margin_max - spec.margin_min) * u01(rng);
    if (present >= spec.probability) continue;
    const auto seg = out.landmarks.segment(spec.first_landmark, spec.last_landmark - spec.first_landmark + 1);
    Rect rect{seg.real().minCoeff() - margin, seg.imag().minCoeff() - margin, seg.real().maxCoeff() + margin,
              seg.imag().maxCoeff() + margin};
    for (int y = std::max(0, static_cast<int>(std::ceil(rect.y0))); y <= std::min(config.image_size - 1, static_cast<int>(std::floor(rect.y1))); ++y) {
      for (int x = std::max(0, static_cast<int>(std::ceil(rect.x0))); x <= std::min(config.image_size - 1, static_cast<int>(std::floor(rect.x1))); ++x) {
        out.image.at(x, y) = spec.intensity;
      }
    }
    out.occlusions.push_back(rect);
  }

  for (double& v : out.image.pixels) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

std::vector<OcclusionSpec> parse_occlusion_list(std::string_view text) {
  std::vector<OcclusionSpec> specs;
  const auto parse_int = [&](std::string_view s) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw Error(ErrorKind::ConfigError, "bad occlusion range '" + std::string(text) + "'");
    }
    return v;
  };
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view item = text.substr(0, comma);
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    if (item.empty()) continue;
    const auto dash = item.find('-');
    OcclusionSpec spec;
    spec.first_landmark = parse_int(item.substr(0, dash));
    spec.last_landmark = dash == std::string_view::npos ? spec.first_landmark : parse_int(item.substr(dash + 1));
    specs.push_back(spec);
  }
  return specs;
}

std::string format_occlusion_list(const std::vector<OcclusionSpec>& specs) {
  std::string out;
  for (const auto& s : specs) {
    if (!out.empty()) out += ',';
    out += std::to_string(s.first_landmark) + '-' + std::to_string(s.last_landmark);
  }
  return out;
}

std::vector<int> occluded_landmarks(const std::vector<OcclusionSpec>& specs) {
  std::set<int> ids;
  for (const auto& s : specs) {
    for (int i = s.first_landmark; i <= s.last_landmark; ++i) ids.insert(i);
  }
  return {ids.begin(), ids.end()};
}

std::uint64_t corpus_seed(std::uint64_t seed, int index) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<LabeledImage> generate_corpus(const PhantomConfig& config, int count) {
  if (count < 1) throw Error(ErrorKind::ConfigError, "corpus size must be >= 1");
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    PhantomConfig c = config;
    c.seed = corpus_seed(config.seed, i);
    Phantom p = generate_phantom(c);
    out.push_back({i, std::move(p.image), std::move(p.landmarks), std::move(p.occlusions)});
  }
  return out;
}

}  // namespace glsasm
