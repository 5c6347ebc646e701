#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "glsasm/appearance.hpp"
#include "glsasm/chi_square.hpp"
#include "glsasm/phantom.hpp"
#include "glsasm/weighting.hpp"
#include "support.hpp"

using namespace glsasm;

namespace {

Image vertical_step(int size, int edge_x) {
  Image img(size, size, 0.3);
  for (int y = 0; y < size; ++y) {
    for (int x = edge_x; x < size; ++x) img.at(x, y) = 0.7;
  }
  return img;
}

struct Trained {
  std::vector<LabeledImage> corpus;
  ProfileModel model;
};

Trained train_on_phantoms(int count, double noise, std::uint64_t seed) {
  PhantomConfig pc;
  pc.noise_sigma = noise;
  pc.seed = seed;
  Trained t;
  t.corpus = generate_corpus(pc, count);
  std::vector<const Image*> images;
  std::vector<LandmarkVector> sets;
  for (const auto& s : t.corpus) {
    images.push_back(&s.image);
    sets.push_back(s.landmarks);
  }
  t.model = train_profiles(images, sets);
  return t;
}

}  // namespace

TEST_CASE("constant image gives the zero profile") {
  const Image img(32, 32, 0.42);
  const Eigen::VectorXd g = sample_profile(img, Complex(16, 16), Complex(1, 0), 11);
  CHECK(g.size() == 10);
  CHECK(g.norm() == 0.0);
}

TEST_CASE("step edge gives a single derivative peak at the center") {
  const Image img = vertical_step(64, 32);
  const Eigen::VectorXd raw = sample_raw_profile(img, Complex(31, 20), Complex(1, 0), 11);
  for (int j = 0; j < 11; ++j) CHECK(raw[j] == doctest::Approx(j <= 5 ? 0.3 : 0.7));
  const Eigen::VectorXd g = sample_profile(img, Complex(31, 20), Complex(1, 0), 11);
  Eigen::Index peak = 0;
  g.cwiseAbs().maxCoeff(&peak);
  CHECK(peak == 5);
  CHECK(g[5] == doctest::Approx(1.0));
  CHECK(g.cwiseAbs().sum() == doctest::Approx(1.0));
}

TEST_CASE("reversing the normal reverses the raw profile") {
  PhantomConfig pc;
  pc.seed = 3;
  const Phantom ph = generate_phantom(pc);
  const LandmarkVector normals = contour_normals(ph.landmarks, true);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const Eigen::VectorXd fwd = sample_raw_profile(ph.image, ph.landmarks[i], normals[i], 11);
    const Eigen::VectorXd rev = sample_raw_profile(ph.image, ph.landmarks[i], -normals[i], 11);
    CHECK((fwd - rev.reverse()).norm() < 1e-12);
    // The derivative profile flips order and sign.
    const Eigen::VectorXd gf = normalize_profile(fwd);
    const Eigen::VectorXd gr = normalize_profile(rev);
    CHECK((gf + gr.reverse()).norm() < 1e-12);
  }
}

TEST_CASE("sample_profile rejects centers outside the image") {
  const Image img(32, 32, 0.5);
  CHECK_ERROR_KIND(sample_profile(img, Complex(-1, 4), Complex(1, 0), 11), ErrorKind::OutOfBounds);
  CHECK_NOTHROW(sample_profile(img, Complex(0, 0), Complex(1, 0), 11));
}

TEST_CASE("contour normals are unit and perpendicular to the neighbour chord") {
  LandmarkVector square(4);
  square << Complex(0, 0), Complex(10, 0), Complex(10, 10), Complex(0, 10);
  const LandmarkVector closed = contour_normals(square, true);
  const LandmarkVector open = contour_normals(square, false);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(std::abs(std::abs(closed[i]) - 1.0) < 1e-15);
    const Complex chord = square[(i + 1) % 4] - square[(i + 3) % 4];
    CHECK(std::abs((closed[i] * std::conj(chord)).real()) < 1e-12);
  }
  // One-sided at the ends of an open contour.
  CHECK(std::abs((open[0] * std::conj(square[1] - square[0])).real()) < 1e-12);
  CHECK(std::abs((open[3] * std::conj(square[3] - square[2])).real()) < 1e-12);
}

TEST_CASE("train_profiles: identical images give the shrinkage floor") {
  PhantomConfig pc;
  const Phantom ph = generate_phantom(pc);
  const ProfileModel m = train_profiles({&ph.image, &ph.image}, {ph.landmarks, ph.landmarks});
  const LandmarkVector normals = contour_normals(ph.landmarks, true);
  for (Eigen::Index i = 0; i < m.n_landmarks(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    CHECK((m.means[idx] - sample_profile(ph.image, ph.landmarks[i], normals[i], 11)).norm() < 1e-15);
    const double lambda = m.covariances[idx](0, 0);
    CHECK(lambda == doctest::Approx(0.1 * 1e-8));
    CHECK((m.covariances[idx] - lambda * Eigen::MatrixXd::Identity(10, 10)).norm() == 0.0);
  }
  CHECK(m.rank_deficient);
}

TEST_CASE("train_profiles: two images give the midpoint mean") {
  PhantomConfig pc;
  pc.seed = 1;
  const Phantom a = generate_phantom(pc);
  pc.seed = 2;
  const Phantom b = generate_phantom(pc);
  const ProfileModel m = train_profiles({&a.image, &b.image}, {a.landmarks, b.landmarks});
  const LandmarkVector na = contour_normals(a.landmarks, true);
  const LandmarkVector nb = contour_normals(b.landmarks, true);
  for (Eigen::Index i = 0; i < m.n_landmarks(); ++i) {
    const Eigen::VectorXd mid = 0.5 * (sample_profile(a.image, a.landmarks[i], na[i], 11) +
                                       sample_profile(b.image, b.landmarks[i], nb[i], 11));
    CHECK((m.means[static_cast<std::size_t>(i)] - mid).norm() < 1e-14);
  }
}

TEST_CASE("train_profiles: covariances are positive definite on a 20-image set") {
  const Trained t = train_on_phantoms(20, 0.05, 11);
  CHECK_FALSE(t.model.rank_deficient);
  for (const auto& s : t.model.covariances) {
    CHECK((s - s.transpose()).norm() < 1e-10);
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    CHECK(llt.info() == Eigen::Success);
  }
}

TEST_CASE("train_profiles errors") {
  PhantomConfig pc;
  const Phantom ph = generate_phantom(pc);
  CHECK_ERROR_KIND(train_profiles({&ph.image}, {ph.landmarks}), ErrorKind::InsufficientData);
  CHECK_ERROR_KIND(train_profiles({&ph.image, &ph.image}, {ph.landmarks}), ErrorKind::InvariantViolation);
  ProfileConfig bad;
  bad.profile_len = 10;
  CHECK_ERROR_KIND(train_profiles({&ph.image, &ph.image}, {ph.landmarks, ph.landmarks}, bad), ErrorKind::ConfigError);
}

TEST_CASE("mahalanobis examples") {
  ProfileModel m;
  m.config.profile_len = 5;
  m.means.push_back(Eigen::Vector4d(0.1, -0.2, 0.3, 0.4));
  m.covariances.push_back(Eigen::MatrixXd::Identity(4, 4));
  m.finalize();
  CHECK(mahalanobis(m.means[0], 0, m) == 0.0);
  CHECK(mahalanobis(m.means[0] + Eigen::Vector4d(1, 0, 0, 0), 0, m) == doctest::Approx(1.0));

  const Trained t = train_on_phantoms(15, 0.05, 12);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd g(10);
    for (int j = 0; j < 10; ++j) g[j] = normal(rng);
    const auto n = static_cast<Eigen::Index>(trial % 40);
    const auto idx = static_cast<std::size_t>(n);
    const Eigen::VectorXd diff = g - t.model.means[idx];
    const double oracle = diff.dot(t.model.covariances[idx].fullPivLu().solve(diff));
    CHECK(std::abs(mahalanobis(g, n, t.model) - oracle) < 1e-8 * std::max(1.0, oracle));

    // Invariant under a joint permutation of the profile entries.
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(10);
    perm.setIdentity();
    std::shuffle(perm.indices().data(), perm.indices().data() + 10, rng);
    ProfileModel p;
    p.config = t.model.config;
    p.means.push_back(perm * t.model.means[idx]);
    p.covariances.push_back(perm * t.model.covariances[idx] * perm.transpose());
    p.finalize();
    CHECK(std::abs(mahalanobis(perm * g, 0, p) - mahalanobis(g, n, t.model)) < 1e-8 * std::max(1.0, oracle));
  }
}

TEST_CASE("in-model Gaussian profiles give chi-square distances (KS < 0.02 over 100000 draws)") {
  const Trained t = train_on_phantoms(30, 0.05, 13);
  const int dof = t.model.config.effective_len();
  boost::math::chi_squared dist(dof);
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int draws = 100000;
  std::vector<double> d;
  d.reserve(draws);
  for (int k = 0; k < draws; ++k) {
    const auto n = static_cast<std::size_t>(k % 40);
    const Eigen::MatrixXd l = t.model.covariances[n].llt().matrixL();
    Eigen::VectorXd z(dof);
    for (int j = 0; j < dof; ++j) z[j] = normal(rng);
    d.push_back(mahalanobis(t.model.means[n] + l * z, static_cast<Eigen::Index>(n), t.model));
  }
  std::sort(d.begin(), d.end());
  double ks = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double f = boost::math::cdf(dist, d[static_cast<std::size_t>(i)]);
    ks = std::max({ks, std::abs(f - static_cast<double>(i) / draws), std::abs(f - static_cast<double>(i + 1) / draws)});
  }
  CHECK(ks < 0.02);
}

TEST_CASE("detect_targets finds a contour 3 px away along the normal") {
  const Trained t = train_on_phantoms(20, 0.02, 14);
  PhantomConfig pc;
  pc.noise_sigma = 0.0;
  pc.seed = 999;
  const Phantom ph = generate_phantom(pc);
  const LandmarkVector normals = contour_normals(ph.landmarks, true);
  for (double shift : {3.0, -3.0}) {
    const LandmarkVector current = ph.landmarks + shift * normals;
    const DetectionResult det = detect_targets(ph.image, current, t.model);
    for (Eigen::Index i = 0; i < current.size(); ++i) {
      CHECK(std::abs(det.targets[i] - ph.landmarks[i]) <= 1.0);
    }
  }
}

TEST_CASE("detect_targets keeps landmarks that already match") {
  const Trained t = train_on_phantoms(20, 0.02, 15);
  const LabeledImage& s = t.corpus[3];
  const DetectionResult det = detect_targets(s.image, s.landmarks, t.model);
  CHECK((det.offsets.array() == 0).count() >= 36);
}

TEST_CASE("detect_targets tie-break prefers no displacement, then the negative side") {
  ProfileModel m;
  m.config.profile_len = 3;
  m.config.search_half_width = 2;
  for (int i = 0; i < 3; ++i) {
    m.means.push_back(Eigen::Vector2d(0, 0));
    m.covariances.push_back(Eigen::Matrix2d::Identity());
  }
  m.finalize();
  // The chord of landmark 0 is horizontal, so its normal is exactly -i.
  LandmarkVector tri(3);
  tri << Complex(20, 20), Complex(30, 30), Complex(10, 30);
  const Image flat(64, 64, 0.5);
  const DetectionResult det = detect_targets(flat, tri, m);
  CHECK(det.offsets.isZero());
  CHECK(det.distances.isZero());

  // A one-pixel ridge on the row of landmark 0. Candidates -2, -1, +1, +2 all
  // score 0.5 against this mean and candidate 0 scores 2.
  Image ridge(64, 64, 0.0);
  for (int x = 0; x < 64; ++x) ridge.at(x, 20) = 1.0;
  m.means[0] = Eigen::Vector2d(-0.5, 0.5);
  m.finalize();
  const DetectionResult r = detect_targets(ridge, tri, m);
  CHECK(r.distances[0] == 0.5);
  CHECK(r.offsets[0] == -1);
  CHECK(r.targets[0] == Complex(20, 21));
}

TEST_CASE("detect_targets stays within the search segment") {
  const Trained t = train_on_phantoms(12, 0.05, 16);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 4.0);
  for (int trial = 0; trial < 5; ++trial) {
    const LabeledImage& s = t.corpus[static_cast<std::size_t>(trial)];
    LandmarkVector current = s.landmarks;
    for (Eigen::Index i = 0; i < current.size(); ++i) current[i] += Complex(normal(rng), normal(rng));
    const DetectionResult det = detect_targets(s.image, current, t.model);
    for (Eigen::Index i = 0; i < current.size(); ++i) {
      CHECK(std::abs(det.targets[i] - current[i]) <= t.model.config.search_half_width + 1e-9);
      CHECK(std::abs(det.offsets[i]) <= t.model.config.search_half_width);
      CHECK(det.distances[i] >= 0.0);
    }
  }
}

TEST_CASE("detect_targets marks landmarks without any in-image candidate") {
  const Trained t = train_on_phantoms(5, 0.05, 17);
  LandmarkVector current = t.corpus[0].landmarks;
  current[4] = Complex(-50, -50);
  const DetectionResult det = detect_targets(t.corpus[0].image, current, t.model);
  CHECK(std::isinf(det.distances[4]));
  CHECK(std::isfinite(det.distances[5]));
}

TEST_CASE("uniform noise images are rejected by the gate") {
  const Trained t = train_on_phantoms(20, 0.01, 18);
  Image noise(480, 480);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& v : noise.pixels) v = unit(rng);
  const DetectionResult det = detect_targets(noise, t.corpus[0].landmarks, t.model);
  const GateConfig gate = GateConfig::make(0.10, t.model.config.effective_len(), det.size());
  const double critical = chi_square_upper_quantile(0.10, 10);
  CHECK((det.distances.array() > critical).count() == det.size());
  GateConfig strict = gate;
  strict.fallback = false;
  const GateResult res = chi_square_gate(det, strict);
  CHECK(res.valid_count == 0);
}
