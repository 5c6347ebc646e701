#include "glsasm/chi_square.hpp"

#include <cmath>
#include <limits>

#include "glsasm/error.hpp"

namespace glsasm {

namespace {

constexpr int kMaxTerms = 1000;
constexpr double kEps = 1e-16;

double gamma_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int k = 1; k < kMaxTerms; ++k) {
    term *= x / (a + k);
    sum += term;
    if (std::abs(term) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
double gamma_continued_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxTerms; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw Error(ErrorKind::ConfigError, "incomplete gamma needs a > 0, x >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < a + 1.0) return gamma_series(a, x);
  return 1.0 - gamma_continued_fraction(a, x);
}

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw Error(ErrorKind::ConfigError, "incomplete gamma needs a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - gamma_series(a, x);
  return gamma_continued_fraction(a, x);
}

double chi_square_cdf(double x, double dof) {
  if (x <= 0.0) return 0.0;
  return regularized_gamma_p(0.5 * dof, 0.5 * x);
}

double chi_square_pdf(double x, double dof) {
  if (x < 0.0) return 0.0;
  const double k = 0.5 * dof;
  if (x == 0.0) return dof == 2.0 ? 0.5 : (dof < 2.0 ? std::numeric_limits<double>::infinity() : 0.0);
  return std::exp((k - 1.0) * std::log(x) - 0.5 * x - k * std::log(2.0) - std::lgamma(k));
}

double chi_square_upper_quantile(double upper_tail, double dof) {
  if (!(upper_tail > 0.0 && upper_tail < 1.0)) throw Error(ErrorKind::ConfigError, "tail probability must lie in (0, 1)");
  if (!(dof > 0.0)) throw Error(ErrorKind::ConfigError, "degrees of freedom must be positive");
  const double a = 0.5 * dof;

  // Bracket, bisect to a safe neighbourhood, then polish with Newton.
  double lo = 0.0;
  double hi = std::max(1.0, dof);
  while (regularized_gamma_q(a, 0.5 * hi) > upper_tail) hi *= 2.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (regularized_gamma_q(a, 0.5 * mid) > upper_tail) lo = mid; else hi = mid;
    if (hi - lo < 1e-6 * hi) break;
  }
  double x = 0.5 * (lo + hi);
  for (int i = 0; i < 20; ++i) {
    const double f = regularized_gamma_q(a, 0.5 * x) - upper_tail;
    const double slope = -chi_square_pdf(x, dof);
    if (slope == 0.0) break;
    const double step = f / slope;
    double next = x - step;
    if (next <= lo || next >= hi) next = 0.5 * (lo + hi);
    if (f > 0) lo = x; else hi = x;
    if (std::abs(next - x) < 1e-14 * x) {
      x = next;
      break;
    }
    x = next;
  }
  return x;
}

}  // namespace glsasm
