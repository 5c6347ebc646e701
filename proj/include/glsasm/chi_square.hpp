#pragma once

namespace glsasm {

/// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
double regularized_gamma_q(double a, double x);

double chi_square_cdf(double x, double dof);
double chi_square_pdf(double x, double dof);

/// x with P(X > x) = upper_tail for X ~ chi^2_dof.
double chi_square_upper_quantile(double upper_tail, double dof);

}  // namespace glsasm
