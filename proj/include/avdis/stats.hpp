#pragma once

namespace avdis {

// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
// Series expansion for x < a + 1, Lentz continued fraction otherwise;
// relative accuracy about 1e-14 for a <= 32.
double regularized_gamma_q(double a, double x);

// P(X >= x) for X ~ chi-square with `dof` degrees of freedom. dof == 0 is the
// point mass at zero.
double chi_square_upper_tail(double x, double dof);

}  // namespace avdis
