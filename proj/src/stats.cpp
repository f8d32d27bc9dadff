#include "avdis/stats.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "avdis/errors.hpp"

namespace avdis {

namespace {

constexpr int kMaxIterations = 10000;
constexpr double kTolerance = 1e-16;

// P(a, x) by its power series; valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int n = 0; n < kMaxIterations; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kTolerance) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by the modified Lentz continued fraction; valid for x >= a + 1.
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = std::numeric_limits<double>::min() / kTolerance;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIterations; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kTolerance) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) {
    throw DomainError("regularized_gamma_q: need a > 0 and x >= 0, got a=" + std::to_string(a) +
                      " x=" + std::to_string(x));
  }
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_fraction(a, x);
}

double chi_square_upper_tail(double x, double dof) {
  if (!(dof >= 0.0)) throw DomainError("chi_square_upper_tail: negative degrees of freedom");
  if (x <= 0.0) return 1.0;
  if (dof == 0.0) return 0.0;
  return regularized_gamma_q(0.5 * dof, 0.5 * x);
}

}  // namespace avdis
