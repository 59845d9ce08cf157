#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace anomo::specfn {

// Degrees of freedom and level of the chi-square decision rule; df is the
// off-diagonal parameter count P*(P-1).
struct Chi2Params {
  int df = 1;
  double alpha = 0.05;
  Chi2Params(int df_, double alpha_) : df(df_), alpha(alpha_) {
    if (df < 1) throw std::invalid_argument("Chi2Params: df must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("Chi2Params: alpha must be in (0,1)");
  }
};

// Lanczos approximation (g = 7, 9 terms).
inline double log_gamma(double x) {
  if (!(x > 0.0)) throw std::invalid_argument("log_gamma: x must be > 0");
  static const double kCoef[9] = {
      0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
      771.32342877765313,   -176.61502916214059,   12.507343278686905,
      -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
  double a = kCoef[0];
  for (int i = 1; i < 9; ++i) a += kCoef[i] / (x - 1.0 + i);
  double t = x + 6.5;
  return 0.91893853320467274178 /* 0.5*ln(2*pi) */ + (x - 0.5) * std::log(t) - t + std::log(a);
}

// Asymptotic expansion after shifting the argument above 10.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::invalid_argument("digamma: x must be > 0");
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  double inv = 1.0 / x;
  double inv2 = inv * inv;
  //  ln x - 1/(2x) - sum B_{2n}/(2n x^{2n})
  result += std::log(x) - 0.5 * inv -
            inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
  return result;
}

namespace detail {

// Regularized lower incomplete gamma P(a,x) by series (x < a+1) or the
// Lentz continued fraction for Q (otherwise).
inline double reg_lower_gamma(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("reg_lower_gamma: bad arguments");
  if (x == 0.0) return 0.0;
  double log_prefix = a * std::log(x) - x - log_gamma(a);
  if (x < a + 1.0) {
    double term = 1.0 / a;
    double sum = term;
    double ap = a;
    for (int n = 0; n < 10000; ++n) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-17) break;
    }
    return std::min(1.0, std::max(0.0, sum * std::exp(log_prefix)));
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-17) break;
  }
  double q = std::exp(log_prefix) * h;
  return std::min(1.0, std::max(0.0, 1.0 - q));
}

}  // namespace detail

inline double chi2_cdf(int df, double x) {
  if (df < 1) throw std::invalid_argument("chi2_cdf: df must be >= 1");
  if (x < 0.0) throw std::invalid_argument("chi2_cdf: x must be >= 0");
  return detail::reg_lower_gamma(0.5 * df, 0.5 * x);
}

inline double chi2_pdf(int df, double x) {
  double a = 0.5 * df;
  if (x <= 0.0) return (df == 2) ? 0.5 : 0.0;
  return 0.5 * std::exp((a - 1.0) * std::log(0.5 * x) - 0.5 * x - log_gamma(a));
}

// Quantile by safeguarded Newton on chi2_cdf (bisection fallback keeps the
// iterate inside a verified bracket).
inline double chi2_inv_cdf(int df, double p) {
  if (df < 1) throw std::invalid_argument("chi2_inv_cdf: df must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("chi2_inv_cdf: p must be in (0,1)");
  double lo = 0.0;
  double hi = df + 10.0 * std::sqrt(2.0 * df) + 10.0;
  while (chi2_cdf(df, hi) < p) {
    hi *= 2.0;
    if (hi > 1e12) throw std::runtime_error("chi2_inv_cdf: bracket expansion failed");
  }
  // Wilson-Hilferty start.
  double z = 0.0;  // rough normal quantile via one Newton pass is unnecessary; start from median-ish
  double x = df * std::pow(1.0 - 2.0 / (9.0 * df) + z * std::sqrt(2.0 / (9.0 * df)), 3.0);
  if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    double f = chi2_cdf(df, x) - p;
    if (f > 0.0)
      hi = x;
    else
      lo = x;
    double d = chi2_pdf(df, x);
    double step = (d > 0.0) ? f / d : 0.0;
    double next = x - step;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-14 * (1.0 + x)) return next;
    x = next;
  }
  if (hi - lo > 1e-6 * (1.0 + hi)) throw std::runtime_error("chi2_inv_cdf: no convergence");
  return x;
}

// Upper-tail critical value: P(X > c | H0) = alpha.
inline double chi2_critical_value(const Chi2Params& params) {
  return chi2_inv_cdf(params.df, 1.0 - params.alpha);
}

}  // namespace anomo::specfn
