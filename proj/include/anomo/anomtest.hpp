#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <vector>

#include "anomo/hpem.hpp"
#include "anomo/matrix.hpp"
#include "anomo/specfn.hpp"

namespace anomo {

struct TestResult {
  double psi_hat = 0.0;
  double critical_value = 0.0;
  int df = 0;  // P*(P-1)
  double alpha = 0.0;
  bool reject = false;
  // The baseline assigns zero rate to an edge the fit gives posterior mass;
  // the ratio degenerates to +inf and the rejection is structural.
  bool structural_mismatch = false;
  std::vector<double> per_window_terms;  // likelihood part of -2*(ratio), per window
};

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (FPR, TPR) from (0,0) to (1,1)
  std::vector<double> thresholds;                 // statistic value opening each step
  double auc = 0.0;
};

// Expected complete-data objective of the fitted surrogate at an arbitrary
// rate matrix; the Gamma prior (MAP/HIER) is counted once, not per replica.
// Additive constants independent of lambda are dropped throughout.
inline double surrogate_log_model(const ModelFit& fit, const Matrix& lambda) {
  validate_rates(lambda, "surrogate_log_model: lambda");
  if (lambda.dim() != fit.final_counts.dim())
    throw std::invalid_argument("surrogate_log_model: dim mismatch");
  double s = expected_complete_loglik(fit.final_counts, lambda);
  if (fit.variant != Variant::Mlem) s += gamma_prior_loglik(fit.eps_hat.eps, fit.lambda0, lambda);
  return s;
}

// -2 * (log model at the baseline minus log model at the fitted maximizer).
// Nonnegative up to round-off by the M-step construction.
inline double psi_statistic(const ModelFit& fit, const Matrix& lambda0) {
  if (lambda0 == fit.lambda_hat) return 0.0;  // ratio of a model to itself
  double at_null = surrogate_log_model(fit, lambda0);
  double at_fit = surrogate_log_model(fit, fit.lambda_hat);
  if (std::isinf(at_fit))
    throw std::runtime_error("psi_statistic: fitted model evaluates to -inf at its own maximizer");
  if (std::isinf(at_null)) return std::numeric_limits<double>::infinity();
  return -2.0 * (at_null - at_fit);
}

inline TestResult anomaly_test(const ModelFit& fit, const Matrix& lambda0, double alpha) {
  const int p = fit.final_counts.dim();
  specfn::Chi2Params params(p * p - p, alpha);
  TestResult res;
  res.df = params.df;
  res.alpha = alpha;
  res.critical_value = specfn::chi2_critical_value(params);
  res.psi_hat = psi_statistic(fit, lambda0);
  res.structural_mismatch = std::isinf(res.psi_hat);
  res.reject = res.psi_hat > res.critical_value;
  res.per_window_terms.reserve(fit.final_counts.windows());
  std::vector<double> null_terms = per_window_loglik_terms(fit.final_counts, lambda0);
  std::vector<double> fit_terms = per_window_loglik_terms(fit.final_counts, fit.lambda_hat);
  for (std::size_t t = 0; t < null_terms.size(); ++t)
    res.per_window_terms.push_back(-2.0 * (null_terms[t] - fit_terms[t]));
  return res;
}

// Per-edge 1-df sub-statistics of the same ratio; an edge is flagged when its
// contribution exceeds the chi-square(1) critical value. No multiplicity
// correction by default; bonferroni divides alpha by the edge count.
inline std::set<Edge> edge_flags(const ModelFit& fit, const Matrix& lambda0, double alpha,
                                 bool bonferroni = false) {
  const int p = fit.final_counts.dim();
  const ExpectedCounts& c = fit.final_counts;
  double alpha_eff = bonferroni ? alpha / (p * p - p) : alpha;
  double crit = specfn::chi2_inv_cdf(1, 1.0 - alpha_eff);
  std::set<Edge> flags;
  const int t_count = c.windows();
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      if (i == j) continue;
      auto edge_term = [&](double lam) {
        double s = -c.weight(i, j) * t_count * lam + hpem_detail::x_log_y(c.totals()(i, j), lam);
        if (fit.variant != Variant::Mlem)
          s += hpem_detail::x_log_y(fit.eps_hat.eps(i, j) * fit.lambda0(i, j), lam) -
               fit.eps_hat.eps(i, j) * lam;
        return s;
      };
      double psi_ij = -2.0 * (edge_term(lambda0(i, j)) - edge_term(fit.lambda_hat(i, j)));
      if (psi_ij > crit) flags.insert({i, j});
    }
  return flags;
}

// Threshold sweep with tied statistics grouped into single steps; AUC by the
// trapezoid rule.
inline RocCurve roc_curve(const std::vector<double>& statistics, const std::vector<bool>& labels) {
  if (statistics.size() != labels.size()) throw std::invalid_argument("roc_curve: size mismatch");
  long long pos = 0, neg = 0;
  for (bool b : labels) (b ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_curve: need both positive and negative labels");

  std::vector<std::size_t> order(statistics.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return statistics[a] > statistics[b];  // descending: reject when stat > threshold
  });

  RocCurve roc;
  roc.points.push_back({0.0, 0.0});
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  long long tp = 0, fp = 0;
  double auc = 0.0;
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t e = k;
    double v = statistics[order[k]];
    while (e < order.size() && statistics[order[e]] == v) ++e;
    long long dtp = 0, dfp = 0;
    for (std::size_t q = k; q < e; ++q) (labels[order[q]] ? dtp : dfp) += 1;
    double fpr0 = static_cast<double>(fp) / neg, tpr0 = static_cast<double>(tp) / pos;
    tp += dtp;
    fp += dfp;
    double fpr1 = static_cast<double>(fp) / neg, tpr1 = static_cast<double>(tp) / pos;
    auc += (fpr1 - fpr0) * 0.5 * (tpr0 + tpr1);
    roc.points.push_back({fpr1, tpr1});
    roc.thresholds.push_back(v);
    k = e;
  }
  roc.auc = auc;
  return roc;
}

// Operating point of the fixed chi-square decision rule on a labeled
// ensemble: (FPR, TPR) at threshold c.
inline std::pair<double, double> operating_point(const std::vector<double>& statistics,
                                                 const std::vector<bool>& labels, double critical_value) {
  long long tp = 0, fp = 0, pos = 0, neg = 0;
  for (std::size_t k = 0; k < statistics.size(); ++k) {
    bool rej = statistics[k] > critical_value;
    if (labels[k]) {
      ++pos;
      tp += rej;
    } else {
      ++neg;
      fp += rej;
    }
  }
  return {neg > 0 ? static_cast<double>(fp) / neg : 0.0, pos > 0 ? static_cast<double>(tp) / pos : 0.0};
}

}  // namespace anomo
