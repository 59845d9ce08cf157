#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "anomo/matrix.hpp"
#include "anomo/netsim.hpp"
#include "anomo/rng.hpp"
#include "anomo/specfn.hpp"

namespace anomo {

enum class Variant { Mlem, Map, Hier };
enum class InitKind { Random, Mre, Custom };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Mlem: return "MLEM";
    case Variant::Map: return "MAP";
    default: return "HIER";
  }
}

struct EmConfig {
  double tol = 1e-6;        // relative Frobenius change of lambda
  int max_iter = 500;
  double eps_min = 1e-9;
  double eps_max = 1e9;     // sentinel cap standing in for "prior dominates"
  double fixed_epsilon = 1.0;  // MAP variant
  // Replica accounting. By default each interior node contributes its own
  // flow replica, so the M-step divisor is (2+H)*T; the strict switch merges
  // the flows into a single replica with divisor 3*T. Directly observed
  // edges are conditioned on exactly; with pinned_once they enter the
  // objective as one observation block per window instead of once per
  // replica (a replica would otherwise multiply-count a known value).
  bool strict_three_t = false;
  bool pinned_once = true;
  // Fitted rates below this collapse to exact zero. The empirical-Bayes
  // update contracts unsupported edges quadratically toward zero; snapping
  // finishes the collapse so downstream log-ratio terms see a true zero.
  double prune_tol = 1e-9;
  // Off-baseline rates inside (0, collapse_band) are transients of that
  // contraction (its only fixed points are zero and macroscopic values);
  // convergence is deferred while any edge is mid-collapse.
  double collapse_band = 1e-2;
  double ascent_slack = 1e-8;
};

struct HyperparamMatrix {
  Matrix eps;
  SquareMat<std::uint8_t> at_bound;  // 0 interior, 1 clamped low, 2 clamped high
};

namespace hpem_detail {

using Hist = std::vector<std::pair<std::int64_t, std::int64_t>>;  // value -> window count

inline Hist histogram(const std::vector<std::int64_t>& values) {
  std::vector<std::int64_t> v = values;
  std::sort(v.begin(), v.end());
  Hist h;
  for (std::size_t k = 0; k < v.size();) {
    std::size_t e = k;
    while (e < v.size() && v[e] == v[k]) ++e;
    h.push_back({v[k], static_cast<std::int64_t>(e - k)});
    k = e;
  }
  return h;
}

inline double x_log_y(double x, double y) {
  if (x == 0.0) return 0.0;
  return x * std::log(y);  // y == 0 gives -inf for x > 0
}

// lgamma(a+v) - lgamma(a) for v >= 0. Direct subtraction loses ~10 digits
// once a reaches 1e9; the Stirling difference keeps absolute error near
// machine precision in the prior-dominates regime.
inline double log_gamma_ratio(double v, double a) {
  if (v == 0.0) return 0.0;
  if (a < 1e6) return specfn::log_gamma(v + a) - specfn::log_gamma(a);
  double r = v / a;
  return v * std::log(a) + (a + v - 0.5) * std::log1p(r) - v +
         (1.0 / 12.0) * (1.0 / (a + v) - 1.0 / a);
}

// digamma(a+v) - digamma(a), same regime split.
inline double digamma_diff(double v, double a) {
  if (v == 0.0) return 0.0;
  if (a < 1e6) return specfn::digamma(v + a) - specfn::digamma(a);
  double apv = a + v;
  return std::log1p(v / a) + 0.5 * (1.0 / a - 1.0 / apv) +
         (1.0 / 12.0) * (1.0 / (a * a) - 1.0 / (apv * apv));
}

}  // namespace hpem_detail

// Conditional expectations of the unobserved traffic given the previous
// rate iterate: one multinomial replica per observation block (rows,
// columns, and each interior flow), with directly observed edges pinned to
// their counts and excluded from every multinomial denominator and target.
class ExpectedCounts {
 public:
  ExpectedCounts() = default;

  int dim() const { return p_; }
  int windows() const { return t_; }
  int flow_count() const { return h_; }
  int replica_count() const { return strict_ ? 3 : 2 + h_; }
  bool strict_three_t() const { return strict_; }
  bool pinned_once() const { return pinned_once_; }
  bool pinned(int i, int j) const { return pin_col_(i, j) >= 0; }

  const Matrix& totals() const { return totals_; }
  const Matrix& stationary() const { return stationary_; }

  // Replica multiplicity of edge (i,j): replica_count() for latent edges,
  // 1 for pinned edges under pinned_once accounting.
  double weight(int i, int j) const {
    return pinned(i, j) && pinned_once_ ? 1.0 : static_cast<double>(replica_count());
  }

  Matrix row_replica(int t) const {
    Matrix m(p_);
    for (int i = 0; i < p_; ++i)
      for (int j = 0; j < p_; ++j) {
        if (i == j) continue;
        int k = pin_col_(i, j);
        m(i, j) = k >= 0 ? static_cast<double>(observed_counts_[t][k])
                         : row_share_(i, j) * static_cast<double>(row_resid_[t][i]);
      }
    return m;
  }

  Matrix col_replica(int t) const {
    Matrix m(p_);
    for (int i = 0; i < p_; ++i)
      for (int j = 0; j < p_; ++j) {
        if (i == j) continue;
        int k = pin_col_(i, j);
        m(i, j) = k >= 0 ? static_cast<double>(observed_counts_[t][k])
                         : col_share_(i, j) * static_cast<double>(col_resid_[t][j]);
      }
    return m;
  }

  Matrix flow_replica(int h, int t) const {
    Matrix m(p_);
    for (int i = 0; i < p_; ++i)
      for (int j = 0; j < p_; ++j) {
        if (i == j) continue;
        int k = pin_col_(i, j);
        if (k >= 0)
          m(i, j) = static_cast<double>(observed_counts_[t][k]);
        else if (in_set_[h](i, j))
          m(i, j) = flow_share_[h](i, j) * static_cast<double>(flow_resid_[t][h]);
        else
          m(i, j) = stationary_(i, j);
      }
    return m;
  }

  // Strict-3T form: the flows collapse into one replica; an edge in several
  // sets takes the average of its per-set conditional means.
  Matrix merged_flow_replica(int t) const {
    Matrix m(p_);
    for (int i = 0; i < p_; ++i)
      for (int j = 0; j < p_; ++j) {
        if (i == j) continue;
        int k = pin_col_(i, j);
        if (k >= 0) {
          m(i, j) = static_cast<double>(observed_counts_[t][k]);
          continue;
        }
        int sets = set_count_(i, j);
        if (sets == 0) {
          m(i, j) = stationary_(i, j);
          continue;
        }
        double s = 0.0;
        for (int h = 0; h < h_; ++h)
          if (in_set_[h](i, j)) s += flow_share_[h](i, j) * static_cast<double>(flow_resid_[t][h]);
        m(i, j) = s / sets;
      }
    return m;
  }

  // Sum over replicas of window t's expected counts, with pinned edges
  // counted weight() times. Feeds per-window diagnostics.
  Matrix window_replica_sum(int t) const {
    Matrix m(p_);
    for (int i = 0; i < p_; ++i)
      for (int j = 0; j < p_; ++j) {
        if (i == j) continue;
        int k = pin_col_(i, j);
        if (k >= 0) {
          m(i, j) = weight(i, j) * static_cast<double>(observed_counts_[t][k]);
          continue;
        }
        double s = row_share_(i, j) * static_cast<double>(row_resid_[t][i]) +
                   col_share_(i, j) * static_cast<double>(col_resid_[t][j]);
        if (strict_) {
          int sets = set_count_(i, j);
          if (sets == 0) {
            s += stationary_(i, j);
          } else {
            double fs = 0.0;
            for (int h = 0; h < h_; ++h)
              if (in_set_[h](i, j)) fs += flow_share_[h](i, j) * static_cast<double>(flow_resid_[t][h]);
            s += fs / sets;
          }
        } else {
          int covered = 0;
          for (int h = 0; h < h_; ++h)
            if (in_set_[h](i, j)) {
              s += flow_share_[h](i, j) * static_cast<double>(flow_resid_[t][h]);
              ++covered;
            }
          s += static_cast<double>(h_ - covered) * stationary_(i, j);
        }
        m(i, j) = s;
      }
    return m;
  }

  // The multiset of expected counts entering edge (i,j)'s hyperparameter
  // objective, coalesced as (value, multiplicity) pairs summing to
  // weight(i,j) * windows().
  void values(int i, int j, std::vector<std::pair<double, double>>* out) const {
    out->clear();
    int k = pin_col_(i, j);
    if (k >= 0) {
      double w = weight(i, j);
      for (const auto& [v, c] : pin_hist_[k]) out->push_back({static_cast<double>(v), w * c});
      return;
    }
    for (const auto& [v, c] : row_hist_[i]) out->push_back({row_share_(i, j) * v, static_cast<double>(c)});
    for (const auto& [v, c] : col_hist_[j]) out->push_back({col_share_(i, j) * v, static_cast<double>(c)});
    if (strict_) {
      int sets = set_count_(i, j);
      if (sets == 0) {
        out->push_back({stationary_(i, j), static_cast<double>(t_)});
      } else {
        for (int t = 0; t < t_; ++t) {
          double s = 0.0;
          for (int h = 0; h < h_; ++h)
            if (in_set_[h](i, j)) s += flow_share_[h](i, j) * static_cast<double>(flow_resid_[t][h]);
          out->push_back({s / sets, 1.0});
        }
      }
      return;
    }
    int covered = 0;
    for (int h = 0; h < h_; ++h) {
      if (!in_set_[h](i, j)) continue;
      ++covered;
      for (const auto& [v, c] : flow_hist_[h]) out->push_back({flow_share_[h](i, j) * v, static_cast<double>(c)});
    }
    if (covered < h_) out->push_back({stationary_(i, j), static_cast<double>((h_ - covered) * t_)});
  }

 private:
  friend ExpectedCounts e_step(const Matrix&, const ObservationSet&, const FlowMap&, const EmConfig&);

  int p_ = 0, t_ = 0, h_ = 0;
  bool strict_ = false, pinned_once_ = true;
  Matrix totals_;
  Matrix stationary_;
  Matrix row_share_, col_share_;
  std::vector<Matrix> flow_share_;
  std::vector<SquareMat<std::uint8_t>> in_set_;
  SquareMat<int> pin_col_;   // column in observed_counts, -1 if latent
  SquareMat<int> set_count_;
  std::vector<std::vector<std::int64_t>> row_resid_, col_resid_, flow_resid_;
  std::vector<hpem_detail::Hist> row_hist_, col_hist_, flow_hist_, pin_hist_;
  std::vector<std::vector<std::int64_t>> observed_counts_;
};

inline ExpectedCounts e_step(const Matrix& lambda, const ObservationSet& obs, const FlowMap& fmap,
                             const EmConfig& cfg = {}) {
  validate_rates(lambda, "e_step: lambda");
  const int p = obs.node_count;
  const int t_count = obs.windows;
  const int h_count = obs.flow_count();
  if (lambda.dim() != p) throw std::invalid_argument("e_step: lambda/observation dim mismatch");
  if (static_cast<int>(fmap.edge_sets.size()) != h_count)
    throw std::invalid_argument("e_step: flowmap/observation flow count mismatch");

  ExpectedCounts c;
  c.p_ = p;
  c.t_ = t_count;
  c.h_ = h_count;
  c.strict_ = cfg.strict_three_t;
  c.pinned_once_ = cfg.pinned_once;
  c.stationary_ = lambda;
  c.observed_counts_ = obs.observed_counts;
  c.pin_col_ = SquareMat<int>(p, -1);
  for (std::size_t k = 0; k < obs.observed_edges.size(); ++k) {
    const Edge& e = obs.observed_edges[k];
    c.pin_col_(e.src, e.dst) = static_cast<int>(k);
  }
  c.set_count_ = SquareMat<int>(p, 0);
  for (int h = 0; h < h_count; ++h) {
    SquareMat<std::uint8_t> mask(p, 0);
    for (const Edge& e : fmap.edge_sets[h]) {
      mask(e.src, e.dst) = 1;
      ++c.set_count_(e.src, e.dst);
    }
    c.in_set_.push_back(std::move(mask));
  }

  // Residual targets: observation totals minus their pinned parts.
  c.row_resid_.assign(t_count, std::vector<std::int64_t>(p, 0));
  c.col_resid_.assign(t_count, std::vector<std::int64_t>(p, 0));
  c.flow_resid_.assign(t_count, std::vector<std::int64_t>(h_count, 0));
  for (int t = 0; t < t_count; ++t) {
    std::vector<std::int64_t> row_obs(p, 0), col_obs(p, 0);
    for (std::size_t k = 0; k < obs.observed_edges.size(); ++k) {
      const Edge& e = obs.observed_edges[k];
      row_obs[e.src] += obs.observed_counts[t][k];
      col_obs[e.dst] += obs.observed_counts[t][k];
    }
    for (int i = 0; i < p; ++i) {
      c.row_resid_[t][i] = obs.row_sums[t][i] - row_obs[i];
      c.col_resid_[t][i] = obs.col_sums[t][i] - col_obs[i];
      if (c.row_resid_[t][i] < 0 || c.col_resid_[t][i] < 0)
        throw std::runtime_error("e_step: observed edge counts exceed a row/column total");
    }
    for (int h = 0; h < h_count; ++h) {
      std::int64_t pinned_part = 0;
      for (const Edge& e : fmap.edge_sets[h]) {
        int k = c.pin_col_(e.src, e.dst);
        if (k >= 0) pinned_part += obs.observed_counts[t][k];
      }
      c.flow_resid_[t][h] = obs.flows[t][h] - pinned_part;
      if (c.flow_resid_[t][h] < 0) throw std::runtime_error("e_step: observed edge counts exceed a flow total");
    }
  }

  // Multinomial shares over the latent edges of each block.
  c.row_share_ = Matrix(p);
  c.col_share_ = Matrix(p);
  for (int i = 0; i < p; ++i) {
    double den = 0.0;
    for (int j = 0; j < p; ++j)
      if (j != i && c.pin_col_(i, j) < 0) den += lambda(i, j);
    std::int64_t max_resid = 0;
    for (int t = 0; t < t_count; ++t) max_resid = std::max(max_resid, c.row_resid_[t][i]);
    if (den <= 0.0 && max_resid > 0)
      throw std::runtime_error("e_step: row " + std::to_string(i) + " has residual traffic but zero rate mass");
    if (den > 0.0)
      for (int j = 0; j < p; ++j)
        if (j != i && c.pin_col_(i, j) < 0) c.row_share_(i, j) = lambda(i, j) / den;
  }
  for (int j = 0; j < p; ++j) {
    double den = 0.0;
    for (int i = 0; i < p; ++i)
      if (i != j && c.pin_col_(i, j) < 0) den += lambda(i, j);
    std::int64_t max_resid = 0;
    for (int t = 0; t < t_count; ++t) max_resid = std::max(max_resid, c.col_resid_[t][j]);
    if (den <= 0.0 && max_resid > 0)
      throw std::runtime_error("e_step: column " + std::to_string(j) + " has residual traffic but zero rate mass");
    if (den > 0.0)
      for (int i = 0; i < p; ++i)
        if (i != j && c.pin_col_(i, j) < 0) c.col_share_(i, j) = lambda(i, j) / den;
  }
  for (int h = 0; h < h_count; ++h) {
    Matrix share(p);
    double den = 0.0;
    for (const Edge& e : fmap.edge_sets[h])
      if (c.pin_col_(e.src, e.dst) < 0) den += lambda(e.src, e.dst);
    std::int64_t max_resid = 0;
    for (int t = 0; t < t_count; ++t) max_resid = std::max(max_resid, c.flow_resid_[t][h]);
    if (den <= 0.0 && max_resid > 0)
      throw std::runtime_error("e_step: flow " + std::to_string(h) + " has residual traffic but zero rate mass");
    if (den > 0.0)
      for (const Edge& e : fmap.edge_sets[h])
        if (c.pin_col_(e.src, e.dst) < 0) share(e.src, e.dst) = lambda(e.src, e.dst) / den;
    c.flow_share_.push_back(std::move(share));
  }

  for (int i = 0; i < p; ++i) {
    std::vector<std::int64_t> rv(t_count), cv(t_count);
    for (int t = 0; t < t_count; ++t) {
      rv[t] = c.row_resid_[t][i];
      cv[t] = c.col_resid_[t][i];
    }
    c.row_hist_.push_back(hpem_detail::histogram(rv));
    c.col_hist_.push_back(hpem_detail::histogram(cv));
  }
  for (int h = 0; h < h_count; ++h) {
    std::vector<std::int64_t> fv(t_count);
    for (int t = 0; t < t_count; ++t) fv[t] = c.flow_resid_[t][h];
    c.flow_hist_.push_back(hpem_detail::histogram(fv));
  }
  for (std::size_t k = 0; k < obs.observed_edges.size(); ++k) {
    std::vector<std::int64_t> ov(t_count);
    for (int t = 0; t < t_count; ++t) ov[t] = obs.observed_counts[t][k];
    c.pin_hist_.push_back(hpem_detail::histogram(ov));
  }

  c.totals_ = Matrix(p);
  std::vector<std::pair<double, double>> vals;
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      if (i == j) continue;
      c.values(i, j, &vals);
      double s = 0.0;
      for (const auto& [v, mult] : vals) s += v * mult;
      c.totals_(i, j) = s;
    }
  return c;
}

// Poisson MLE from expected totals: totals / (replicas * T) entrywise.
inline Matrix mle_m_step(const ExpectedCounts& counts, int windows) {
  Matrix m(counts.dim());
  m.transform_off_diag([&](int i, int j, double) {
    double tot = counts.totals()(i, j);
    return tot > 0.0 ? tot / (counts.weight(i, j) * windows) : 0.0;
  });
  return m;
}

// Conjugate-prior posterior mode: (eps * lambda0 + totals) / (eps + replicas * T).
inline Matrix map_m_step(const ExpectedCounts& counts, const Matrix& eps, const Matrix& lambda0, int windows) {
  Matrix m(counts.dim());
  m.transform_off_diag([&](int i, int j, double) {
    double denom = eps(i, j) + counts.weight(i, j) * windows;
    return (eps(i, j) * lambda0(i, j) + counts.totals()(i, j)) / denom;
  });
  return m;
}

inline Matrix map_m_step(const ExpectedCounts& counts, double eps, const Matrix& lambda0, int windows) {
  Matrix em(counts.dim());
  em.transform_off_diag([&](int, int, double) { return eps; });
  return map_m_step(counts, em, lambda0, windows);
}

namespace hpem_detail {

// Marginal objective for one edge's prior-confidence hyperparameter: the
// expected counts follow a negative binomial in epsilon after the rate is
// profiled out.
struct EpsObjective {
  const std::vector<std::pair<double, double>>* vals;
  double lambda0 = 0.0;
  double m_total = 0.0;  // replica multiplicity * windows
  double s_total = 0.0;  // sum of value * multiplicity

  double value(double eps) const {
    double a = eps * lambda0 + 1.0;
    double g = -m_total * a * std::log1p(1.0 / eps) - s_total * std::log1p(eps);
    for (const auto& [v, c] : *vals) g += c * log_gamma_ratio(v, a);
    return g;
  }

  double grad(double eps) const {
    double a = eps * lambda0 + 1.0;
    double g = m_total * a / (eps * (1.0 + eps)) - s_total / (1.0 + eps);
    if (lambda0 > 0.0) {
      double acc = -m_total * std::log1p(1.0 / eps);
      for (const auto& [v, c] : *vals) acc += c * digamma_diff(v, a);
      g += lambda0 * acc;
    }
    return g;
  }
};

// Derivative-sign bracketing on a log grid plus bisection; golden-section
// pass over the best grid cell as the fallback. Returns the argmax and the
// boundary flag (0 interior, 1 low, 2 high).
inline std::pair<double, std::uint8_t> maximize_eps(const EpsObjective& obj, double eps_min, double eps_max,
                                                    double warm) {
  // Zero-baseline edges reduce to a closed form: eps = M / S.
  if (obj.lambda0 == 0.0) {
    if (obj.s_total <= 0.0) return {eps_max, 2};
    double e = obj.m_total / obj.s_total;
    if (e <= eps_min) return {eps_min, 1};
    if (e >= eps_max) return {eps_max, 2};
    return {e, 0};
  }

  double best_x = eps_min;
  double best_v = -std::numeric_limits<double>::infinity();
  auto consider = [&](double x) {
    double v = obj.value(x);
    if (v > best_v) {
      best_v = v;
      best_x = x;
    }
  };

  auto bisect = [&](double lo, double hi, double glo) {
    for (int it = 0; it < 60 && hi - lo > 1e-12 * lo; ++it) {
      double mid = std::sqrt(lo * hi);
      double gm = obj.grad(mid);
      if ((gm > 0.0) == (glo > 0.0))
        lo = mid;
      else
        hi = mid;
    }
    consider(std::sqrt(lo * hi));
  };

  // Warm paths keyed on the previous iterate: a cap that is still a cap, a
  // floor that is still a floor, or an interior bracket that still brackets.
  if (warm >= eps_max * (1.0 - 1e-9) && obj.grad(eps_max) >= 0.0 && obj.grad(eps_max / 64.0) >= 0.0)
    return {eps_max, 2};
  if (warm > 0.0 && warm <= eps_min * (1.0 + 1e-9) && obj.grad(eps_min) <= 0.0 &&
      obj.grad(eps_min * 64.0) <= 0.0)
    return {eps_min, 1};
  if (warm > eps_min && warm < eps_max) {
    double lo = std::max(eps_min, warm / 8.0), hi = std::min(eps_max, warm * 8.0);
    double glo = obj.grad(lo), ghi = obj.grad(hi);
    if (glo > 0.0 && ghi < 0.0) {
      bisect(lo, hi, glo);
      consider(eps_min);
      consider(eps_max);
      if (best_x <= eps_min) return {eps_min, 1};
      if (best_x >= eps_max) return {eps_max, 2};
      return {best_x, 0};
    }
  }

  const int grid = 65;
  double llo = std::log(eps_min), lhi = std::log(eps_max);
  double prev_x = eps_min, prev_g = obj.grad(eps_min);
  consider(eps_min);
  double best_grid = eps_min;
  for (int k = 1; k < grid; ++k) {
    double x = std::exp(llo + (lhi - llo) * k / (grid - 1.0));
    double g = obj.grad(x);
    if (prev_g > 0.0 && g <= 0.0) bisect(prev_x, x, prev_g);
    double v = obj.value(x);
    if (v > best_v) {
      best_v = v;
      best_x = x;
      best_grid = x;
    }
    prev_x = x;
    prev_g = g;
  }
  {
    // Golden-section pass over the best grid cell: the objective can carry a
    // narrow peak the derivative scan steps over.
    double step = (lhi - llo) / (grid - 1.0);
    double a = std::max(llo, std::log(best_grid) - step);
    double b = std::min(lhi, std::log(best_grid) + step);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c1 = b - phi * (b - a), d1 = a + phi * (b - a);
    double fc = obj.value(std::exp(c1)), fd = obj.value(std::exp(d1));
    for (int it = 0; it < 60 && b - a > 1e-12; ++it) {
      if (fc > fd) {
        b = d1;
        d1 = c1;
        fd = fc;
        c1 = b - phi * (b - a);
        fc = obj.value(std::exp(c1));
      } else {
        a = c1;
        c1 = d1;
        fc = fd;
        d1 = a + phi * (b - a);
        fd = obj.value(std::exp(d1));
      }
    }
    consider(std::exp(0.5 * (a + b)));
  }
  if (best_x <= eps_min * (1.0 + 1e-9)) return {eps_min, 1};
  if (best_x >= eps_max * (1.0 - 1e-9)) return {eps_max, 2};
  return {best_x, 0};
}

}  // namespace hpem_detail

// Per-edge empirical-Bayes update of the prior-confidence hyperparameters.
inline HyperparamMatrix epsilon_m_step(const ExpectedCounts& counts, const Matrix& lambda0, int windows,
                                       const EmConfig& cfg = {}, const Matrix* warm = nullptr) {
  const int p = counts.dim();
  if (lambda0.dim() != p) throw std::invalid_argument("epsilon_m_step: dim mismatch");
  HyperparamMatrix out;
  out.eps = Matrix(p);
  out.at_bound = SquareMat<std::uint8_t>(p, 0);
  std::vector<std::pair<double, double>> vals;
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      if (i == j) continue;
      counts.values(i, j, &vals);
      hpem_detail::EpsObjective obj;
      obj.vals = &vals;
      obj.lambda0 = lambda0(i, j);
      obj.m_total = counts.weight(i, j) * windows;
      obj.s_total = counts.totals()(i, j);
      for (const auto& [v, c] : vals)
        if (!std::isfinite(v)) throw std::runtime_error("epsilon_m_step: non-finite expected count");
      auto [eps, flag] =
          hpem_detail::maximize_eps(obj, cfg.eps_min, cfg.eps_max, warm ? (*warm)(i, j) : 0.0);
      out.eps(i, j) = eps;
      out.at_bound(i, j) = flag;
    }
  return out;
}

// Expected complete-data Poisson log likelihood (additive constants in the
// data dropped): sum over replicas and windows of -lambda + N^ log lambda.
inline double expected_complete_loglik(const ExpectedCounts& counts, const Matrix& lambda) {
  double s = 0.0;
  const int t_count = counts.windows();
  for (int i = 0; i < counts.dim(); ++i)
    for (int j = 0; j < counts.dim(); ++j) {
      if (i == j) continue;
      s += -counts.weight(i, j) * t_count * lambda(i, j) +
           hpem_detail::x_log_y(counts.totals()(i, j), lambda(i, j));
    }
  return s;
}

inline std::vector<double> per_window_loglik_terms(const ExpectedCounts& counts, const Matrix& lambda) {
  std::vector<double> out(counts.windows(), 0.0);
  for (int t = 0; t < counts.windows(); ++t) {
    Matrix w = counts.window_replica_sum(t);
    double s = 0.0;
    for (int i = 0; i < counts.dim(); ++i)
      for (int j = 0; j < counts.dim(); ++j) {
        if (i == j) continue;
        s += -counts.weight(i, j) * lambda(i, j) + hpem_detail::x_log_y(w(i, j), lambda(i, j));
      }
    out[t] = s;
  }
  return out;
}

// Gamma prior log density in lambda (constants in eps dropped), counted once.
inline double gamma_prior_loglik(const Matrix& eps, const Matrix& lambda0, const Matrix& lambda) {
  double s = 0.0;
  for (int i = 0; i < lambda.dim(); ++i)
    for (int j = 0; j < lambda.dim(); ++j) {
      if (i == j) continue;
      s += hpem_detail::x_log_y(eps(i, j) * lambda0(i, j), lambda(i, j)) - eps(i, j) * lambda(i, j);
    }
  return s;
}

struct ModelFit {
  Variant variant = Variant::Mlem;
  Matrix lambda_hat;
  HyperparamMatrix eps_hat;       // HIER: fitted; MAP: the fixed value; MLEM: unused (dim 0)
  ExpectedCounts final_counts;    // E-step the final M-step consumed
  Matrix lambda_estep;            // iterate final_counts were computed at
  Matrix lambda0;
  int iterations = 0;
  bool converged = false;
  InitKind init_kind = InitKind::Custom;
};

// Observation-scaled random start.
inline Matrix random_init(const ObservationSet& obs, Rng& rng) {
  double hi = 2.0 * obs.mean_row_sum() / std::max(1, obs.node_count);
  if (hi <= 0.0) hi = 1.0;
  Matrix m(obs.node_count);
  m.transform_off_diag([&](int, int, double) { return rng.uniform(0.0, hi); });
  return m;
}

inline ModelFit run_em(const ObservationSet& obs, const Matrix& lambda0, const FlowMap& fmap,
                       Variant variant, const Matrix& init, InitKind init_kind, const EmConfig& cfg = {}) {
  validate_rates(init, "run_em: init");
  validate_rates(lambda0, "run_em: lambda0");
  if (init.dim() != obs.node_count || lambda0.dim() != obs.node_count)
    throw std::invalid_argument("run_em: dim mismatch");

  ModelFit fit;
  fit.variant = variant;
  fit.init_kind = init_kind;
  fit.lambda0 = lambda0;
  if (variant == Variant::Map) {
    fit.eps_hat.eps = Matrix(obs.node_count);
    fit.eps_hat.eps.transform_off_diag([&](int, int, double) { return cfg.fixed_epsilon; });
    fit.eps_hat.at_bound = SquareMat<std::uint8_t>(obs.node_count, 0);
  }

  Matrix lambda = init;
  int prune_credits = 0;  // a prune earns one extra sweep so the recorded
                          // counts are always consistent with the support
  for (int k = 1; k <= cfg.max_iter + prune_credits; ++k) {
    ExpectedCounts counts = e_step(lambda, obs, fmap, cfg);
    if (variant == Variant::Hier)
      fit.eps_hat = epsilon_m_step(counts, lambda0, obs.windows, cfg,
                                   fit.iterations > 0 ? &fit.eps_hat.eps : nullptr);
    Matrix next;
    switch (variant) {
      case Variant::Mlem: next = mle_m_step(counts, obs.windows); break;
      default: next = map_m_step(counts, fit.eps_hat.eps, lambda0, obs.windows); break;
    }

    // Each M-step must not decrease its own surrogate; a drop beyond slack
    // means the update is wrong, not that the data is unusual.
    double q_old = expected_complete_loglik(counts, lambda);
    double q_new = expected_complete_loglik(counts, next);
    if (variant != Variant::Mlem) {
      q_old += gamma_prior_loglik(fit.eps_hat.eps, lambda0, lambda);
      q_new += gamma_prior_loglik(fit.eps_hat.eps, lambda0, next);
    }
    if (std::isfinite(q_old) && q_new < q_old - cfg.ascent_slack * (1.0 + std::abs(q_old)))
      throw std::runtime_error("run_em: surrogate objective decreased (" + std::to_string(q_old) +
                               " -> " + std::to_string(q_new) + ") at iteration " + std::to_string(k));

    // Zero is only an admissible limit for edges without a prior anchor:
    // with lambda0 > 0 the Gamma prior repels zero, and the posterior mode
    // stays (tiny but) positive.
    bool pruned = false;
    bool collapsing = false;
    next.transform_off_diag([&](int i, int j, double v) {
      bool prunable = variant == Variant::Mlem || lambda0(i, j) == 0.0;
      if (prunable && v > 0.0 && v < cfg.prune_tol) {
        pruned = true;
        return 0.0;
      }
      // Descending through the band means the contraction is still running;
      // a small stable rate there is a legitimate fit, not a transient.
      if (variant != Variant::Mlem && lambda0(i, j) == 0.0 && v > 0.0 && v < cfg.collapse_band &&
          v < 0.9 * lambda(i, j))
        collapsing = true;
      return v;
    });
    if (pruned) ++prune_credits;

    double denom = std::max(frobenius_norm(lambda), 1e-300);
    double delta = std::sqrt(frobenius_sq_diff(next, lambda)) / denom;
    fit.lambda_estep = std::move(lambda);
    lambda = std::move(next);
    fit.final_counts = std::move(counts);
    fit.iterations = k;
    // A prune changes the support; run at least one more sweep so the
    // recorded counts are consistent with the pruned iterate. Mid-collapse
    // edges likewise hold convergence open until they resolve.
    if (!pruned && !collapsing && delta < cfg.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.lambda_hat = std::move(lambda);
  return fit;
}

}  // namespace anomo
