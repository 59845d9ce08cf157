#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "anomo/matrix.hpp"
#include "anomo/netsim.hpp"

namespace anomo {

// Equality constraints the warm-start projection must satisfy: window-mean
// row/column totals, window-mean interior flows, and directly observed edges
// pinned at their window means.
struct ConstraintSystem {
  std::vector<double> row_targets;
  std::vector<double> col_targets;
  std::vector<double> flow_targets;
  FlowMap flow_sets;
  std::map<Edge, double> fixed_entries;

  int dim() const { return static_cast<int>(row_targets.size()); }

  void validate() const {
    double row_total = 0.0, col_total = 0.0;
    for (double v : row_targets) {
      if (v < 0.0) throw std::invalid_argument("ConstraintSystem: negative row target");
      row_total += v;
    }
    for (double v : col_targets) {
      if (v < 0.0) throw std::invalid_argument("ConstraintSystem: negative col target");
      col_total += v;
    }
    for (double v : flow_targets)
      if (v < 0.0) throw std::invalid_argument("ConstraintSystem: negative flow target");
    double scale = std::max(1.0, std::max(row_total, col_total));
    if (std::abs(row_total - col_total) > 1e-9 * scale)
      throw std::invalid_argument("ConstraintSystem: row/col totals disagree");
  }
};

inline ConstraintSystem build_constraints(const ObservationSet& obs, const FlowMap& fmap) {
  if (obs.windows < 1) throw std::invalid_argument("build_constraints: no windows");
  const int p = obs.node_count;
  const int h = obs.flow_count();
  ConstraintSystem cs;
  cs.row_targets.assign(p, 0.0);
  cs.col_targets.assign(p, 0.0);
  cs.flow_targets.assign(h, 0.0);
  cs.flow_sets = fmap;
  const double inv_t = 1.0 / obs.windows;
  for (int t = 0; t < obs.windows; ++t) {
    for (int i = 0; i < p; ++i) {
      cs.row_targets[i] += inv_t * static_cast<double>(obs.row_sums[t][i]);
      cs.col_targets[i] += inv_t * static_cast<double>(obs.col_sums[t][i]);
    }
    for (int k = 0; k < h; ++k) cs.flow_targets[k] += inv_t * static_cast<double>(obs.flows[t][k]);
  }
  for (std::size_t k = 0; k < obs.observed_edges.size(); ++k) {
    double mean = 0.0;
    for (int t = 0; t < obs.windows; ++t) mean += inv_t * static_cast<double>(obs.observed_counts[t][k]);
    cs.fixed_entries[obs.observed_edges[k]] = mean;
  }
  return cs;
}

// Max absolute violation over all row/col/flow/fixed constraints.
inline double feasibility_residual(const Matrix& rates, const ConstraintSystem& cs) {
  const int p = cs.dim();
  if (rates.dim() != p) throw std::invalid_argument("feasibility_residual: dim mismatch");
  double worst = 0.0;
  for (int i = 0; i < p; ++i) {
    worst = std::max(worst, std::abs(rates.row_sum(i) - cs.row_targets[i]));
    worst = std::max(worst, std::abs(rates.col_sum(i) - cs.col_targets[i]));
  }
  for (std::size_t h = 0; h < cs.flow_targets.size(); ++h) {
    double s = 0.0;
    for (const Edge& e : cs.flow_sets.edge_sets[h]) s += rates(e.src, e.dst);
    worst = std::max(worst, std::abs(s - cs.flow_targets[h]));
  }
  for (const auto& [e, v] : cs.fixed_entries) worst = std::max(worst, std::abs(rates(e.src, e.dst) - v));
  return worst;
}

struct MreConfig {
  double tol = 1e-8;                  // relative primal/dual residual
  int max_iter = 50000;
  double infeasibility_floor = 1e-6;  // least-squares residual that triggers the penalized form
  double penalty_mu = 100.0;          // weight on constraint-violation L1 in the fallback
};

struct MreSolution {
  Matrix rates;
  double objective = 0.0;             // ||rates - lambda0||_1 over off-diagonal entries
  std::vector<double> residuals;      // per-constraint violations: rows, cols, flows, fixed
  std::vector<double> multipliers;    // equality duals (rows, cols, flows); diagnostics only
  int iterations = 0;
  bool converged = false;
  bool penalized_fallback = false;
};

namespace mre_detail {

// Three-block consensus ADMM on
//   min sum_k w_k |v_k - center_k|  s.t.  A v = d,  v_k >= 0 for k in clip set.
// Block 1 is the weighted soft-threshold around `center`, block 2 the affine
// projection through a cached factorization, block 3 the clip.
struct AdmmProblem {
  Eigen::MatrixXd a;
  Eigen::VectorXd d;
  Eigen::VectorXd center;
  Eigen::VectorXd weight;
  int clip_count = 0;  // first clip_count coordinates are sign-constrained
};

struct AdmmOutcome {
  Eigen::VectorXd v;
  Eigen::VectorXd multipliers;
  int iterations = 0;
  bool converged = false;
};

inline AdmmOutcome run_admm(const AdmmProblem& pb, const MreConfig& cfg) {
  const int n = static_cast<int>(pb.a.cols());
  const int m = static_cast<int>(pb.a.rows());
  Eigen::MatrixXd gram = pb.a * pb.a.transpose();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> fact(gram);

  Eigen::VectorXd z = pb.center.cwiseMax(0.0);
  Eigen::VectorXd x1 = z, x2 = z, x3 = z;
  Eigen::VectorXd u1 = Eigen::VectorXd::Zero(n), u2 = u1, u3 = u1;
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(m);
  double rho = 1.0;

  AdmmOutcome out;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    // L1 prox around the center.
    Eigen::VectorXd v = z - u1;
    for (int k = 0; k < n; ++k) {
      double t = pb.weight[k] / rho;
      double delta = v[k] - pb.center[k];
      x1[k] = pb.center[k] + (delta > t ? delta - t : (delta < -t ? delta + t : 0.0));
    }
    // Affine projection.
    v = z - u2;
    nu = fact.solve(pb.a * v - pb.d);
    x2 = v - pb.a.transpose() * nu;
    // Clip.
    v = z - u3;
    x3 = v;
    for (int k = 0; k < pb.clip_count; ++k) x3[k] = std::max(0.0, v[k]);

    Eigen::VectorXd z_old = z;
    z = ((x1 + u1) + (x2 + u2) + (x3 + u3)) / 3.0;
    u1 += x1 - z;
    u2 += x2 - z;
    u3 += x3 - z;

    double prim = std::sqrt((x1 - z).squaredNorm() + (x2 - z).squaredNorm() + (x3 - z).squaredNorm());
    double dual = rho * std::sqrt(3.0) * (z - z_old).norm();
    double scale_p = std::max({x1.norm(), x2.norm(), x3.norm(), z.norm(), 1.0});
    double scale_d = std::max(rho * (u1.norm() + u2.norm() + u3.norm()), 1.0);
    if (prim <= cfg.tol * scale_p && dual <= cfg.tol * scale_d) {
      out.iterations = it;
      out.converged = true;
      break;
    }
    if (it % 25 == 0) {
      if (prim > 10.0 * dual) {
        rho *= 2.0;
        u1 *= 0.5;
        u2 *= 0.5;
        u3 *= 0.5;
      } else if (dual > 10.0 * prim) {
        rho *= 0.5;
        u1 *= 2.0;
        u2 *= 2.0;
        u3 *= 2.0;
      }
    }
    out.iterations = it;
  }
  out.v = z;
  out.multipliers = rho * nu;
  return out;
}

}  // namespace mre_detail

// Constrained L1 projection of the baseline onto the observation-consistent
// polytope. Directly observed edges are substituted out and pinned exactly;
// an inconsistent constraint system (possible with real data) falls back to
// the penalized form min ||x-x0||_1 + mu * ||Av-d||_1 and is flagged.
inline MreSolution solve_mre(const ConstraintSystem& cs, const Matrix& lambda0, const MreConfig& cfg = {}) {
  cs.validate();
  validate_rates(lambda0, "solve_mre: lambda0");
  const int p = cs.dim();
  if (lambda0.dim() != p) throw std::invalid_argument("solve_mre: dim mismatch");

  std::vector<Edge> free_edges;
  Matrix pinned(p, 0.0);
  SquareMat<std::uint8_t> is_fixed(p, 0);
  for (const auto& [e, v] : cs.fixed_entries) {
    is_fixed(e.src, e.dst) = 1;
    pinned(e.src, e.dst) = v;
  }
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      if (i != j && !is_fixed(i, j)) free_edges.push_back({i, j});
  const int n = static_cast<int>(free_edges.size());
  const int h = static_cast<int>(cs.flow_targets.size());
  const int m = 2 * p + h;

  MreSolution sol;
  sol.rates = Matrix(p, 0.0);
  for (const auto& [e, v] : cs.fixed_entries) sol.rates(e.src, e.dst) = v;

  auto finish = [&](Matrix&& rates) {
    sol.rates = std::move(rates);
    sol.objective = l1_diff(sol.rates, lambda0);
    sol.residuals.clear();
    for (int i = 0; i < p; ++i) sol.residuals.push_back(sol.rates.row_sum(i) - cs.row_targets[i]);
    for (int j = 0; j < p; ++j) sol.residuals.push_back(sol.rates.col_sum(j) - cs.col_targets[j]);
    for (int k = 0; k < h; ++k) {
      double s = 0.0;
      for (const Edge& e : cs.flow_sets.edge_sets[k]) s += sol.rates(e.src, e.dst);
      sol.residuals.push_back(s - cs.flow_targets[k]);
    }
    for (const auto& [e, v] : cs.fixed_entries) sol.residuals.push_back(sol.rates(e.src, e.dst) - v);
    for (double& r : sol.residuals) r = std::abs(r);
  };

  if (n == 0) {
    sol.converged = true;
    Matrix rates = sol.rates;
    finish(std::move(rates));
    return sol;
  }

  Eigen::MatrixXd e_mat = Eigen::MatrixXd::Zero(m, n);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(m);
  for (int k = 0; k < n; ++k) {
    e_mat(free_edges[k].src, k) = 1.0;
    e_mat(p + free_edges[k].dst, k) = 1.0;
  }
  for (int i = 0; i < p; ++i) {
    d[i] = cs.row_targets[i] - pinned.row_sum(i);
    d[p + i] = cs.col_targets[i] - pinned.col_sum(i);
  }
  for (int k = 0; k < h; ++k) {
    double target = cs.flow_targets[k];
    for (const Edge& e : cs.flow_sets.edge_sets[k])
      if (is_fixed(e.src, e.dst)) target -= pinned(e.src, e.dst);
    d[2 * p + k] = target;
    for (int c = 0; c < n; ++c)
      for (const Edge& e : cs.flow_sets.edge_sets[k])
        if (e == free_edges[c]) e_mat(2 * p + k, c) += 1.0;
  }

  // Consistency probe: least-squares residual of the reduced system.
  {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> probe(e_mat);
    Eigen::VectorXd ls = probe.solve(d);
    double resid = (e_mat * ls - d).lpNorm<Eigen::Infinity>();
    sol.penalized_fallback = resid > cfg.infeasibility_floor * (1.0 + d.lpNorm<Eigen::Infinity>());
  }

  mre_detail::AdmmProblem pb;
  if (!sol.penalized_fallback) {
    pb.a = e_mat;
    pb.d = d;
    pb.center.resize(n);
    pb.weight = Eigen::VectorXd::Ones(n);
    for (int k = 0; k < n; ++k) pb.center[k] = lambda0(free_edges[k].src, free_edges[k].dst);
    pb.clip_count = n;
  } else {
    // Extended variables [x; s] with A~ = [E -I]; always consistent.
    pb.a.resize(m, n + m);
    pb.a << e_mat, -Eigen::MatrixXd::Identity(m, m);
    pb.d = d;
    pb.center = Eigen::VectorXd::Zero(n + m);
    pb.weight = Eigen::VectorXd::Constant(n + m, cfg.penalty_mu);
    for (int k = 0; k < n; ++k) {
      pb.center[k] = lambda0(free_edges[k].src, free_edges[k].dst);
      pb.weight[k] = 1.0;
    }
    pb.clip_count = n;
  }

  mre_detail::AdmmOutcome admm = mre_detail::run_admm(pb, cfg);
  sol.iterations = admm.iterations;
  sol.converged = admm.converged;
  sol.multipliers.assign(admm.multipliers.data(), admm.multipliers.data() + m);

  Matrix rates = sol.rates;  // pinned values already in place
  for (int k = 0; k < n; ++k)
    rates(free_edges[k].src, free_edges[k].dst) = std::max(0.0, admm.v[k]);
  finish(std::move(rates));
  return sol;
}

}  // namespace anomo
