#pragma once

// Small dense two-phase tableau simplex used as the exact reference for the
// constrained L1 projection. Test-only code; keeps no state and shares
// nothing with the solver under test.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace oracles {

struct LpResult {
  bool feasible = false;
  double objective = 0.0;
  std::vector<double> x;
};

namespace lp_detail {

constexpr double kEps = 1e-9;

// Bland's rule primal simplex on a tableau with an identity basis already in
// place (columns basis[i] hold unit vectors).
inline bool run_simplex(std::vector<std::vector<double>>& tab, std::vector<int>& basis, int cols) {
  const int rows = static_cast<int>(tab.size()) - 1;  // last row = objective
  for (int iter = 0; iter < 20000; ++iter) {
    int pivot_col = -1;
    for (int j = 0; j < cols; ++j) {
      if (tab[rows][j] < -kEps) {
        pivot_col = j;
        break;  // Bland: first improving column
      }
    }
    if (pivot_col < 0) return true;  // optimal
    int pivot_row = -1;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (int i = 0; i < rows; ++i) {
      if (tab[i][pivot_col] > kEps) {
        double ratio = tab[i][cols] / tab[i][pivot_col];
        if (ratio < best_ratio - kEps ||
            (ratio < best_ratio + kEps && (pivot_row < 0 || basis[i] < basis[pivot_row]))) {
          best_ratio = ratio;
          pivot_row = i;
        }
      }
    }
    if (pivot_row < 0) return false;  // unbounded
    double p = tab[pivot_row][pivot_col];
    for (int j = 0; j <= cols; ++j) tab[pivot_row][j] /= p;
    for (int i = 0; i <= rows; ++i) {
      if (i == pivot_row) continue;
      double f = tab[i][pivot_col];
      if (f == 0.0) continue;
      for (int j = 0; j <= cols; ++j) tab[i][j] -= f * tab[pivot_row][j];
    }
    basis[pivot_row] = pivot_col;
  }
  throw std::runtime_error("simplex: iteration cap hit");
}

}  // namespace lp_detail

// min c'v  s.t.  A v = b, v >= 0.
inline LpResult solve_lp(const std::vector<std::vector<double>>& a, std::vector<double> b,
                         const std::vector<double>& c) {
  using namespace lp_detail;
  const int m = static_cast<int>(a.size());
  const int n = m > 0 ? static_cast<int>(a[0].size()) : 0;
  std::vector<std::vector<double>> rows(m, std::vector<double>(n + m + 1, 0.0));
  for (int i = 0; i < m; ++i) {
    double sign = b[i] < 0.0 ? -1.0 : 1.0;
    for (int j = 0; j < n; ++j) rows[i][j] = sign * a[i][j];
    rows[i][n + i] = 1.0;  // artificial
    rows[i][n + m] = sign * b[i];
  }

  // Phase 1: minimize sum of artificials.
  std::vector<std::vector<double>> tab = rows;
  tab.emplace_back(n + m + 1, 0.0);
  for (int j = 0; j < n + m; ++j)
    if (j >= n) tab[m][j] = 1.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j <= n + m; ++j) tab[m][j] -= tab[i][j];
  std::vector<int> basis(m);
  for (int i = 0; i < m; ++i) basis[i] = n + i;
  if (!run_simplex(tab, basis, n + m)) return {};
  if (-tab[m][n + m] > 1e-7) return {};  // infeasible

  // Pivot any remaining artificial out of the basis (degenerate rows).
  for (int i = 0; i < m; ++i) {
    if (basis[i] < n) continue;
    int col = -1;
    for (int j = 0; j < n; ++j)
      if (std::abs(tab[i][j]) > kEps) {
        col = j;
        break;
      }
    if (col < 0) continue;  // redundant row; leave the artificial at zero
    double p = tab[i][col];
    for (int j = 0; j <= n + m; ++j) tab[i][j] /= p;
    for (int k = 0; k <= m; ++k) {
      if (k == i) continue;
      double f = tab[k][col];
      if (f == 0.0) continue;
      for (int j = 0; j <= n + m; ++j) tab[k][j] -= f * tab[i][j];
    }
    basis[i] = col;
  }

  // Phase 2 on the original objective, artificial columns frozen.
  std::vector<std::vector<double>> tab2(m + 1, std::vector<double>(n + 1, 0.0));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) tab2[i][j] = tab[i][j];
    tab2[i][n] = tab[i][n + m];
  }
  for (int j = 0; j < n; ++j) tab2[m][j] = c[j];
  for (int i = 0; i < m; ++i) {
    if (basis[i] >= n) continue;
    double f = tab2[m][basis[i]];
    if (f == 0.0) continue;
    for (int j = 0; j <= n; ++j) tab2[m][j] -= f * tab2[i][j];
  }
  if (!run_simplex(tab2, basis, n)) throw std::runtime_error("solve_lp: unbounded");

  LpResult res;
  res.feasible = true;
  res.x.assign(n, 0.0);
  for (int i = 0; i < m; ++i)
    if (basis[i] < n) res.x[basis[i]] = tab2[i][n];
  res.objective = 0.0;
  for (int j = 0; j < n; ++j) res.objective += c[j] * res.x[j];
  return res;
}

// min ||x - x0||_1  s.t.  E x = d, x >= 0, via the split x = x0 + p - q.
// Returned x has size n; infeasible systems report feasible = false.
inline LpResult l1_projection_lp(const std::vector<std::vector<double>>& e, const std::vector<double>& d,
                                 const std::vector<double>& x0) {
  const int m = static_cast<int>(e.size());
  const int n = static_cast<int>(x0.size());
  // Variables v = [p(n), q(n), s(n)]; constraints:
  //   E p - E q           = d - E x0
  //   -p  + q   + s       = x0         (keeps x = x0 + p - q >= 0)
  std::vector<std::vector<double>> a(m + n, std::vector<double>(3 * n, 0.0));
  std::vector<double> b(m + n, 0.0);
  for (int i = 0; i < m; ++i) {
    double rhs = d[i];
    for (int j = 0; j < n; ++j) {
      a[i][j] = e[i][j];
      a[i][n + j] = -e[i][j];
      rhs -= e[i][j] * x0[j];
    }
    b[i] = rhs;
  }
  for (int j = 0; j < n; ++j) {
    a[m + j][j] = -1.0;
    a[m + j][n + j] = 1.0;
    a[m + j][2 * n + j] = 1.0;
    b[m + j] = x0[j];
  }
  std::vector<double> c(3 * n, 0.0);
  for (int j = 0; j < 2 * n; ++j) c[j] = 1.0;
  LpResult lp = solve_lp(a, b, c);
  if (!lp.feasible) return lp;
  LpResult out;
  out.feasible = true;
  out.objective = lp.objective;
  out.x.resize(n);
  for (int j = 0; j < n; ++j) out.x[j] = x0[j] + lp.x[j] - lp.x[n + j];
  return out;
}

}  // namespace oracles
