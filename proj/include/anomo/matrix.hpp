#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace anomo {

// Dense square matrix with the diagonal structurally excluded from all
// off-diagonal iteration. Rate and traffic matrices keep their diagonal
// stored as zero; parameter counts are always dim*(dim-1).
template <class T>
class SquareMat {
 public:
  SquareMat() = default;
  explicit SquareMat(int dim, T fill = T{}) : dim_(dim), data_(static_cast<std::size_t>(dim) * dim, fill) {
    if (dim < 0) throw std::invalid_argument("SquareMat: negative dim");
  }

  int dim() const { return dim_; }
  bool empty() const { return dim_ == 0; }

  T& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * dim_ + j]; }
  const T& operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim_ + j]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  template <class F>
  void for_each_off_diag(F&& f) const {
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j)
        if (i != j) f(i, j, (*this)(i, j));
  }

  template <class F>
  void transform_off_diag(F&& f) {
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j)
        if (i != j) (*this)(i, j) = f(i, j, (*this)(i, j));
  }

  T off_diag_sum() const {
    T s{};
    for_each_off_diag([&](int, int, T v) { s += v; });
    return s;
  }

  T row_sum(int i) const {
    T s{};
    for (int j = 0; j < dim_; ++j)
      if (j != i) s += (*this)(i, j);
    return s;
  }

  T col_sum(int j) const {
    T s{};
    for (int i = 0; i < dim_; ++i)
      if (i != j) s += (*this)(i, j);
    return s;
  }

  bool operator==(const SquareMat& o) const { return dim_ == o.dim_ && data_ == o.data_; }

 private:
  int dim_ = 0;
  std::vector<T> data_;
};

using Matrix = SquareMat<double>;
using CountMatrix = SquareMat<std::int64_t>;

struct Edge {
  int src = 0;
  int dst = 0;
  friend bool operator==(const Edge& a, const Edge& b) { return a.src == b.src && a.dst == b.dst; }
  friend bool operator<(const Edge& a, const Edge& b) {
    return a.src != b.src ? a.src < b.src : a.dst < b.dst;
  }
};

// Validates the rate-matrix contract: zero diagonal, nonnegative finite entries.
inline void validate_rates(const Matrix& m, const char* what = "rate matrix") {
  for (int i = 0; i < m.dim(); ++i) {
    if (m(i, i) != 0.0) throw std::invalid_argument(std::string(what) + ": nonzero diagonal");
    for (int j = 0; j < m.dim(); ++j) {
      double v = m(i, j);
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument(std::string(what) + ": negative or non-finite entry");
    }
  }
}

inline double frobenius_sq_diff(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.data().size(); ++k) {
    double d = a.data()[k] - b.data()[k];
    s += d * d;
  }
  return s;
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

inline double l1_diff(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  a.for_each_off_diag([&](int i, int j, double v) { s += std::abs(v - b(i, j)); });
  return s;
}

}  // namespace anomo
