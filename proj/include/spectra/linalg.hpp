#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spectra/errors.hpp"

namespace spectra {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  std::vector<double> multiply(std::span<const double> x) const {
    std::vector<double> y(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      const double* a = data_.data() + r * cols_;
      double s = 0.0;
      for (std::size_t c = 0; c < cols_; ++c) s += a[c] * x[c];
      y[r] = s;
    }
    return y;
  }

  /// Max absolute row sum.
  double norm_inf() const {
    double best = 0.0;
    for (std::size_t r = 0; r < rows_; ++r) {
      double s = 0.0;
      for (double v : row(r)) s += std::abs(v);
      best = std::max(best, s);
    }
    return best;
  }

  double max_abs() const {
    double best = 0.0;
    for (double v : data_) best = std::max(best, std::abs(v));
    return best;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Eigenvalues ascending; row j of `vectors` is the eigenvector of values[j].
struct SymmetricEigen {
  std::vector<double> values;
  Matrix vectors;
};

namespace detail {

inline constexpr int kQlIterationsPerEigenvalue = 60;

/// sqrt(a^2 + b^2) without std::hypot's overflow guards, which dominate the
/// QL sweep. Safe for entries far below 1e150, as for every operator here.
inline double plain_hypot(double a, double b) noexcept { return std::sqrt(a * a + b * b); }

/// Householder tridiagonalization with accumulated transforms (EISPACK
/// tred2 ordering). The working array holds V transposed, so the inner
/// loops walk contiguous memory; on return `w` holds Q^T with A = Q T Q^T,
/// d the diagonal and e the subdiagonal (e[0] = 0, e[i] couples i-1 and i).
inline void tred2(std::vector<double>& w, std::size_t n, std::vector<double>& d, std::vector<double>& e) {
  auto V = [&](std::size_t r, std::size_t c) -> double& { return w[c * n + r]; };
  for (std::size_t j = 0; j < n; ++j) d[j] = V(n - 1, j);
  for (std::size_t i = n - 1; i > 0; --i) {
    double scale = 0.0, h = 0.0;
    for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (std::size_t j = 0; j < i; ++j) {
        d[j] = V(i - 1, j);
        V(i, j) = 0.0;
        V(j, i) = 0.0;
      }
    } else {
      for (std::size_t k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        V(j, i) = f;
        g = e[j] + V(j, j) * f;
        double* col = &V(0, j);
        for (std::size_t k = j + 1; k <= i - 1; ++k) {
          g += col[k] * d[k];
          e[k] += col[k] * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        double* col = &V(0, j);
        for (std::size_t k = j; k <= i - 1; ++k) col[k] -= (f * e[k] + g * d[k]);
        d[j] = V(i - 1, j);
        V(i, j) = 0.0;
      }
    }
    d[i] = h;
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    V(n - 1, i) = V(i, i);
    V(i, i) = 1.0;
    const double h = d[i + 1];
    const double* q = &V(0, i + 1);
    if (h != 0.0) {
      for (std::size_t k = 0; k <= i; ++k) d[k] = q[k] / h;
      for (std::size_t j = 0; j <= i; ++j) {
        double* col = &V(0, j);
        double g = 0.0;
        for (std::size_t k = 0; k <= i; ++k) g += q[k] * col[k];
        for (std::size_t k = 0; k <= i; ++k) col[k] -= g * d[k];
      }
    }
    for (std::size_t k = 0; k <= i; ++k) V(k, i + 1) = 0.0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    d[j] = V(n - 1, j);
    V(n - 1, j) = 0.0;
  }
  V(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

/// Implicit-shift QL on a symmetric tridiagonal matrix. `e` uses the tred2
/// convention on entry. When `z` is non-null its rows are rotated along
/// (z holds Q^T), giving eigenvectors as rows. Eigenvalues are sorted
/// ascending, rows of z permuted accordingly.
inline void tql2(std::vector<double>& d, std::vector<double>& e, std::size_t n, std::vector<double>* z) {
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  double f = 0.0, tst1 = 0.0;
  const double eps = std::numeric_limits<double>::epsilon();
  for (std::size_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    std::size_t m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > kQlIterationsPerEigenvalue)
          throw SolverError("implicit QL did not converge for eigenvalue " + std::to_string(l));
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = plain_hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
        f += h;
        p = d[m];
        double c = 1.0, c2 = c, c3 = c;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (std::size_t ii = m; ii-- > l;) {
          const std::size_t i = ii;
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * p;
          r = plain_hypot(p, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = p / r;
          p = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          if (z) {
            double* zi = z->data() + i * n;
            double* zi1 = zi + n;
            for (std::size_t k = 0; k < n; ++k) {
              const double t = zi1[k];
              zi1[k] = s * zi[k] + c * t;
              zi[k] = c * zi[k] - s * t;
            }
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    std::size_t k = i;
    double p = d[i];
    for (std::size_t j = i + 1; j < n; ++j)
      if (d[j] < p) {
        k = j;
        p = d[j];
      }
    if (k != i) {
      d[k] = d[i];
      d[i] = p;
      if (z) std::swap_ranges(z->begin() + i * n, z->begin() + (i + 1) * n, z->begin() + k * n);
    }
  }
}

}  // namespace detail

/// Full eigendecomposition of a dense symmetric matrix: Householder
/// reduction, then implicit QL with accumulated transforms. O(n^3),
/// deterministic, single-threaded. Eigenvectors are sign-fixed so their
/// largest-magnitude entry (first one on ties) is positive.
inline SymmetricEigen symmetric_eigen(const Matrix& a) {
  const std::size_t n = a.rows();
  SymmetricEigen out;
  if (n == 0) return out;
  std::vector<double> w(a.data().begin(), a.data().end());  // symmetric, so A^T = A
  std::vector<double> d(n), e(n);
  detail::tred2(w, n, d, e);
  detail::tql2(d, e, n, &w);
  Matrix vec(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* src = w.data() + j * n;
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(src[k]) > std::abs(src[arg]) * (1.0 + 1e-12)) arg = k;
    const double sgn = src[arg] < 0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) vec(j, k) = sgn * src[k];
  }
  out.values = std::move(d);
  out.vectors = std::move(vec);
  return out;
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `diag`
/// and off-diagonal `off` (off[i] couples i and i+1), ascending.
inline std::vector<double> tridiagonal_eigenvalues(std::vector<double> diag, std::span<const double> off) {
  const std::size_t n = diag.size();
  if (n == 0) return diag;
  std::vector<double> e(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) e[i + 1] = off[i];
  detail::tql2(diag, e, n, nullptr);
  return diag;
}

/// Number of eigenvalues strictly below x of the symmetric tridiagonal
/// matrix (diag, off), from the signs of the LDL^T pivots of T - x.
inline std::size_t sturm_count(std::span<const double> diag, std::span<const double> off, double x) {
  const std::size_t n = diag.size();
  const double tiny = std::numeric_limits<double>::min() / std::numeric_limits<double>::epsilon();
  std::size_t count = 0;
  double q = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    q = diag[i] - x - (i > 0 ? off[i - 1] * off[i - 1] / q : 0.0);
    if (q == 0.0) q = -tiny;
    if (q < 0.0) ++count;
  }
  return count;
}

/// The k-th smallest eigenvalue (0-based) of a symmetric tridiagonal matrix
/// by bisection on sturm_count, to absolute accuracy `tol`.
inline double tridiagonal_eigenvalue(std::span<const double> diag, std::span<const double> off, std::size_t k,
                                     double tol) {
  const std::size_t n = diag.size();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = (i > 0 ? std::abs(off[i - 1]) : 0.0) + (i + 1 < n ? std::abs(off[i]) : 0.0);
    lo = std::min(lo, diag[i] - r);
    hi = std::max(hi, diag[i] + r);
  }
  const double pad = 2.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(lo), std::abs(hi));
  lo -= pad;
  hi += pad;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (sturm_count(diag, off, mid) > k)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

/// Square matrix that stores only the diagonals |i - j| <= reach. Reads
/// outside the stored band return zero; writes there are not allowed.
class BandStorage {
 public:
  BandStorage(std::size_t n, std::size_t reach)
      : n_(n), reach_(reach), width_(2 * reach + 1), data_(n * width_, 0.0) {}

  std::size_t rows() const noexcept { return n_; }
  std::size_t reach() const noexcept { return reach_; }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * width_ + (j + reach_ - i)]; }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    if ((i > j ? i - j : j - i) > reach_) return 0.0;
    return data_[i * width_ + (j + reach_ - i)];
  }

 private:
  std::size_t n_, reach_, width_;
  std::vector<double> data_;
};

/// Reduces a symmetric band matrix of half-bandwidth `band` to tridiagonal
/// form by Givens bulge chasing, O(n^2 band) work. `a` is overwritten; with
/// BandStorage it needs reach >= band + 2 for the bulge. Returns (diagonal,
/// off-diagonal).
template <class M>
std::pair<std::vector<double>, std::vector<double>> band_to_tridiagonal(M& a, std::size_t band) {
  const std::size_t n = a.rows();
  std::vector<double> diag(n), off(n > 0 ? n - 1 : 0);
  if (band > 1) {
    auto rotate = [&](std::size_t p, std::size_t q, double c, double s) {
      const std::size_t lo = p >= band + 1 ? p - band - 1 : 0;
      const std::size_t hi = std::min(n, q + band + 2);
      for (std::size_t t = lo; t < hi; ++t) {
        const double x = a(p, t), y = a(q, t);
        a(p, t) = c * x + s * y;
        a(q, t) = -s * x + c * y;
      }
      for (std::size_t t = lo; t < hi; ++t) {
        const double x = a(t, p), y = a(t, q);
        a(t, p) = c * x + s * y;
        a(t, q) = -s * x + c * y;
      }
    };
    for (std::size_t j = 0; j + 2 < n; ++j) {
      // clear column j below the first subdiagonal, outermost entry first
      for (std::size_t r0 = std::min(n - 1, j + band); r0 >= j + 2; --r0) {
        std::size_t k = j, r = r0;
        while (r < n) {
          const double y = a(r, k);
          if (y == 0.0) break;
          const double x = a(r - 1, k);
          const double rho = detail::plain_hypot(x, y);
          rotate(r - 1, r, x / rho, y / rho);
          a(r, k) = 0.0;
          a(k, r) = 0.0;
          k = r - 1;
          r += band;
        }
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
  for (std::size_t i = 0; i + 1 < n; ++i) off[i] = a(i + 1, i);
  return {std::move(diag), std::move(off)};
}

/// Determinant by Gaussian elimination with partial pivoting.
inline double determinant(Matrix a) {
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
    if (a(p, k) == 0.0) return 0.0;
    if (p != k) {
      std::swap_ranges(a.row(k).begin(), a.row(k).end(), a.row(p).begin());
      det = -det;
    }
    const double piv = a(k, k);
    det *= piv;
    for (std::size_t i = k + 1; i < n; ++i) {
      const double l = a(i, k) / piv;
      if (l == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= l * a(k, j);
    }
  }
  return det;
}

/// LU factorization with partial pivoting of a general band matrix with
/// kl sub- and ku super-diagonals. Fill-in widens U to kl + ku.
class BandedLU {
 public:
  BandedLU(std::size_t n, std::size_t kl, std::size_t ku)
      : n_(n), kl_(kl), ku_(ku), width_(2 * kl + ku + 1), a_(n * width_, 0.0), piv_(n) {}

  std::size_t size() const noexcept { return n_; }

  /// Entry (i, j) with |j - i| inside the declared band (before factoring).
  double& at(std::size_t i, std::size_t j) noexcept { return a_[i * width_ + (j + kl_ - i)]; }

  /// Factors in place. Exactly zero pivots are replaced by `tiny`, the usual
  /// device for inverse iteration at an exact eigenvalue.
  void factor(double tiny) {
    for (std::size_t k = 0; k < n_; ++k) {
      const std::size_t last = std::min(n_ - 1, k + kl_);
      std::size_t p = k;
      for (std::size_t i = k + 1; i <= last; ++i)
        if (std::abs(at(i, k)) > std::abs(at(p, k))) p = i;
      piv_[k] = p;
      const std::size_t jmax = std::min(n_ - 1, k + kl_ + ku_);
      if (p != k)
        for (std::size_t j = k; j <= jmax; ++j) std::swap(at(k, j), at(p, j));
      if (at(k, k) == 0.0) at(k, k) = tiny;
      const double pivot = at(k, k);
      for (std::size_t i = k + 1; i <= last; ++i) {
        const double l = at(i, k) / pivot;
        at(i, k) = l;
        if (l == 0.0) continue;
        for (std::size_t j = k + 1; j <= jmax; ++j) at(i, j) -= l * at(k, j);
      }
    }
  }

  void solve(std::span<double> b) {
    for (std::size_t k = 0; k < n_; ++k) {
      if (piv_[k] != k) std::swap(b[k], b[piv_[k]]);
      const std::size_t last = std::min(n_ - 1, k + kl_);
      for (std::size_t i = k + 1; i <= last; ++i) b[i] -= at(i, k) * b[k];
    }
    for (std::size_t ii = n_; ii-- > 0;) {
      const std::size_t jmax = std::min(n_ - 1, ii + kl_ + ku_);
      double s = b[ii];
      for (std::size_t j = ii + 1; j <= jmax; ++j) s -= at(ii, j) * b[j];
      b[ii] = s / at(ii, ii);
    }
  }

 private:
  std::size_t n_, kl_, ku_, width_;
  std::vector<double> a_;
  std::vector<std::size_t> piv_;
};

}  // namespace spectra
