#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "spectra/errors.hpp"
#include "spectra/linalg.hpp"
#include "spectra/operator.hpp"
#include "spectra/seed.hpp"
#include "spectra/weight_field.hpp"

namespace spectra {

/// Ascending spectrum of H with orthonormal eigenvectors (row j belongs to
/// eigenvalue j), per-pair residuals ||Hu - Eu|| and gaps to the nearest
/// other eigenvalue.
struct SpectralDecomposition {
  std::vector<double> eigenvalues;
  Matrix eigenvectors;
  std::vector<double> residuals;
  std::vector<double> gaps;
  double operator_norm = 0.0;  // infinity norm of H

  std::size_t size() const noexcept { return eigenvalues.size(); }
  std::span<const double> vector(std::size_t j) const { return eigenvectors.row(j); }

  /// Threshold below which a gap counts as a degeneracy.
  double degeneracy_threshold() const noexcept { return 1e-8 * operator_norm; }
  bool is_simple(std::size_t j) const noexcept { return gaps[j] > degeneracy_threshold(); }
};

struct EigenPair {
  std::size_t index = 0;
  double value = 0.0;
  std::vector<double> vector;
};

inline double operator_norm(const WeightField& field) {
  const std::size_t n = field.n_sites();
  double best = 0.0;
  for (std::size_t s = 0; s < n; ++s) best = std::max(best, 2.0 * (field[s] + field[(s + n - 1) % n]));
  return best;
}

inline std::vector<double> spectral_gaps(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<double> gaps(n, std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < n; ++j) {
    if (j > 0) gaps[j] = std::min(gaps[j], values[j] - values[j - 1]);
    if (j + 1 < n) gaps[j] = std::min(gaps[j], values[j + 1] - values[j]);
  }
  return gaps;
}

/// Full decomposition by Householder reduction and implicit QL.
inline SpectralDecomposition decompose(const WeightField& field, std::optional<SampleOrigin> origin = std::nullopt) {
  SpectralDecomposition out;
  SymmetricEigen eig;
  try {
    eig = symmetric_eigen(build_matrix(field));
  } catch (const SolverError& e) {
    if (origin && !e.origin()) throw SolverError(e.what(), origin);
    throw;
  }
  out.eigenvalues = std::move(eig.values);
  out.eigenvectors = std::move(eig.vectors);
  out.operator_norm = operator_norm(field);
  const std::size_t n = out.size();
  out.residuals.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto u = out.vector(j);
    const auto hu = spectra::apply(field, u);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double r = hu[k] - out.eigenvalues[j] * u[k];
      s += r * r;
    }
    out.residuals[j] = std::sqrt(s);
  }
  out.gaps = spectral_gaps(out.eigenvalues);
  return out;
}

/// Site held at position p of the band ordering 0, N-1, 1, N-2, 2, ...
/// Ring neighbours end up at most two positions apart.
inline std::vector<std::size_t> band_ordering(std::size_t n) {
  std::vector<std::size_t> perm(n);
  for (std::size_t p = 0; p < n; ++p) perm[p] = (p % 2 == 0) ? p / 2 : n - 1 - p / 2;
  return perm;
}

/// The ring operator in band ordering (half-bandwidth 2), stored in `M`
/// (Matrix or BandStorage).
template <class M = Matrix>
M banded_matrix(const WeightField& field, std::size_t reach = 4) {
  const std::size_t n = field.n_sites();
  const auto perm = band_ordering(n);
  std::vector<std::size_t> pos(n);
  for (std::size_t p = 0; p < n; ++p) pos[perm[p]] = p;
  M h = [&] {
    if constexpr (std::is_same_v<M, Matrix>) return Matrix(n, n);
    else return M(n, reach);
  }();
  for (std::size_t g = 0; g < n; ++g) {
    const std::size_t a = pos[g], b = pos[(g + 1) % n];
    const double w = field[g];
    h(a, a) += w;
    h(b, b) += w;
    h(a, b) -= w;
    h(b, a) -= w;
  }
  return h;
}

/// Tridiagonal matrix orthogonally similar to H, for cheap eigenvalue
/// counting and selection when the full spectrum is not needed.
struct TridiagonalForm {
  std::vector<double> diag;
  std::vector<double> off;

  std::size_t size() const noexcept { return diag.size(); }

  /// #{E_n < x}, with multiplicity.
  std::size_t count_below(double x) const { return sturm_count(diag, off, x); }

  /// #{E_n in [lo, hi)}.
  std::size_t count_in(double lo, double hi) const {
    if (!(hi > lo)) return 0;
    return count_below(hi) - count_below(lo);
  }

  double eigenvalue(std::size_t k, double tol = 1e-14) const { return tridiagonal_eigenvalue(diag, off, k, tol); }

  std::vector<double> eigenvalues() const { return tridiagonal_eigenvalues(diag, off); }

  /// Index and value of the eigenvalue closest to `energy`.
  std::pair<std::size_t, double> nearest(double energy, double tol = 1e-14) const {
    const std::size_t c = count_below(energy);
    std::size_t best_k = c < size() ? c : size() - 1;
    double best = eigenvalue(best_k, tol);
    if (c > 0 && c < size()) {
      const double below = eigenvalue(c - 1, tol);
      if (std::abs(below - energy) <= std::abs(best - energy)) {
        best = below;
        best_k = c - 1;
      }
    }
    return {best_k, best};
  }
};

inline TridiagonalForm tridiagonal_form(const WeightField& field) {
  auto h = banded_matrix<BandStorage>(field);
  auto [diag, off] = band_to_tridiagonal(h, 2);
  return {std::move(diag), std::move(off)};
}

/// Eigenvalues only, ascending. Reorders the ring into a pentadiagonal
/// matrix, chases it down to tridiagonal form with Givens rotations and
/// finishes with QL, so the cost is O(N^2) instead of O(N^3).
inline std::vector<double> eigenvalues(const WeightField& field, std::optional<SampleOrigin> origin = std::nullopt) {
  auto t = tridiagonal_form(field);
  try {
    return tridiagonal_eigenvalues(std::move(t.diag), t.off);
  } catch (const SolverError& e) {
    if (origin && !e.origin()) throw SolverError(e.what(), origin);
    throw;
  }
}

/// Eigenvector for an eigenvalue known to high accuracy (e.g. from
/// eigenvalues()), by inverse iteration on the banded form. Sign fixed so the
/// largest-magnitude entry is positive. `residual` receives ||Hu - Eu||.
inline std::vector<double> inverse_iteration(const WeightField& field, double eigenvalue, int iterations = 3,
                                             double* residual = nullptr) {
  const std::size_t n = field.n_sites();
  const auto perm = band_ordering(n);
  const Matrix h = banded_matrix(field);
  BandedLU lu(n, 2, 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = (i >= 2 ? i - 2 : 0); j <= std::min(n - 1, i + 2); ++j)
      lu.at(i, j) = h(i, j) - (i == j ? eigenvalue : 0.0);
  const double norm = operator_norm(field);
  lu.factor(std::numeric_limits<double>::epsilon() * std::max(norm, 1.0));
  std::vector<double> x(n);
  RandomStream start(0x5EEDF00DULL + n);
  for (double& v : x) v = start.uniform(-1.0, 1.0);
  for (int it = 0; it < iterations; ++it) {
    lu.solve(x);
    const double s = norm2(x);
    for (double& v : x) v /= s;
  }
  std::vector<double> u(n);
  for (std::size_t p = 0; p < n; ++p) u[perm[p]] = x[p];
  std::size_t arg = 0;
  for (std::size_t k = 1; k < n; ++k)
    if (std::abs(u[k]) > std::abs(u[arg]) * (1.0 + 1e-12)) arg = k;
  if (u[arg] < 0)
    for (double& v : u) v = -v;
  if (residual) {
    const auto hu = spectra::apply(field, u);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += (hu[k] - eigenvalue * u[k]) * (hu[k] - eigenvalue * u[k]);
    *residual = std::sqrt(s);
  }
  return u;
}

/// All pairs with |E_n - energy| < radius, with multiplicity, ascending.
inline std::vector<EigenPair> eigenpairs_near(const SpectralDecomposition& d, double energy, double radius) {
  if (!(radius > 0.0)) throw ConfigError("radius", "must be positive");
  std::vector<EigenPair> out;
  const auto lo = std::upper_bound(d.eigenvalues.begin(), d.eigenvalues.end(), energy - radius);
  for (auto it = lo; it != d.eigenvalues.end() && *it < energy + radius; ++it) {
    const auto j = static_cast<std::size_t>(it - d.eigenvalues.begin());
    const auto v = d.vector(j);
    out.push_back({j, *it, std::vector<double>(v.begin(), v.end())});
  }
  return out;
}

/// Index of the eigenvalue closest to `energy` (lowest index on ties).
inline std::size_t nearest_index(std::span<const double> values, double energy) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < values.size(); ++j)
    if (std::abs(values[j] - energy) < std::abs(values[best] - energy)) best = j;
  return best;
}

}  // namespace spectra
