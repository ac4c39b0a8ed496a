#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spectra/eigen.hpp"
#include "spectra/errors.hpp"
#include "spectra/linalg.hpp"
#include "spectra/operator.hpp"
#include "spectra/weight_field.hpp"

namespace spectra {

/// dE/dw_g = 2 <Pi_g u, u> = (u(g) - u(g+1))^2 for a normalized eigenvector u.
inline std::vector<double> gradient(std::span<const double> u) {
  const std::size_t n = u.size();
  std::vector<double> g(n);
  for (std::size_t b = 0; b < n; ++b) {
    const double d = u[b] - u[(b + 1) % n];
    g[b] = d * d;
  }
  return g;
}

inline void require_simple(const SpectralDecomposition& d, std::size_t index) {
  if (!d.is_simple(index)) throw DegenerateEigenvalue(d.gaps[index], d.degeneracy_threshold());
}

/// Gradient of eigenvalue `index`; refuses degenerate eigenvalues.
inline std::vector<double> gradient(const SpectralDecomposition& d, std::size_t index) {
  require_simple(d, index);
  return gradient(d.vector(index));
}

/// sum_g w_g dE/dw_g, which equals E.
inline double sum_rule(const WeightField& field, std::span<const double> grad) {
  double s = 0.0;
  for (std::size_t g = 0; g < grad.size(); ++g) s += field[g] * grad[g];
  return s;
}

/// psi_g = <Pi_g u, u> u - Pi_g u, orthogonal to u.
inline std::vector<double> psi(std::span<const double> u, std::size_t bond) {
  const BondProjection p(bond, u.size());
  auto out = p.apply(u);
  const double c = p.expectation(u);
  for (std::size_t k = 0; k < u.size(); ++k) out[k] = c * u[k] - out[k];
  return out;
}

/// Second derivatives of eigenvalue `index`:
///   h_{gb} = -8 <R psi_g, psi_b>,  R the reduced resolvent (H - E)^-1 on u^perp.
/// With d_v(g) = v(g) - v(g+1) the spectral sum reads
///   h_{gb} = -2 sum_{j != n} d_u(g) d_j(g) d_u(b) d_j(b) / (E_j - E_n).
inline Matrix hessian(const SpectralDecomposition& d, std::size_t index) {
  require_simple(d, index);
  const std::size_t n = d.size();
  const auto u = d.vector(index);
  const double e = d.eigenvalues[index];
  std::vector<double> du(n);
  for (std::size_t g = 0; g < n; ++g) du[g] = u[g] - u[(g + 1) % n];
  Matrix h(n, n);
  std::vector<double> a(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (j == index) continue;
    const auto v = d.vector(j);
    for (std::size_t g = 0; g < n; ++g) a[g] = du[g] * (v[g] - v[(g + 1) % n]);
    const double c = -2.0 / (d.eigenvalues[j] - e);
    for (std::size_t g = 0; g < n; ++g) {
      const double cg = c * a[g];
      if (cg == 0.0) continue;
      double* row = &h(g, 0);
      for (std::size_t b = 0; b < n; ++b) row[b] += cg * a[b];
    }
  }
  for (std::size_t g = 0; g < n; ++g)
    for (std::size_t b = 0; b < g; ++b) h(g, b) = h(b, g) = 0.5 * (h(g, b) + h(b, g));
  return h;
}

/// Upper bound sum_{g,b} |h_{gb}| on the l-inf -> l1 operator norm.
inline double linf_to_l1_bound(const Matrix& h) {
  double s = 0.0;
  for (double x : h.data()) s += std::abs(x);
  return s;
}

/// Exact l-inf -> l1 norm, max over sign vectors of ||h x||_1. Exponential;
/// only for n <= 24.
inline double linf_to_l1_exact(const Matrix& h) {
  const std::size_t n = h.cols();
  if (n > 24) throw ConfigError("hessian", "exact l-inf -> l1 norm limited to 24 bonds");
  double best = 0.0;
  std::vector<double> hx(h.rows());
  // x and -x give the same value, so fix the last sign
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << (n - 1)); ++mask) {
    std::fill(hx.begin(), hx.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double s = (j + 1 < n && (mask >> j) & 1) ? -1.0 : 1.0;
      for (std::size_t i = 0; i < h.rows(); ++i) hx[i] += s * h(i, j);
    }
    double t = 0.0;
    for (double v : hx) t += std::abs(v);
    best = std::max(best, t);
  }
  return best;
}

/// det [[dE/dw_g, dE/dw_g'], [dE'/dw_g, dE'/dw_g']].
inline double jacobian2(std::span<const double> grad_e, std::span<const double> grad_e2, std::size_t g,
                        std::size_t g2) {
  return grad_e[g] * grad_e2[g2] - grad_e[g2] * grad_e2[g];
}

/// w_g dE/dw_g / E over all bonds; sums to 1.
inline std::vector<double> normalized_gradient(const WeightField& field, std::span<const double> grad, double e) {
  if (e == 0.0) throw std::domain_error("normalized gradient needs a nonzero eigenvalue");
  std::vector<double> out(grad.size());
  for (std::size_t g = 0; g < grad.size(); ++g) out[g] = field[g] * grad[g] / e;
  return out;
}

/// Jacobian written as prefactor E E' / (w_g w_g') times the determinant of
/// the normalized 2x2 block, whose full rows each sum to 1.
struct NormalizedJacobian {
  double prefactor = 0.0;
  double normalized_det = 0.0;
  std::vector<double> row_e;   // w_g dE/dw_g / E, all bonds
  std::vector<double> row_e2;  // same for E'
  double value() const noexcept { return prefactor * normalized_det; }
};

inline NormalizedJacobian jacobian2_normalized(const WeightField& field, std::span<const double> grad_e, double e,
                                               std::span<const double> grad_e2, double e2, std::size_t g,
                                               std::size_t g2) {
  NormalizedJacobian j;
  j.row_e = normalized_gradient(field, grad_e, e);
  j.row_e2 = normalized_gradient(field, grad_e2, e2);
  j.prefactor = e * e2 / (field[g] * field[g2]);
  j.normalized_det = j.row_e[g] * j.row_e2[g2] - j.row_e[g2] * j.row_e2[g];
  return j;
}

struct Separation {
  double l1_distance = 0.0;
  double lower_bound = 0.0;
  bool violated = false;
};

/// ||grad E - grad E'||_1 against delta_e |Lambda|^{-1/2} / (2 beta0);
/// delta_e is the separation of the reference energies.
inline Separation gradient_separation(std::span<const double> u, std::span<const double> v, double delta_e,
                                      double beta0) {
  const auto ge = gradient(u), gv = gradient(v);
  Separation s;
  for (std::size_t g = 0; g < ge.size(); ++g) s.l1_distance += std::abs(ge[g] - gv[g]);
  s.lower_bound = std::abs(delta_e) / std::sqrt(static_cast<double>(u.size())) / (2.0 * beta0);
  s.violated = s.l1_distance < s.lower_bound;
  return s;
}

enum class CaseId { A0, A1, A2, A3 };

inline const char* to_string(CaseId c) noexcept {
  switch (c) {
    case CaseId::A0: return "A0";
    case CaseId::A1: return "A1";
    case CaseId::A2: return "A2";
    case CaseId::A3: return "A3";
  }
  return "?";
}

/// Parameters of a local 10x10 system around site n. Unknowns are
/// u(n-2..n+2) followed by v(n-2..n+2); e2 is E'.
struct SystemCase {
  CaseId id = CaseId::A0;
  double w_m2 = 1.0;  // w_{n-2}
  double w_m1 = 1.0;  // w_{n-1}
  double w_0 = 1.0;   // w_n
  double w_p1 = 1.0;  // w_{n+1}
  double e = 1.0;
  double e2 = 1.0;
};

inline Matrix build_system(const SystemCase& s) {
  const double a = s.w_m2, b = s.w_m1, c = s.w_0, d = s.w_p1, E = s.e, F = s.e2;
  using Row = std::array<double, 10>;
  std::array<Row, 10> m{};
  switch (s.id) {
    case CaseId::A0:
      m = {{{1, -1, 0, 0, 0, 1, -1, 0, 0, 0},
            {0, 1, -1, 0, 0, 0, 1, -1, 0, 0},
            {0, 0, 1, -1, 0, 0, 0, 1, -1, 0},
            {0, 0, 0, 1, -1, 0, 0, 0, -1, 1},
            {0, -b, b + c - E, -c, 0, 0, 0, 0, 0, 0},
            {0, 0, E / F, 0, 0, 0, 0, -1, 0, 0},
            {0, 0, -c, c + d - E, -d, 0, 0, 0, 0, 0},
            {0, 0, c, d - c, -d, 0, 0, 0, F, 0},
            {-a, a + b - E, -b, 0, 0, 0, 0, 0, 0, 0},
            {0, E / F, 0, 0, 0, 0, -1, 0, 0, 0}}};
      break;
    case CaseId::A1:
      m = {{{1, -1, 0, 0, 0, -1, 1, 0, 0, 0},
            {0, 1, -1, 0, 0, 0, -1, 1, 0, 0},
            {0, 0, 1, -1, 0, 0, 0, 1, -1, 0},
            {0, 0, 0, 1, -1, 0, 0, 0, 1, -1},
            {0, -b, b + c - E, -c, 0, 0, 0, 0, 0, 0},
            {0, b, c - b, -c, 0, 0, 0, -F, 0, 0},
            {0, 0, -c, c + d - E, -d, 0, 0, 0, 0, 0},
            {0, 0, 0, E / F, 0, 0, 0, 0, -1, 0},
            {-a, a + b - E, -b, 0, 0, 0, 0, 0, 0, 0},
            {0, -E / F, 0, 0, 0, 0, -1, 0, 0, 0}}};
      break;
    case CaseId::A2:
      m = {{{1, -1, 0, 0, 0, -1, 1, 0, 0, 0},
            {0, 1, -1, 0, 0, 0, -1, 1, 0, 0},
            {0, 0, 1, -1, 0, 0, 0, 1, -1, 0},
            {0, 0, 0, 1, -1, 0, 0, 0, -1, 1},
            {0, -b, b + c - E, -c, 0, 0, 0, 0, 0, 0},
            {0, b, c - b, -c, 0, 0, 0, -F, 0, 0},
            {0, 0, -c, c + d - E, -d, 0, 0, 0, 0, 0},
            {0, 0, -c, c - d, d, 0, 0, 0, -F, 0},
            {-a, a + b - E, -b, 0, 0, 0, 0, 0, 0, 0},
            {0, -E / F, 0, 0, 0, 0, -1, 0, 0, 0}}};
      break;
    case CaseId::A3:
      m = {{{1, -1, 0, 0, 0, -1, 1, 0, 0, 0},
            {0, 1, -1, 0, 0, 0, 1, -1, 0, 0},
            {0, 0, 1, -1, 0, 0, 0, -1, 1, 0},
            {0, 0, 0, 1, -1, 0, 0, 0, 1, -1},
            {0, -b, b + c - E, -c, 0, 0, 0, 0, 0, 0},
            {0, -b, b - c, c, 0, 0, 0, -F, 0, 0},
            {0, 0, -c, c + d - E, -d, 0, 0, 0, 0, 0},
            {0, 0, c, d - c, -d, 0, 0, 0, -F, 0},
            {-a, a + b - E, -b, 0, 0, 0, 0, 0, 0, 0},
            {a, b - a, -b, 0, 0, 0, -F, 0, 0, 0}}};
      break;
  }
  Matrix out(10, 10);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) out(i, j) = m[i][j];
  return out;
}

/// Closed-form |det| of build_system(s).
inline double det_factored(const SystemCase& s) {
  const double a = s.w_m2, b = s.w_m1, c = s.w_0, d = s.w_p1, E = s.e, F = s.e2;
  switch (s.id) {
    case CaseId::A0:
      if (F == 0.0) throw std::domain_error("A0 needs E' != 0");
      return std::abs(4.0 * E / F * (E + F) * a * d * (c + (F - E) / 4.0));
    case CaseId::A1:
      if (F == 0.0) throw std::domain_error("A1 needs E' != 0");
      return std::abs(4.0 * E / F * a * d * (b * c - (E + F) * (E + F) / 4.0));
    case CaseId::A2:
      return std::abs(4.0 * E * (E + F) * a * d * (c + (F - E) / 4.0));
    case CaseId::A3:
      return std::abs(E * F * a * d * (4.0 * b + F - E) * (F - E + 4.0 * c));
  }
  return 0.0;
}

}  // namespace spectra
