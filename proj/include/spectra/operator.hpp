#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "spectra/errors.hpp"
#include "spectra/linalg.hpp"
#include "spectra/weight_field.hpp"

namespace spectra {

/// Dense periodic ring matrix: diagonal w[n-1] + w[n], off-diagonals -w[n]
/// between n and n+1, corners -w[N-1].
inline Matrix build_matrix(const WeightField& field) {
  const std::size_t n = field.n_sites();
  Matrix h(n, n);
  for (std::size_t g = 0; g < n; ++g) {
    const std::size_t a = g, b = (g + 1) % n;
    const double w = field[g];
    h(a, a) += w;
    h(b, b) += w;
    h(a, b) -= w;
    h(b, a) -= w;
  }
  return h;
}

/// Matrix-free H u.
inline std::vector<double> apply(const WeightField& field, std::span<const double> u) {
  const std::size_t n = field.n_sites();
  if (u.size() != n) throw ConfigError("u", "length does not match the number of sites");
  std::vector<double> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t next = s + 1 == n ? 0 : s + 1;
    const std::size_t prev = s == 0 ? n - 1 : s - 1;
    out[s] = field[s] * (u[s] - u[next]) + field[prev] * (u[s] - u[prev]);
  }
  return out;
}

/// <Hu, u> = sum_g w_g (u(g) - u(g+1))^2.
inline double quadratic_form(const WeightField& field, std::span<const double> u) {
  const std::size_t n = field.n_sites();
  double s = 0.0;
  for (std::size_t g = 0; g < n; ++g) {
    const double d = u[g] - u[(g + 1) % n];
    s += field[g] * d * d;
  }
  return s;
}

/// Pi_g = 1/2 |d_g - d_{g+1}><d_g - d_{g+1}|, the rank-one piece of H on bond g.
class BondProjection {
 public:
  BondProjection(std::size_t bond, std::size_t n_sites) : bond_(bond), n_(n_sites) {}

  std::size_t bond() const noexcept { return bond_; }
  std::size_t dimension() const noexcept { return n_; }
  std::size_t first() const noexcept { return bond_; }
  std::size_t second() const noexcept { return (bond_ + 1) % n_; }

  /// (u(g) - u(g+1)); Pi u = difference / 2 * (d_g - d_{g+1}).
  double difference(std::span<const double> u) const { return u[first()] - u[second()]; }

  std::vector<double> apply(std::span<const double> u) const {
    std::vector<double> out(n_, 0.0);
    const double c = 0.5 * difference(u);
    out[first()] += c;
    out[second()] -= c;
    return out;
  }

  /// <Pi u, u> = (u(g) - u(g+1))^2 / 2.
  double expectation(std::span<const double> u) const {
    const double d = difference(u);
    return 0.5 * d * d;
  }

  Matrix dense() const {
    Matrix p(n_, n_);
    p(first(), first()) += 0.5;
    p(second(), second()) += 0.5;
    p(first(), second()) -= 0.5;
    p(second(), first()) -= 0.5;
    return p;
  }

 private:
  std::size_t bond_;
  std::size_t n_;
};

/// Propagates v(n-1) = (u(n), u(n-1)) to v(n) = (u(n+1), u(n)).
struct TransferMatrix {
  std::array<std::array<double, 2>, 2> m{};

  std::array<double, 2> operator*(const std::array<double, 2>& v) const {
    return {m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]};
  }
  double determinant() const { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }
  double frobenius() const {
    return std::sqrt(m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]);
  }
};

/// T(n, E) = [[(w_n + w_{n-1} - E)/w_n, -w_{n-1}/w_n], [1, 0]].
inline TransferMatrix transfer_matrix(const WeightField& field, std::size_t n, double energy) {
  const double wn = field[n % field.n_sites()];
  if (wn == 0.0) throw SingularBond(n % field.n_sites());
  const double wp = field.weight(static_cast<std::ptrdiff_t>(n) - 1);
  TransferMatrix t;
  t.m = {{{(wn + wp - energy) / wn, -wp / wn}, {1.0, 0.0}}};
  return t;
}

/// C = max(||T||_F, ||T^-1||_F) with every entry replaced by its supremum
/// over w, w' in [alpha0, beta0] and E in [e_lo, e_hi]. The diagonal-type
/// entry (w + w' - E)/w is monotone in each variable, so corners suffice;
/// T^-1 = [[0, 1], [-w_n/w_{n-1}, (w_n + w_{n-1} - E)/w_{n-1}]] has the
/// same entry sups, so both norms coincide. Returns eta = log C.
inline double growth_constant(double alpha0, double beta0, double e_lo, double e_hi) {
  if (!(alpha0 > 0.0)) throw ConfigError("alpha0", "transfer matrices are unbounded when alpha0 = 0");
  if (beta0 < alpha0) throw ConfigError("beta0", "must be at least alpha0");
  if (e_hi < e_lo) throw ConfigError("energy window", "upper end below lower end");
  double diag = 0.0;
  for (double a : {alpha0, beta0})
    for (double b : {alpha0, beta0})
      for (double e : {e_lo, e_hi}) diag = std::max(diag, std::abs((a + b - e) / a));
  const double ratio = beta0 / alpha0;
  return std::log(std::sqrt(diag * diag + ratio * ratio + 1.0));
}

/// Default window [0, 4 beta0].
inline double growth_constant(double alpha0, double beta0) {
  return growth_constant(alpha0, beta0, 0.0, 4.0 * beta0);
}

struct WindowCheck {
  std::size_t k0 = 0;         // argmax of u(k)^2 + u(k+1)^2
  std::size_t halfwidth = 0;
  double threshold = 0.0;     // exp(-L^beta / 2)
  double min_mass = 0.0;      // smallest u(k)^2 + u(k+1)^2 inside the window
  bool verified = false;
};

namespace detail {

inline WindowCheck check_window(std::span<const double> u, std::size_t halfwidth, double threshold) {
  const std::size_t n = u.size();
  WindowCheck out;
  out.halfwidth = halfwidth;
  out.threshold = threshold;
  auto mass = [&](std::size_t k) { return u[k] * u[k] + u[k + 1] * u[k + 1]; };
  double best = -1.0;
  for (std::size_t k = 0; k + 1 < n; ++k)
    if (mass(k) > best) {
      best = mass(k);
      out.k0 = k;
    }
  const std::size_t lo = out.k0 >= halfwidth ? out.k0 - halfwidth : 0;
  const std::size_t hi = std::min(n - 2, out.k0 + halfwidth);
  out.min_mass = best;
  for (std::size_t k = lo; k <= hi; ++k) out.min_mass = std::min(out.min_mass, mass(k));
  out.verified = out.min_mass >= threshold;
  return out;
}

}  // namespace detail

/// Checks u(k)^2 + u(k+1)^2 >= exp(-L^beta/2) for |k - k0| <= floor(L^beta / (8 eta)),
/// L = (N-1)/2. The window is clipped to interior pairs (k, k+1) and never
/// wraps the periodic seam.
inline WindowCheck lower_bound_window(std::span<const double> u, double beta, double eta) {
  if (!(beta > 0.5 && beta < 1.0)) throw ConfigError("beta", "must lie in (1/2, 1)");
  if (!(eta > 0.0)) throw ConfigError("eta", "must be positive");
  const double L = 0.5 * static_cast<double>(u.size() - 1);
  const double lb = std::pow(L, beta);
  const auto halfwidth = static_cast<std::size_t>(std::floor(lb / (8.0 * eta)));
  return detail::check_window(u, halfwidth, std::exp(-0.5 * lb));
}

/// Heavy-tail variant: halfwidth floor(L^(beta - epsilon) / 4), same threshold.
inline WindowCheck lower_bound_window_heavy(std::span<const double> u, double beta, double epsilon) {
  if (!(beta > 0.5 && beta < 1.0)) throw ConfigError("beta", "must lie in (1/2, 1)");
  if (!(epsilon > 0.0 && epsilon < beta)) throw ConfigError("epsilon", "must lie in (0, beta)");
  const double L = 0.5 * static_cast<double>(u.size() - 1);
  const auto halfwidth = static_cast<std::size_t>(std::floor(0.25 * std::pow(L, beta - epsilon)));
  return detail::check_window(u, halfwidth, std::exp(-0.5 * std::pow(L, beta)));
}

}  // namespace spectra
