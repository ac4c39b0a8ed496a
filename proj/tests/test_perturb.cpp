#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "spectra/disorder.hpp"
#include "spectra/eigen.hpp"
#include "spectra/perturb.hpp"

using namespace spectra;

namespace {

WeightField random_field(std::size_t n, std::uint64_t index) {
  return sample_weights(DisorderSpec::uniform(0.5, 1.5), n, SeedPolicy(1618), index);
}

// eigenvalue of the perturbed field closest to the unperturbed one
double tracked(const WeightField& f, double e) {
  const auto values = eigenvalues(f);
  return values[nearest_index(values, e)];
}

double fd_gradient(const WeightField& f, double e, std::size_t g, double h) {
  return (tracked(f.with_bond(g, f[g] + h), e) - tracked(f.with_bond(g, f[g] - h), e)) / (2 * h);
}

double max_abs(std::span<const double> v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST(Perturb, GroundStateGradientVanishes) {
  const auto d = decompose(random_field(20, 1));
  for (double g : gradient(d, 0)) EXPECT_NEAR(g, 0.0, 1e-28);
  const std::vector<double> u(9, 1.0 / 3.0);
  for (double g : gradient(u)) EXPECT_EQ(g, 0.0);
}

TEST(Perturb, GradientNonNegativeAndSumRule) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto f = random_field(48, s);
    const auto d = decompose(f);
    for (std::size_t j = 1; j < d.size(); ++j) {
      if (!d.is_simple(j)) continue;
      const auto g = gradient(d, j);
      for (double x : g) ASSERT_GE(x, 0.0);
      EXPECT_NEAR(sum_rule(f, g), d.eigenvalues[j], 1e-10 * d.eigenvalues[j]);
      EXPECT_LE(d.eigenvalues[j], 4 * 1.5);
    }
  }
}

TEST(Perturb, GradientMatchesCentralDifferences) {
  for (std::uint64_t s = 0; s < 6; ++s) {
    const auto f = random_field(64, 10 + s);
    const auto d = decompose(f);
    std::size_t j = 1 + (s * 17) % 63;
    while (d.gaps[j] < 1e-2) j = 1 + j % 63;
    const auto g = gradient(d, j);
    const double scale = max_abs(g);
    for (std::size_t b = 0; b < 64; ++b)
      EXPECT_NEAR(fd_gradient(f, d.eigenvalues[j], b, 1e-5), g[b], 1e-6 * scale) << "bond " << b;
  }
}

TEST(Perturb, DegenerateEigenvalueRefused) {
  const auto d = decompose(WeightField::constant(8, 1.0));
  EXPECT_THROW(gradient(d, 1), DegenerateEigenvalue);
  EXPECT_THROW(hessian(d, 1), DegenerateEigenvalue);
  try {
    gradient(d, 1);
  } catch (const DegenerateEigenvalue& e) {
    EXPECT_LT(e.gap(), e.threshold());
  }
}

TEST(Perturb, PsiOrthogonalToEigenvector) {
  const auto d = decompose(random_field(30, 3));
  for (std::size_t j : {1, 7, 29}) {
    for (std::size_t g = 0; g < 30; ++g) EXPECT_LE(std::abs(dot(psi(d.vector(j), g), d.vector(j))), 1e-12);
  }
}

TEST(Perturb, HessianSpectralSumMatchesResolventForm) {
  // -8 <R psi_g, psi_b> with R applied by a dense solve on u^perp
  const std::size_t n = 12;
  const auto f = random_field(n, 4);
  const auto d = decompose(f);
  const std::size_t j = 5;
  const auto h = hessian(d, j);
  const Matrix hm = build_matrix(f);
  const auto u = d.vector(j);
  for (std::size_t g = 0; g < n; ++g) {
    // solve (H - E + P) x = psi_g with P = u u^T; x lies in u^perp since psi_g does
    Matrix a = hm;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) a(r, c) += (r == c ? -d.eigenvalues[j] : 0.0) + u[r] * u[c];
    const auto rhs = psi(u, g);
    std::vector<double> x = rhs;
    {
      Matrix m = a;
      for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        for (std::size_t r = k + 1; r < n; ++r)
          if (std::abs(m(r, k)) > std::abs(m(p, k))) p = r;
        std::swap_ranges(m.row(k).begin(), m.row(k).end(), m.row(p).begin());
        std::swap(x[k], x[p]);
        for (std::size_t r = k + 1; r < n; ++r) {
          const double l = m(r, k) / m(k, k);
          for (std::size_t c = k; c < n; ++c) m(r, c) -= l * m(k, c);
          x[r] -= l * x[k];
        }
      }
      for (std::size_t k = n; k-- > 0;) {
        for (std::size_t c = k + 1; c < n; ++c) x[k] -= m(k, c) * x[c];
        x[k] /= m(k, k);
      }
    }
    for (std::size_t b = 0; b < n; ++b) EXPECT_NEAR(-8.0 * dot(x, psi(u, b)), h(g, b), 1e-10);
  }
}

TEST(Perturb, HessianMatchesSecondDifferences) {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const std::size_t n = 16;
    const auto f = random_field(n, 40 + s);
    const auto d = decompose(f);
    std::size_t j = 1 + (5 * s) % (n - 1);
    while (d.gaps[j] < 5e-2) j = 1 + j % (n - 1);
    const auto h = hessian(d, j);
    const double e = d.eigenvalues[j], step = 1e-3;
    const double scale = h.max_abs();
    for (std::size_t g = 0; g < n; ++g)
      for (std::size_t b = g; b < n; ++b) {
        auto shifted = [&](double sg, double sb) {
          WeightField p = f.with_bond(g, f[g] + sg);
          return tracked(p.with_bond(b, p[b] + sb), e);
        };
        const double fd = g == b ? (shifted(step, 0) - 2 * e + shifted(-step, 0)) / (step * step)
                                 : (shifted(step, step) - shifted(step, -step) - shifted(-step, step) +
                                    shifted(-step, -step)) /
                                       (4 * step * step);
        EXPECT_NEAR(fd, h(g, b), 1e-4 * scale) << g << "," << b;
        EXPECT_NEAR(h(g, b), h(b, g), 1e-12 * scale);
      }
  }
}

TEST(Perturb, HessianNormsAgree) {
  const auto d = decompose(random_field(10, 8));
  const auto h = hessian(d, 4);
  const double exact = linf_to_l1_exact(h);
  EXPECT_LE(exact, linf_to_l1_bound(h) * (1 + 1e-12));
  // any single sign vector is a lower bound
  std::vector<double> ones(10, 1.0);
  double t = 0;
  for (double v : h.multiply(ones)) t += std::abs(v);
  EXPECT_GE(exact, t * (1 - 1e-12));
}

TEST(Perturb, JacobianProperties) {
  const auto f = random_field(40, 9);
  const auto d = decompose(f);
  const std::size_t i = nearest_index(d.eigenvalues, 0.8), k = nearest_index(d.eigenvalues, 2.0);
  const auto ge = gradient(d, i), gk = gradient(d, k);
  EXPECT_EQ(jacobian2(ge, gk, 3, 3), 0.0);
  const auto nj = jacobian2_normalized(f, ge, d.eigenvalues[i], gk, d.eigenvalues[k], 3, 17);
  double s1 = 0, s2 = 0;
  for (double x : nj.row_e) s1 += x;
  for (double x : nj.row_e2) s2 += x;
  EXPECT_NEAR(s1, 1.0, 1e-10);
  EXPECT_NEAR(s2, 1.0, 1e-10);
  const double j2 = jacobian2(ge, gk, 3, 17);
  EXPECT_NEAR(nj.value(), j2, 1e-12 * std::max(1.0, std::abs(j2)));
  EXPECT_THROW(jacobian2_normalized(f, ge, 0.0, gk, 1.0, 1, 2), std::domain_error);
}

TEST(Perturb, JacobianMatchesFiniteDifferences) {
  const auto f = random_field(32, 12);
  const auto d = decompose(f);
  const std::size_t i = nearest_index(d.eigenvalues, 0.8), k = nearest_index(d.eigenvalues, 2.0);
  const auto ge = gradient(d, i), gk = gradient(d, k);
  // bonds with the largest weight in each eigenvector keep the determinant away from 0
  const std::size_t g = std::max_element(ge.begin(), ge.end()) - ge.begin();
  const std::size_t b = std::max_element(gk.begin(), gk.end()) - gk.begin();
  ASSERT_NE(g, b);
  const double h = 1e-5;
  const double fd = fd_gradient(f, d.eigenvalues[i], g, h) * fd_gradient(f, d.eigenvalues[k], b, h) -
                    fd_gradient(f, d.eigenvalues[i], b, h) * fd_gradient(f, d.eigenvalues[k], g, h);
  const double an = jacobian2(ge, gk, g, b);
  EXPECT_NEAR(fd, an, 1e-5 * std::abs(an));
}

TEST(Perturb, GradientNormVariesWithDisorder) {
  std::vector<double> norms;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto d = decompose(random_field(24, 500 + s));
    const auto g = gradient(d, nearest_index(d.eigenvalues, 1.0));
    double l1 = 0;
    for (double x : g) l1 += x;
    norms.push_back(l1);
  }
  double mean = 0, var = 0;
  for (double x : norms) mean += x / norms.size();
  for (double x : norms) var += (x - mean) * (x - mean) / (norms.size() - 1);
  EXPECT_GT(var, 0.0);
}

TEST(Perturb, SeparationOnFreeRingClosedForm) {
  const std::size_t n = 64;
  const double pi = std::numbers::pi;
  for (auto [k, k2] : {std::pair{5, 12}, {3, 20}, {1, 31}}) {
    std::vector<double> u(n), v(n);
    const double t = 2 * pi * k / n, t2 = 2 * pi * k2 / n;
    for (std::size_t x = 0; x < n; ++x) {
      u[x] = std::sqrt(2.0 / n) * std::sin(t * x);
      v[x] = std::sqrt(2.0 / n) * std::sin(t2 * x);
    }
    const double e = 4 * std::pow(std::sin(t / 2), 2), e2 = 4 * std::pow(std::sin(t2 / 2), 2);
    // (u(x) - u(x+1))^2 = (8/N) sin^2(t/2) cos^2(t(x + 1/2))
    double closed = 0;
    for (std::size_t x = 0; x < n; ++x)
      closed += std::abs(8.0 / n * (std::pow(std::sin(t / 2) * std::cos(t * (x + 0.5)), 2) -
                                    std::pow(std::sin(t2 / 2) * std::cos(t2 * (x + 0.5)), 2)));
    const auto sep = gradient_separation(u, v, e2 - e, 1.0);
    EXPECT_NEAR(sep.l1_distance, closed, 1e-12);
    EXPECT_NEAR(sep.lower_bound, std::abs(e2 - e) / std::sqrt(64.0) / 2.0, 1e-15);
    EXPECT_FALSE(sep.violated);
  }
  const std::vector<double> u(8, 1 / std::sqrt(8.0));
  EXPECT_EQ(gradient_separation(u, u, 0.0, 1.0).lower_bound, 0.0);
  EXPECT_FALSE(gradient_separation(u, u, 0.0, 1.0).violated);
}

TEST(Perturb, SystemEntries) {
  SystemCase c{CaseId::A0, 1, 1, 1, 1, 1, 1};
  EXPECT_EQ(build_system(c)(4, 2), 1.0);  // w_{n-1} + w_n - E
  c = {CaseId::A1, 0.7, 0.9, 1.1, 1.3, 2.0, 0.5};
  EXPECT_EQ(build_system(c)(9, 1), -2.0 / 0.5);
}

TEST(Perturb, DeterminantClosedForms) {
  RandomStream r(77);
  for (CaseId id : {CaseId::A0, CaseId::A1, CaseId::A2, CaseId::A3}) {
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      SystemCase c{id, r.uniform(0.5, 1.5), r.uniform(0.5, 1.5), r.uniform(0.5, 1.5), r.uniform(0.5, 1.5),
                   r.uniform(0.2, 4.0), r.uniform(0.2, 4.0)};
      const double lu = std::abs(determinant(build_system(c)));
      const double cf = det_factored(c);
      worst = std::max(worst, std::abs(lu - cf) / std::max(cf, 1e-300));
    }
    EXPECT_LE(worst, 1e-9) << to_string(id);
  }
}

TEST(Perturb, DeterminantZeroFactors) {
  RandomStream r(78);
  for (int i = 0; i < 200; ++i) {
    const double a = r.uniform(0.5, 1.5), b = r.uniform(0.5, 1.5), d = r.uniform(0.5, 1.5);
    const double e2 = r.uniform(0.2, 2.0), e = e2 + r.uniform(0.2, 2.0);  // E > E'
    const double c = (e - e2) / 4;
    const double scale = 4 * e / e2 * (e + e2) * a * d * std::max(c, 1.0);
    EXPECT_LE(std::abs(determinant(build_system({CaseId::A0, a, b, c, d, e, e2}))), 1e-10 * scale);
    EXPECT_LE(std::abs(determinant(build_system({CaseId::A2, a, b, c, d, e, e2}))), 1e-10 * scale);
    EXPECT_LE(std::abs(determinant(build_system({CaseId::A3, a, b, c, d, e, e2}))), 1e-10 * scale);
    EXPECT_LE(std::abs(determinant(build_system({CaseId::A3, a, (e - e2) / 4, b, d, e, e2}))), 1e-10 * scale);
    EXPECT_EQ(det_factored({CaseId::A0, a, b, c, d, e, e2}), 0.0);
    const double c1 = (e + e2) * (e + e2) / (4 * b);
    const double scale1 = 4 * e / e2 * a * d * (b * c1);
    EXPECT_LE(std::abs(determinant(build_system({CaseId::A1, a, b, c1, d, e, e2}))), 1e-10 * scale1);
  }
  EXPECT_THROW(det_factored({CaseId::A0, 1, 1, 1, 1, 1, 0}), std::domain_error);
  EXPECT_THROW(det_factored({CaseId::A1, 1, 1, 1, 1, 1, 0}), std::domain_error);
}
