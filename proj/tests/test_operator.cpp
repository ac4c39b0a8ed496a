#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "spectra/disorder.hpp"
#include "spectra/eigen.hpp"
#include "spectra/operator.hpp"

using namespace spectra;

namespace {

WeightField random_field(std::size_t n, std::uint64_t index, double lo = 0.5, double hi = 1.5) {
  return sample_weights(DisorderSpec::uniform(lo, hi), n, SeedPolicy(314), index);
}

std::vector<double> random_vector(std::size_t n, std::uint64_t key) {
  RandomStream r(key);
  std::vector<double> u(n);
  for (double& x : u) x = r.uniform(-1.0, 1.0);
  return u;
}

}  // namespace

TEST(Operator, ThreeSiteRing) {
  const Matrix h = build_matrix(WeightField::constant(3, 1.0));
  const double want[3][3] = {{2, -1, -1}, {-1, 2, -1}, {-1, -1, 2}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(h(i, j), want[i][j]);
}

TEST(Operator, FillInFollowsBondConvention) {
  const WeightField f({1.0, 2.0, 3.0, 4.0, 5.0});
  const Matrix h = build_matrix(f);
  EXPECT_EQ(h(0, 0), 5.0 + 1.0);
  EXPECT_EQ(h(2, 2), 2.0 + 3.0);
  EXPECT_EQ(h(1, 2), -2.0);
  EXPECT_EQ(h(0, 4), -5.0);
  EXPECT_EQ(h(4, 0), -5.0);
  EXPECT_EQ(h(0, 2), 0.0);
}

TEST(Operator, SymmetricKernelAndQuadraticForm) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const std::size_t n = 3 + s % 40;
    const auto f = random_field(n, s);
    const Matrix h = build_matrix(f);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(h(i, j), h(j, i));
    const auto k = spectra::apply(f, std::vector<double>(n, 1.0));
    for (double x : k) EXPECT_NEAR(x, 0.0, 1e-14);
    const auto u = random_vector(n, s);
    const double q = quadratic_form(f, u);
    EXPECT_GE(q, 0.0);
    EXPECT_NEAR(dot(h.multiply(u), u), q, 1e-12 * std::max(1.0, q));
  }
}

TEST(Operator, ApplyMatchesDense) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const std::size_t n = 3 + 7 * s;
    const auto f = random_field(n, 100 + s);
    const auto u = random_vector(n, s);
    const auto a = spectra::apply(f, u);
    const auto b = build_matrix(f).multiply(u);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i) {
      num = std::max(num, std::abs(a[i] - b[i]));
      den = std::max(den, std::abs(b[i]));
    }
    EXPECT_LE(num, 1e-13 * den);
  }
  EXPECT_THROW(spectra::apply(random_field(5, 0), std::vector<double>(4, 0.0)), ConfigError);
}

TEST(Operator, FirstColumnOfFreeRing) {
  std::vector<double> e0(7, 0.0);
  e0[0] = 1.0;
  const auto r = spectra::apply(WeightField::constant(7, 1.0), e0);
  const std::vector<double> want = {2, -1, 0, 0, 0, 0, -1};
  EXPECT_EQ(r, want);
}

TEST(Operator, SumOfBondProjections) {
  const auto f = random_field(12, 5);
  const Matrix h = build_matrix(f);
  Matrix acc(12, 12);
  for (std::size_t g = 0; g < 12; ++g) {
    const Matrix p = BondProjection(g, 12).dense();
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = 0; j < 12; ++j) acc(i, j) += 2.0 * f[g] * p(i, j);
  }
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(acc(i, j), h(i, j), 1e-13);
}

TEST(Operator, BondProjectionIsOrthogonalProjector) {
  const std::size_t n = 9;
  for (std::size_t g = 0; g < n; ++g) {
    const BondProjection p(g, n);
    const auto u = random_vector(n, g), v = random_vector(n, 50 + g);
    const auto pu = p.apply(u);
    const auto ppu = p.apply(pu);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(ppu[i], pu[i], 1e-13);
    EXPECT_NEAR(dot(pu, v), dot(u, p.apply(v)), 1e-13);
    const Matrix d = p.dense();
    double trace = 0;
    for (std::size_t i = 0; i < n; ++i) trace += d(i, i);
    EXPECT_DOUBLE_EQ(trace, 1.0);
    EXPECT_NEAR(p.expectation(u), dot(pu, u), 1e-14);
  }
}

TEST(Operator, TransferMatrixExamples) {
  const auto one = WeightField::constant(8, 1.0);
  auto t = transfer_matrix(one, 3, 0.0);
  EXPECT_EQ(t.m[0][0], 2.0);
  EXPECT_EQ(t.m[0][1], -1.0);
  const auto v = t * std::array<double, 2>{1.0, 1.0};
  EXPECT_EQ(v[0], 1.0);
  EXPECT_EQ(v[1], 1.0);
  t = transfer_matrix(one, 3, 2.0);
  EXPECT_EQ(t.m[0][0], 0.0);
  EXPECT_EQ(t.m[0][1], -1.0);
  EXPECT_EQ(t.m[1][0], 1.0);
  EXPECT_EQ(t.m[1][1], 0.0);
  const WeightField f({1.0, 0.0, 2.0, 3.0});
  EXPECT_THROW(transfer_matrix(f, 1, 0.5), SingularBond);
  EXPECT_DOUBLE_EQ(transfer_matrix(f, 3, 0.5).determinant(), 2.0 / 3.0);
}

TEST(Operator, TransferPropagatesEigenvectors) {
  const std::size_t n = 128;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto f = random_field(n, 200 + s);
    const auto d = decompose(f);
    const std::size_t j = nearest_index(d.eigenvalues, 1.0);
    const auto u = d.vector(j);
    const double e = d.eigenvalues[j];
    double umax = 0;
    for (double x : u) umax = std::max(umax, std::abs(x));
    // single steps at every interior site
    for (std::size_t m = 1; m + 1 < n; ++m) {
      const auto w = transfer_matrix(f, m, e) * std::array<double, 2>{u[m], u[m - 1]};
      ASSERT_NEAR(w[0], u[m + 1], 1e-10) << m;
      ASSERT_NEAR(w[1], u[m], 1e-15);
    }
    // one 50-site run from the localization center outward
    std::size_t c = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (std::abs(u[k]) > std::abs(u[c])) c = k;
    const std::size_t start = std::clamp<std::size_t>(c, 1, n - 52);
    std::array<double, 2> v{u[start], u[start - 1]};
    for (std::size_t m = start; m < start + 50; ++m) {
      v = transfer_matrix(f, m, e) * v;
      ASSERT_NEAR(v[0], u[m + 1], 1e-8 * umax) << "step " << m - start;
    }
  }
}

TEST(Operator, GrowthConstant) {
  EXPECT_NEAR(growth_constant(1.0, 1.0, 0.0, 0.0), std::log(std::sqrt(6.0)), 1e-15);
  // |2 - E| <= 2 on [0, 4] as well
  EXPECT_NEAR(growth_constant(1.0, 1.0), std::log(std::sqrt(6.0)), 1e-15);
  const double wide = growth_constant(0.5, 1.5);
  EXPECT_TRUE(std::isfinite(wide));
  EXPECT_GT(wide, growth_constant(1.0, 1.0));
  EXPECT_THROW(growth_constant(0.0, 1.0), ConfigError);
}

TEST(Operator, GrowthConstantBoundsSampledMatrices) {
  const double alpha0 = 0.5, beta0 = 1.5;
  const double c = std::exp(growth_constant(alpha0, beta0));
  RandomStream r(8);
  for (int i = 0; i < 20000; ++i) {
    const WeightField f({r.uniform(alpha0, beta0), r.uniform(alpha0, beta0), 1.0});
    const double e = r.uniform(0.0, 4 * beta0);
    const auto t = transfer_matrix(f, 1, e);
    TransferMatrix inv;
    const double det = t.determinant();
    inv.m = {{{t.m[1][1] / det, -t.m[0][1] / det}, {-t.m[1][0] / det, t.m[0][0] / det}}};
    ASSERT_LE(t.frobenius(), c * (1 + 1e-12));
    ASSERT_LE(inv.frobenius(), c * (1 + 1e-12));
  }
}

TEST(Operator, LowerBoundWindowConstantVector) {
  const std::size_t n = 101;
  const std::vector<double> u(n, 1.0 / std::sqrt(static_cast<double>(n)));
  const double eta = growth_constant(1.0, 1.0);
  const auto w = lower_bound_window(u, 0.6, eta);
  EXPECT_TRUE(w.verified);
  EXPECT_EQ(w.halfwidth, static_cast<std::size_t>(std::floor(std::pow(50.0, 0.6) / (8 * eta))));
  EXPECT_NEAR(w.min_mass, 2.0 / n, 1e-15);
  EXPECT_NEAR(w.threshold, std::exp(-0.5 * std::pow(50.0, 0.6)), 1e-15);
  const auto h = lower_bound_window_heavy(u, 0.75, 0.25);
  EXPECT_EQ(h.halfwidth, static_cast<std::size_t>(std::floor(0.25 * std::pow(50.0, 0.5))));
  EXPECT_TRUE(h.verified);
}

TEST(Operator, LowerBoundWindowDetectsHole) {
  std::vector<double> u(41, 0.0);
  u[20] = 1.0;  // u(k)^2 + u(k+1)^2 vanishes two pairs away from the peak
  const auto w = lower_bound_window_heavy(u, 0.9, 0.1);
  ASSERT_GE(w.halfwidth, 2u);
  EXPECT_FALSE(w.verified);
  EXPECT_EQ(w.min_mass, 0.0);
}

TEST(Operator, LowerBoundWindowOnLocalizedStates) {
  const std::size_t n = 257;  // L = 128
  const double eta = growth_constant(0.5, 1.5);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto f = random_field(n, 300 + s);
    const auto d = decompose(f);
    const auto w = lower_bound_window(d.vector(nearest_index(d.eigenvalues, 1.0)), 0.6, eta);
    EXPECT_TRUE(w.verified) << s;
  }
}
