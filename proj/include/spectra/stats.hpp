#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "spectra/disorder.hpp"
#include "spectra/eigen.hpp"
#include "spectra/errors.hpp"
#include "spectra/parallel.hpp"
#include "spectra/seed.hpp"

namespace spectra {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline constexpr double kWilsonZ95 = 1.959964;

/// Wilson score interval for `successes` out of `trials`.
inline Interval wilson_interval(std::uint64_t successes, std::uint64_t trials, double z = kWilsonZ95) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2 * n)) / denom;
  const double half = z / denom * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n));
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

inline double poisson_pmf(unsigned k, double mean) {
  if (mean == 0.0) return k == 0 ? 1.0 : 0.0;
  return std::exp(k * std::log(mean) - mean - std::lgamma(k + 1.0));
}

/// Averaged eigenvalue counting function and smoothed density of states.
struct DosEstimate {
  std::vector<double> grid;
  std::vector<double> n_hat;
  std::vector<double> nu_hat;
  std::size_t n_samples = 0;
  std::size_t n_sites = 0;
  double bandwidth = 0.0;
  double upper = 0.0;           // 4 beta0
  std::vector<double> pooled;   // all eigenvalues, sorted, clamped to [0, upper]

  /// Mean fraction of eigenvalues <= e; no smoothing.
  double n_at(double e) const {
    if (pooled.empty()) return 0.0;
    const auto c = std::upper_bound(pooled.begin(), pooled.end(), e) - pooled.begin();
    return static_cast<double>(c) / static_cast<double>(pooled.size());
  }

  /// Gaussian kernel estimate at e, reflected at 0 and at 4 beta0 so no mass
  /// leaks out of the spectrum's range.
  double nu_at(double e) const {
    if (e < 0.0 || e > upper || pooled.empty()) return 0.0;
    const double h = bandwidth, cut = 8.0 * h;
    const double norm = 1.0 / (h * std::sqrt(2.0 * std::numbers::pi) * static_cast<double>(pooled.size()));
    double s = 0.0;
    auto add_range = [&](double center) {
      auto lo = std::lower_bound(pooled.begin(), pooled.end(), center - cut);
      auto hi = std::upper_bound(pooled.begin(), pooled.end(), center + cut);
      for (auto it = lo; it != hi; ++it) {
        const double z = (center - *it) / h;
        s += std::exp(-0.5 * z * z);
      }
    };
    add_range(e);
    add_range(-e);               // mirror image across 0
    add_range(2.0 * upper - e);  // mirror image across 4 beta0
    return s * norm;
  }
};

/// Silverman's rule 0.9 min(sd, IQR/1.34) n^{-1/5} on pooled eigenvalues.
inline double silverman_bandwidth(std::span<const double> sorted) {
  const std::size_t n = sorted.size();
  if (n < 2) throw ConfigError("bandwidth", "need at least two eigenvalues");
  double mean = 0.0;
  for (double x : sorted) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : sorted) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(n - 1));
  const double iqr = sorted[(3 * n) / 4] - sorted[n / 4];
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd > 0.0 ? sd : 1.0;
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

/// Default kernel bandwidth 4 beta0 N^{-1/3}.
inline double default_bandwidth(double beta0, std::size_t n_sites) {
  return 4.0 * beta0 * std::pow(static_cast<double>(n_sites), -1.0 / 3.0);
}

/// Kernel bandwidth: a fixed value, the default rule, or Silverman's rule.
struct Bandwidth {
  enum class Rule { Default, Silverman, Fixed };
  Rule rule = Rule::Default;
  double value = 0.0;

  Bandwidth() = default;
  Bandwidth(double h) : rule(Rule::Fixed), value(h) {
    if (!(h > 0.0)) throw ConfigError("bandwidth", "must be positive");
  }
  Bandwidth(std::nullopt_t) {}
  static Bandwidth silverman() {
    Bandwidth b;
    b.rule = Rule::Silverman;
    return b;
  }
};

/// Builds the estimate from per-sample spectra.
inline DosEstimate dos_from_spectra(const std::vector<std::vector<double>>& spectra, double beta0,
                                    Bandwidth bandwidth = {}, std::size_t grid_points = 401) {
  if (spectra.empty()) throw ConfigError("n_samples", "must be at least 1");
  if (grid_points < 2) throw ConfigError("grid_points", "must be at least 2");
  DosEstimate d;
  d.n_samples = spectra.size();
  d.n_sites = spectra.front().size();
  d.upper = 4.0 * beta0;
  for (const auto& s : spectra)
    for (double e : s) d.pooled.push_back(std::clamp(e, 0.0, d.upper));
  std::sort(d.pooled.begin(), d.pooled.end());
  switch (bandwidth.rule) {
    case Bandwidth::Rule::Fixed: d.bandwidth = bandwidth.value; break;
    case Bandwidth::Rule::Silverman: d.bandwidth = silverman_bandwidth(d.pooled); break;
    case Bandwidth::Rule::Default: d.bandwidth = default_bandwidth(beta0, d.n_sites); break;
  }
  d.grid.resize(grid_points);
  d.n_hat.resize(grid_points);
  d.nu_hat.resize(grid_points);
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double e = d.upper * static_cast<double>(i) / static_cast<double>(grid_points - 1);
    d.grid[i] = e;
    d.n_hat[i] = d.n_at(e);
    d.nu_hat[i] = d.nu_at(e);
  }
  return d;
}

/// Monte Carlo estimate over `n_samples` rings of `n_sites` sites drawn in
/// `domain` (Calibration by default, so it never reuses measurement streams).
inline DosEstimate estimate_dos(const DisorderSpec& spec, std::size_t n_sites, std::size_t n_samples,
                                const SeedPolicy& seeds, Bandwidth bandwidth = {}, std::size_t workers = 1,
                                StreamDomain domain = StreamDomain::Calibration, std::size_t grid_points = 401) {
  if (n_samples < 1) throw ConfigError("n_samples", "must be at least 1");
  auto spectra = parallel_map(0, n_samples, workers, [&](std::size_t i) {
    return eigenvalues(sample_weights(spec, n_sites, seeds, i, domain),
                       SampleOrigin{seeds.master_seed(), i, n_sites});
  });
  return dos_from_spectra(spectra, spec.beta0(), bandwidth, grid_points);
}

/// Reference energies below 5% of 4 beta0 are refused unless `allow_low`.
inline void require_reference_energy(double energy, double beta0, bool allow_low = false) {
  if (!allow_low && energy < 0.05 * 4.0 * beta0)
    throw ConfigError("energy", "reference energy " + std::to_string(energy) +
                                    " is below 0.05*4*beta0; set allow_low_energy to override");
}

/// Points xi_n = |Lambda| nu(E) (E_n - E).
struct RescaledProcess {
  double reference_energy = 0.0;
  double nu_at_e = 0.0;
  std::size_t n_sites = 0;
  std::vector<double> points;

  double scale() const noexcept { return static_cast<double>(n_sites) * nu_at_e; }

  std::vector<double> unrescale() const {
    std::vector<double> e(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) e[i] = reference_energy + points[i] / scale();
    return e;
  }
};

inline RescaledProcess rescale(std::span<const double> eigenvalues, double energy, double nu_at_e,
                               std::size_t n_sites = 0) {
  if (!(nu_at_e > 0.0)) throw ConfigError("nu", "density of states must be positive at the reference energy");
  RescaledProcess r;
  r.reference_energy = energy;
  r.nu_at_e = nu_at_e;
  r.n_sites = n_sites ? n_sites : eigenvalues.size();
  const double s = r.scale();
  r.points.resize(eigenvalues.size());
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) r.points[i] = s * (eigenvalues[i] - energy);
  return r;
}

/// Half-open window [lo, hi) in rescaled units.
struct Window {
  double lo = -1.0;
  double hi = 1.0;
  double length() const noexcept { return hi - lo; }
  bool contains(double x) const noexcept { return x >= lo && x < hi; }
};

inline void validate_windows(std::span<const Window> windows) {
  for (const auto& w : windows)
    if (!(w.hi > w.lo) || !std::isfinite(w.lo) || !std::isfinite(w.hi))
      throw ConfigError("windows", "each window needs finite lo < hi");
  for (std::size_t i = 0; i < windows.size(); ++i)
    for (std::size_t j = i + 1; j < windows.size(); ++j)
      if (windows[i].lo < windows[j].hi && windows[j].lo < windows[i].hi)
        throw ConfigError("windows", "windows " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
}

/// The energy interval that window w selects around `energy`.
inline Interval energy_window(const Window& w, double energy, double nu_at_e, std::size_t n_sites) {
  const double s = static_cast<double>(n_sites) * nu_at_e;
  return {energy + w.lo / s, energy + w.hi / s};
}

inline std::vector<unsigned> count_windows(std::span<const double> points, std::span<const Window> windows) {
  std::vector<unsigned> c(windows.size(), 0);
  for (double x : points)
    for (std::size_t j = 0; j < windows.size(); ++j)
      if (windows[j].contains(x)) ++c[j];
  return c;
}

/// Per-sample window counts.
struct CountRecord {
  std::vector<Window> windows;
  std::vector<std::vector<unsigned>> counts;  // [sample][window]

  std::size_t n_samples() const noexcept { return counts.size(); }
};

struct WindowFit {
  double intensity = 0.0;
  std::vector<double> empirical;  // k = 0 .. max observed
  std::vector<double> poisson;
  double tv = 0.0;                // exact, Poisson tail beyond max observed included
};

struct JointFit {
  std::vector<unsigned> k;
  std::uint64_t hits = 0;
  double empirical = 0.0;
  Interval ci;
  double poisson_product = 0.0;
  double marginal_product = 0.0;  // product of per-window empirical frequencies
};

struct PoissonFitReport {
  std::size_t n_samples = 0;
  std::vector<WindowFit> windows;
  std::optional<JointFit> joint;
  double max_tv() const {
    double m = 0.0;
    for (const auto& w : windows) m = std::max(m, w.tv);
    return m;
  }
};

/// Compares per-window count laws with Poisson(|U_j|); when `joint_k` is
/// given, also the frequency of the exact count vector against the Poisson
/// product and against the product of empirical marginals.
inline PoissonFitReport poisson_fit(const CountRecord& rec, std::span<const double> intensities,
                                    std::optional<std::vector<unsigned>> joint_k = std::nullopt,
                                    std::size_t min_samples = 1000) {
  if (rec.n_samples() < min_samples)
    throw ConfigError("n_samples", "poisson_fit needs at least " + std::to_string(min_samples) + " samples");
  if (intensities.size() != rec.windows.size()) throw ConfigError("intensities", "one per window");
  validate_windows(rec.windows);
  PoissonFitReport rep;
  rep.n_samples = rec.n_samples();
  const double n = static_cast<double>(rec.n_samples());
  for (std::size_t j = 0; j < rec.windows.size(); ++j) {
    WindowFit w;
    w.intensity = intensities[j];
    unsigned kmax = 0;
    for (const auto& c : rec.counts) kmax = std::max(kmax, c.at(j));
    w.empirical.assign(kmax + 1, 0.0);
    for (const auto& c : rec.counts) w.empirical[c[j]] += 1.0 / n;
    w.poisson.resize(kmax + 1);
    double mass = 0.0, dist = 0.0;
    for (unsigned k = 0; k <= kmax; ++k) {
      w.poisson[k] = poisson_pmf(k, w.intensity);
      mass += w.poisson[k];
      dist += std::abs(w.empirical[k] - w.poisson[k]);
    }
    w.tv = 0.5 * (dist + std::max(0.0, 1.0 - mass));
    rep.windows.push_back(std::move(w));
  }
  if (joint_k) {
    if (joint_k->size() != rec.windows.size()) throw ConfigError("joint_k", "one target per window");
    JointFit jf;
    jf.k = *joint_k;
    jf.poisson_product = 1.0;
    jf.marginal_product = 1.0;
    for (const auto& c : rec.counts)
      if (c == jf.k) ++jf.hits;
    for (std::size_t j = 0; j < jf.k.size(); ++j) {
      jf.poisson_product *= poisson_pmf(jf.k[j], intensities[j]);
      const auto& emp = rep.windows[j].empirical;
      jf.marginal_product *= jf.k[j] < emp.size() ? emp[jf.k[j]] : 0.0;
    }
    jf.empirical = static_cast<double>(jf.hits) / n;
    jf.ci = wilson_interval(jf.hits, rec.n_samples());
    rep.joint = jf;
  }
  return rep;
}

/// Counts drawn directly from Poisson(|U_j|), for calibrating poisson_fit.
inline CountRecord synthetic_poisson_counts(std::span<const Window> windows, std::size_t n_samples,
                                            const SeedPolicy& seeds) {
  CountRecord rec;
  rec.windows.assign(windows.begin(), windows.end());
  rec.counts.resize(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    auto r = seeds.stream(i, StreamDomain::Synthetic);
    for (const auto& w : windows) rec.counts[i].push_back(r.poisson(w.length()));
  }
  return rec;
}

struct Localization {
  std::size_t center = 0;
  double decay_rate = 0.0;  // +inf when the support is a single site
  bool sup_bound_ok = true;
};

/// Center is the largest index attaining max |u|. Decay rate is minus the
/// least-squares slope of log|u(x)| against the ring distance to the center,
/// over entries above 1e-12 outside the 5-site core (core kept only if too
/// few points remain). With q and nu given, checks
/// |u(x)| <= L^q exp(-nu dist(x, center)), L = (N-1)/2.
inline Localization localization_diagnostics(std::span<const double> u, std::optional<double> q = std::nullopt,
                                             std::optional<double> nu = std::nullopt) {
  const std::size_t n = u.size();
  Localization out;
  double best = -1.0;
  for (std::size_t x = 0; x < n; ++x)
    if (std::abs(u[x]) >= best) {
      best = std::abs(u[x]);
      out.center = x;
    }
  auto dist = [&](std::size_t x) {
    const std::size_t d = x > out.center ? x - out.center : out.center - x;
    return static_cast<double>(std::min(d, n - d));
  };
  auto fit = [&](double min_dist) -> std::optional<double> {
    double sx = 0, sy = 0, sxx = 0, sxy = 0, m = 0;
    double dmin = std::numeric_limits<double>::infinity(), dmax = -dmin;
    for (std::size_t x = 0; x < n; ++x) {
      const double a = std::abs(u[x]);
      const double d = dist(x);
      if (a <= 1e-12 || d < min_dist) continue;
      const double y = std::log(a);
      sx += d;
      sy += y;
      sxx += d * d;
      sxy += d * y;
      m += 1;
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
    if (m < 2 || dmax <= dmin) return std::nullopt;
    return -(m * sxy - sx * sy) / (m * sxx - sx * sx);
  };
  std::size_t support = 0;
  for (double a : u)
    if (std::abs(a) > 1e-12) ++support;
  if (support <= 1) {
    out.decay_rate = std::numeric_limits<double>::infinity();
  } else if (auto r = fit(3.0)) {
    out.decay_rate = *r;
  } else if (auto r0 = fit(0.0)) {
    out.decay_rate = *r0;
  } else {
    out.decay_rate = std::numeric_limits<double>::infinity();
  }
  if (q && nu) {
    const double L = 0.5 * static_cast<double>(n - 1);
    const double pre = std::pow(L, *q);
    for (std::size_t x = 0; x < n && out.sup_bound_ok; ++x)
      if (std::abs(u[x]) > pre * std::exp(-*nu * dist(x)) * (1 + 1e-12)) out.sup_bound_ok = false;
  }
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + m, v.end());
  if (v.size() % 2 == 1) return v[m];
  const double hi = v[m];
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + m));
}

/// Decay rates of every eigenvector with eigenvalue in [lo, hi].
inline std::vector<double> decay_rates(const SpectralDecomposition& d, double lo, double hi) {
  std::vector<double> rates;
  for (std::size_t j = 0; j < d.size(); ++j)
    if (d.eigenvalues[j] >= lo && d.eigenvalues[j] <= hi) rates.push_back(localization_diagnostics(d.vector(j)).decay_rate);
  return rates;
}

/// Sample correlation of two equally long series (0 when either is constant).
inline double correlation(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Least-squares slope of y against x.
inline double ls_slope(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace spectra
