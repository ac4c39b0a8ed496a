#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "spectra/errors.hpp"
#include "spectra/seed.hpp"
#include "spectra/weight_field.hpp"

namespace spectra {

enum class DisorderKind { UniformInterval, TabulatedDensity, HeavyNearZero };

inline const char* to_string(DisorderKind k) noexcept {
  switch (k) {
    case DisorderKind::UniformInterval: return "uniform";
    case DisorderKind::TabulatedDensity: return "tabulated";
    case DisorderKind::HeavyNearZero: return "heavy_near_zero";
  }
  return "unknown";
}

struct DensityKnot {
  double t;
  double rho;
  friend bool operator==(const DensityKnot&, const DensityKnot&) = default;
};

/// Law of the i.i.d. bond weights.
///
/// UniformInterval(a, b): uniform on [a, b]. a == b is accepted as a point
/// mass (deterministic weights), which has no bounded density.
///
/// TabulatedDensity: piecewise-linear density through strictly increasing
/// knots (t, rho); the support is [t_first, t_last] and the trapezoid
/// integral must be 1 within 1e-9.
///
/// HeavyNearZero(beta0, eta): support (0, beta0] with
///   F(t) = exp(-t^-eta)                                   for t <= beta0/2,
///   F(t) = F_s + (1 - F_s) (G(t) - G_s) / (1 - G_s)       for t >  beta0/2,
/// where G(t) = exp(beta0^-eta - t^-eta), F_s = F(beta0/2), G_s = G(beta0/2).
/// Near zero F(t) <= exp(-t^-eta) holds exactly, everywhere
/// F(t) <= exp(beta0^-eta) exp(-t^-eta), and both pieces invert in closed form.
class DisorderSpec {
 public:
  static DisorderSpec uniform(double alpha0, double beta0) {
    DisorderSpec s;
    s.kind_ = DisorderKind::UniformInterval;
    s.alpha0_ = alpha0;
    s.beta0_ = beta0;
    s.validate();
    return s;
  }

  static DisorderSpec heavy_near_zero(double beta0, double eta = 1.0) {
    DisorderSpec s;
    s.kind_ = DisorderKind::HeavyNearZero;
    s.alpha0_ = 0.0;
    s.beta0_ = beta0;
    s.eta_ = eta;
    s.validate();
    return s;
  }

  static DisorderSpec tabulated(std::vector<DensityKnot> knots) {
    DisorderSpec s;
    s.kind_ = DisorderKind::TabulatedDensity;
    s.knots_ = std::move(knots);
    if (!s.knots_.empty()) {
      s.alpha0_ = s.knots_.front().t;
      s.beta0_ = s.knots_.back().t;
    }
    s.validate();
    return s;
  }

  DisorderKind kind() const noexcept { return kind_; }
  double alpha0() const noexcept { return alpha0_; }
  double beta0() const noexcept { return beta0_; }
  double eta() const noexcept { return eta_; }
  const std::vector<DensityKnot>& knots() const noexcept { return knots_; }

  bool is_point_mass() const noexcept {
    return kind_ == DisorderKind::UniformInterval && alpha0_ == beta0_;
  }

  /// Upper end of the region where the heavy-tail envelope exp(-t^-eta) is exact.
  double heavy_split() const noexcept { return 0.5 * beta0_; }

  double cdf(double t) const {
    switch (kind_) {
      case DisorderKind::UniformInterval:
        if (t < alpha0_) return 0.0;
        if (t >= beta0_) return 1.0;
        return (t - alpha0_) / (beta0_ - alpha0_);
      case DisorderKind::HeavyNearZero: {
        if (t <= 0.0) return 0.0;
        if (t >= beta0_) return 1.0;
        const double ts = heavy_split();
        if (t <= ts) return std::exp(-std::pow(t, -eta_));
        const auto [fs, gs] = heavy_joint();
        const double g = std::exp(std::pow(beta0_, -eta_) - std::pow(t, -eta_));
        return fs + (1.0 - fs) * (g - gs) / (1.0 - gs);
      }
      case DisorderKind::TabulatedDensity: {
        if (t <= knots_.front().t) return 0.0;
        if (t >= knots_.back().t) return 1.0;
        const std::size_t i = segment_of(t);
        const double x = t - knots_[i].t;
        const double h = knots_[i + 1].t - knots_[i].t;
        const double slope = (knots_[i + 1].rho - knots_[i].rho) / h;
        return (cum_[i] + knots_[i].rho * x + 0.5 * slope * x * x) / cum_.back();
      }
    }
    return 0.0;
  }

  double density(double t) const {
    switch (kind_) {
      case DisorderKind::UniformInterval:
        if (is_point_mass()) return t == alpha0_ ? std::numeric_limits<double>::infinity() : 0.0;
        return (t >= alpha0_ && t <= beta0_) ? 1.0 / (beta0_ - alpha0_) : 0.0;
      case DisorderKind::HeavyNearZero: {
        if (t <= 0.0 || t > beta0_) return 0.0;
        const double base = eta_ * std::pow(t, -eta_ - 1.0);
        if (t <= heavy_split()) return base * std::exp(-std::pow(t, -eta_));
        const auto [fs, gs] = heavy_joint();
        return (1.0 - fs) / (1.0 - gs) * base * std::exp(std::pow(beta0_, -eta_) - std::pow(t, -eta_));
      }
      case DisorderKind::TabulatedDensity: {
        if (t < knots_.front().t || t > knots_.back().t) return 0.0;
        if (t == knots_.back().t) return knots_.back().rho / cum_.back();
        const std::size_t i = segment_of(t);
        const double w = (t - knots_[i].t) / (knots_[i + 1].t - knots_[i].t);
        return ((1.0 - w) * knots_[i].rho + w * knots_[i + 1].rho) / cum_.back();
      }
    }
    return 0.0;
  }

  /// Inverse CDF on (0, 1).
  double quantile(double u) const {
    switch (kind_) {
      case DisorderKind::UniformInterval:
        return alpha0_ + u * (beta0_ - alpha0_);
      case DisorderKind::HeavyNearZero: {
        const auto [fs, gs] = heavy_joint();
        if (u <= fs) return std::pow(-std::log(u), -1.0 / eta_);
        const double g = gs + (u - fs) * (1.0 - gs) / (1.0 - fs);
        return std::min(beta0_, std::pow(std::pow(beta0_, -eta_) - std::log(g), -1.0 / eta_));
      }
      case DisorderKind::TabulatedDensity: {
        const double m = u * cum_.back();
        auto it = std::upper_bound(cum_.begin(), cum_.end(), m);
        std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - cum_.begin()) - 1));
        if (i >= knots_.size() - 1) i = knots_.size() - 2;
        const double h = knots_[i + 1].t - knots_[i].t;
        const double r0 = knots_[i].rho;
        const double slope = (knots_[i + 1].rho - r0) / h;
        const double mass = m - cum_[i];
        const double disc = std::max(0.0, r0 * r0 + 2.0 * slope * mass);
        const double denom = r0 + std::sqrt(disc);
        const double x = denom > 0.0 ? 2.0 * mass / denom : 0.0;
        return knots_[i].t + std::clamp(x, 0.0, h);
      }
    }
    return 0.0;
  }

  /// Upper bound on F(t) used by union bounds over bonds. Exact CDF for the
  /// bounded laws; exp(-t^-eta) on the heavy law's lower piece and
  /// exp(beta0^-eta - t^-eta) above it.
  double tail_envelope(double t) const {
    if (kind_ != DisorderKind::HeavyNearZero) return cdf(t);
    if (t <= 0.0) return 0.0;
    if (t <= heavy_split()) return std::exp(-std::pow(t, -eta_));
    return std::min(1.0, std::exp(std::pow(beta0_, -eta_) - std::pow(t, -eta_)));
  }

  friend bool operator==(const DisorderSpec& a, const DisorderSpec& b) {
    return a.kind_ == b.kind_ && a.alpha0_ == b.alpha0_ && a.beta0_ == b.beta0_ &&
           a.eta_ == b.eta_ && a.knots_ == b.knots_;
  }

 private:
  DisorderSpec() = default;

  std::pair<double, double> heavy_joint() const {
    const double ts = heavy_split();
    const double fs = std::exp(-std::pow(ts, -eta_));
    const double gs = std::exp(std::pow(beta0_, -eta_) - std::pow(ts, -eta_));
    return {fs, gs};
  }

  std::size_t segment_of(double t) const {
    auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                               [](double v, const DensityKnot& k) { return v < k.t; });
    auto i = static_cast<std::size_t>(it - knots_.begin());
    return std::min(i == 0 ? 0 : i - 1, knots_.size() - 2);
  }

  void validate() {
    auto finite = [](double x) { return std::isfinite(x); };
    switch (kind_) {
      case DisorderKind::UniformInterval:
        if (!finite(alpha0_) || !finite(beta0_)) throw ConfigError("disorder", "bounds must be finite");
        if (alpha0_ < 0.0) throw ConfigError("disorder.alpha0", "must be >= 0");
        if (alpha0_ > beta0_) throw ConfigError("disorder.beta0", "must be >= alpha0");
        if (beta0_ <= 0.0) throw ConfigError("disorder.beta0", "must be > 0");
        break;
      case DisorderKind::HeavyNearZero:
        if (!finite(beta0_) || beta0_ <= 0.0) throw ConfigError("disorder.beta0", "must be > 0");
        if (!finite(eta_) || eta_ <= 0.0) throw ConfigError("disorder.eta", "must be > 0");
        break;
      case DisorderKind::TabulatedDensity: {
        if (knots_.size() < 2) throw ConfigError("disorder.table", "needs at least two knots");
        if (knots_.front().t < 0.0) throw ConfigError("disorder.table", "support must be non-negative");
        cum_.assign(knots_.size(), 0.0);
        for (std::size_t i = 0; i < knots_.size(); ++i) {
          if (!finite(knots_[i].t) || !finite(knots_[i].rho) || knots_[i].rho < 0.0)
            throw ConfigError("disorder.table", "knots must be finite with rho >= 0");
          if (i > 0) {
            if (!(knots_[i].t > knots_[i - 1].t))
              throw ConfigError("disorder.table", "knot grid must be strictly increasing");
            cum_[i] = cum_[i - 1] +
                      0.5 * (knots_[i].rho + knots_[i - 1].rho) * (knots_[i].t - knots_[i - 1].t);
          }
        }
        if (std::abs(cum_.back() - 1.0) > 1e-9)
          throw ConfigError("disorder.table",
                            "density integrates to " + std::to_string(cum_.back()) + ", expected 1");
        break;
      }
    }
  }

  DisorderKind kind_ = DisorderKind::UniformInterval;
  double alpha0_ = 0.0;
  double beta0_ = 1.0;
  double eta_ = 1.0;
  std::vector<DensityKnot> knots_;
  std::vector<double> cum_;  // trapezoid mass up to each knot (tabulated only)
};

/// sup rho and sup |s rho(s)|, the constants of the Wegner and Minami bounds.
struct DensityFunctionals {
  double rho_sup;
  double s_rho_sup;
};

namespace detail {

/// Maximizes f on [lo, hi]: uniform grid of `grid` cells, then golden-section
/// refinement on the two cells around the best grid point. Adequate for the
/// piecewise-smooth, unimodal-per-piece densities used here.
template <class F>
double grid_golden_max(F&& f, double lo, double hi, int grid = 4096) {
  double best_x = lo;
  double best = f(lo);
  const double h = (hi - lo) / grid;
  for (int i = 1; i <= grid; ++i) {
    const double x = (i == grid) ? hi : lo + h * i;
    const double v = f(x);
    if (v > best) {
      best = v;
      best_x = x;
    }
  }
  double a = std::max(lo, best_x - h);
  double b = std::min(hi, best_x + h);
  constexpr double invphi = 0.6180339887498949;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 100 && (b - a) > 1e-15 * std::max(1.0, std::abs(b)); ++it) {
    if (fc > fd) {
      b = d; d = c; fd = fc;
      c = b - invphi * (b - a); fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + invphi * (b - a); fd = f(d);
    }
  }
  return std::max({best, fc, fd});
}

}  // namespace detail

inline DensityFunctionals density_functionals(const DisorderSpec& spec) {
  switch (spec.kind()) {
    case DisorderKind::UniformInterval: {
      if (spec.is_point_mass())
        throw ConfigError("disorder", "a point mass has no bounded density");
      const double rho = 1.0 / (spec.beta0() - spec.alpha0());
      return {rho, spec.beta0() * rho};
    }
    case DisorderKind::TabulatedDensity: {
      const auto& k = spec.knots();
      double total = 0.0;
      for (std::size_t i = 1; i < k.size(); ++i) total += 0.5 * (k[i].rho + k[i - 1].rho) * (k[i].t - k[i - 1].t);
      double rho_sup = 0.0, s_rho_sup = 0.0;
      for (std::size_t i = 0; i < k.size(); ++i) {
        rho_sup = std::max(rho_sup, k[i].rho);
        s_rho_sup = std::max(s_rho_sup, k[i].t * k[i].rho);
        if (i + 1 < k.size()) {
          // s*rho(s) is a concave parabola on a segment with decreasing density
          const double slope = (k[i + 1].rho - k[i].rho) / (k[i + 1].t - k[i].t);
          if (slope < 0.0) {
            const double ts = (slope * k[i].t - k[i].rho) / (2.0 * slope);
            if (ts > k[i].t && ts < k[i + 1].t)
              s_rho_sup = std::max(s_rho_sup, ts * (k[i].rho + slope * (ts - k[i].t)));
          }
        }
      }
      return {rho_sup / total, s_rho_sup / total};
    }
    case DisorderKind::HeavyNearZero: {
      const double ts = spec.heavy_split();
      const double lower_lo = ts * 1e-3;
      auto rho = [&](double t) { return spec.density(t); };
      auto srho = [&](double t) { return t * spec.density(t); };
      // the density jumps upward at the split, so each piece is maximized on
      // its own closed interval (upper piece evaluated from the right)
      const double eps = ts * 1e-12;
      const double r = std::max(detail::grid_golden_max(rho, lower_lo, ts),
                                detail::grid_golden_max(rho, ts + eps, spec.beta0()));
      const double s = std::max(detail::grid_golden_max(srho, lower_lo, ts),
                                detail::grid_golden_max(srho, ts + eps, spec.beta0()));
      return {r, s};
    }
  }
  return {0.0, 0.0};
}

/// n_bonds i.i.d. draws by inverse CDF from the stream of sample `index`.
inline WeightField sample_weights(const DisorderSpec& spec, std::size_t n_bonds, RandomStream& rng) {
  if (n_bonds < 3) throw ConfigError("n_sites", "need at least 3 bonds");
  std::vector<double> w(n_bonds);
  for (auto& x : w) x = spec.quantile(rng.uniform_open());
  return WeightField(std::move(w));
}

inline WeightField sample_weights(const DisorderSpec& spec, std::size_t n_bonds, const SeedPolicy& seeds,
                                  std::uint64_t index, StreamDomain domain = StreamDomain::Sample) {
  auto rng = seeds.stream(index, domain);
  return sample_weights(spec, n_bonds, rng);
}

}  // namespace spectra
