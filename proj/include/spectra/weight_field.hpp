#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "spectra/errors.hpp"

namespace spectra {

/// One realization of the bond weights on a periodic ring. Bond g couples
/// sites g and g+1 (mod N), so the ring has as many bonds as sites.
class WeightField {
 public:
  WeightField() = default;

  explicit WeightField(std::vector<double> weights) : w_(std::move(weights)) {
    if (w_.size() < 3) throw ConfigError("weights", "a periodic ring needs at least 3 bonds");
    for (double x : w_) {
      if (!(x >= 0.0)) throw ConfigError("weights", "bond weights must be finite and non-negative");
    }
  }

  static WeightField constant(std::size_t n, double value) {
    return WeightField(std::vector<double>(n, value));
  }

  std::size_t n_sites() const noexcept { return w_.size(); }
  std::size_t size() const noexcept { return w_.size(); }

  double operator[](std::size_t bond) const noexcept { return w_[bond]; }

  /// Periodic access: weight(g + N) == weight(g), negative indices allowed.
  double weight(std::ptrdiff_t bond) const noexcept {
    const auto n = static_cast<std::ptrdiff_t>(w_.size());
    std::ptrdiff_t r = bond % n;
    if (r < 0) r += n;
    return w_[static_cast<std::size_t>(r)];
  }

  std::span<const double> weights() const noexcept { return w_; }

  double min_weight() const { return *std::min_element(w_.begin(), w_.end()); }
  double max_weight() const { return *std::max_element(w_.begin(), w_.end()); }

  /// Cyclic relabeling: bond g of the result is bond g + shift of this field.
  WeightField rotated(std::size_t shift) const {
    std::vector<double> out(w_.size());
    for (std::size_t g = 0; g < w_.size(); ++g) out[g] = w_[(g + shift) % w_.size()];
    return WeightField(std::move(out));
  }

  /// Returns a copy with one bond changed; used by finite-difference oracles.
  WeightField with_bond(std::size_t bond, double value) const {
    WeightField copy = *this;
    copy.w_.at(bond) = value;
    return copy;
  }

  /// Contiguous segment [first, first + length) read periodically, as a ring
  /// of its own.
  WeightField segment(std::size_t first, std::size_t length) const {
    std::vector<double> out(length);
    for (std::size_t i = 0; i < length; ++i) out[i] = w_[(first + i) % w_.size()];
    return WeightField(std::move(out));
  }

  friend bool operator==(const WeightField&, const WeightField&) = default;

 private:
  std::vector<double> w_;
};

}  // namespace spectra
