#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace spectra {

/// Invalid user input: disorder laws, experiment parameters, config files.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
  ConfigError(const std::string& field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(field), reason_(what) {}
  const std::string& field() const noexcept { return field_; }
  /// The message without the field prefix.
  std::string reason() const { return field_.empty() ? what() : reason_; }

 private:
  std::string field_;
  std::string reason_;
};

/// Seed metadata attached to numerical failures so a failing sample can be
/// reproduced in isolation.
struct SampleOrigin {
  std::uint64_t master_seed = 0;
  std::uint64_t index = 0;
  std::size_t n_sites = 0;
};

/// Eigensolver non-convergence and similar numerical breakdowns.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& what, std::optional<SampleOrigin> origin = std::nullopt)
      : std::runtime_error(decorate(what, origin)), origin_(origin) {}
  const std::optional<SampleOrigin>& origin() const noexcept { return origin_; }

 private:
  static std::string decorate(const std::string& what, const std::optional<SampleOrigin>& o) {
    if (!o) return what;
    return what + " [master_seed=" + std::to_string(o->master_seed) +
           " index=" + std::to_string(o->index) + " n_sites=" + std::to_string(o->n_sites) + "]";
  }
  std::optional<SampleOrigin> origin_;
};

/// Perturbation formulas need a simple eigenvalue; raised when the gap to the
/// rest of the spectrum is below the degeneracy threshold.
class DegenerateEigenvalue : public std::domain_error {
 public:
  DegenerateEigenvalue(double gap, double threshold)
      : std::domain_error("eigenvalue is not simple: gap " + std::to_string(gap) +
                          " below threshold " + std::to_string(threshold)),
        gap_(gap),
        threshold_(threshold) {}
  double gap() const noexcept { return gap_; }
  double threshold() const noexcept { return threshold_; }

 private:
  double gap_;
  double threshold_;
};

/// A transfer matrix was requested across a bond of weight zero.
class SingularBond : public std::domain_error {
 public:
  explicit SingularBond(std::size_t bond)
      : std::domain_error("bond " + std::to_string(bond) + " has zero weight"), bond_(bond) {}
  std::size_t bond() const noexcept { return bond_; }

 private:
  std::size_t bond_;
};

}  // namespace spectra
