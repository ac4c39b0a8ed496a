#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "spectra/disorder.hpp"
#include "spectra/errors.hpp"
#include "spectra/stats.hpp"

namespace spectra {

using json = nlohmann::json;

/// Integer JSON value that is not negative, whether parsed as signed or unsigned.
inline bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

/// Typed, strict access to one JSON object. Every read is recorded so that
/// finish() can reject keys nobody asked for.
class ParamReader {
 public:
  ParamReader(const json& obj, std::string prefix = "") : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError(prefix_.empty() ? "config" : prefix_, "expected an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  double number(const std::string& key, double fallback) { return number_at(key, fallback); }
  double number(const std::string& key) { return number_at(key, std::nullopt); }

  std::size_t count(const std::string& key, std::size_t fallback) {
    used_.insert(key);
    if (!obj_.contains(key)) return fallback;
    return as_count(obj_.at(key), path(key));
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    used_.insert(key);
    if (!obj_.contains(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!is_count(v)) throw ConfigError(path(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool flag(const std::string& key, bool fallback) {
    used_.insert(key);
    if (!obj_.contains(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_boolean()) throw ConfigError(path(key), "expected true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    if (!obj_.contains(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(path(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    used_.insert(key);
    if (!obj_.contains(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_array() || v.empty()) throw ConfigError(path(key), "expected a non-empty array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(path(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
    used_.insert(key);
    if (!obj_.contains(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_array() || v.empty()) throw ConfigError(path(key), "expected a non-empty array of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_count(v[i], path(key) + "[" + std::to_string(i) + "]"));
    return out;
  }

  /// Raw access for nested structures; the caller validates.
  const json* raw(const std::string& key) {
    used_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : obj_.items())
      if (!used_.count(k)) throw ConfigError(path(k), "unknown field");
  }

 private:
  double number_at(const std::string& key, std::optional<double> fallback) {
    used_.insert(key);
    if (!obj_.contains(key)) {
      if (fallback) return *fallback;
      throw ConfigError(path(key), "required field is missing");
    }
    const auto& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(path(key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(path(key), "must be finite");
    return x;
  }

  static std::size_t as_count(const json& v, const std::string& where) {
    if (!is_count(v)) throw ConfigError(where, "expected a non-negative integer");
    return v.get<std::size_t>();
  }

  const json& obj_;
  std::string prefix_;
  std::set<std::string> used_;
};

inline json disorder_to_json(const DisorderSpec& s) {
  switch (s.kind()) {
    case DisorderKind::UniformInterval:
      return {{"kind", "uniform"}, {"alpha0", s.alpha0()}, {"beta0", s.beta0()}};
    case DisorderKind::HeavyNearZero:
      return {{"kind", "heavy_near_zero"}, {"beta0", s.beta0()}, {"eta", s.eta()}};
    case DisorderKind::TabulatedDensity: {
      json knots = json::array();
      for (const auto& k : s.knots()) knots.push_back({k.t, k.rho});
      return {{"kind", "tabulated"}, {"knots", knots}};
    }
  }
  return {};
}

inline DisorderSpec disorder_from_json(const json& j, const std::string& where = "disorder") {
  ParamReader r(j, where);
  const std::string kind = r.text("kind", "uniform");
  auto build = [&]() -> DisorderSpec {
    if (kind == "uniform") return DisorderSpec::uniform(r.number("alpha0"), r.number("beta0"));
    if (kind == "heavy_near_zero") return DisorderSpec::heavy_near_zero(r.number("beta0"), r.number("eta", 1.0));
    if (kind == "tabulated") {
      const json* k = r.raw("knots");
      if (!k || !k->is_array()) throw ConfigError(where + ".knots", "expected an array of [t, rho] pairs");
      std::vector<DensityKnot> knots;
      for (std::size_t i = 0; i < k->size(); ++i) {
        const auto& p = (*k)[i];
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
          throw ConfigError(where + ".knots[" + std::to_string(i) + "]", "expected [t, rho]");
        knots.push_back({p[0].get<double>(), p[1].get<double>()});
      }
      return DisorderSpec::tabulated(std::move(knots));
    }
    throw ConfigError(where + ".kind", "unknown kind '" + kind + "' (uniform, heavy_near_zero, tabulated)");
  };
  auto spec = [&] {
    try {
      return build();
    } catch (const ConfigError& e) {
      if (e.field().rfind(where, 0) == 0) throw;
      throw ConfigError(where + "." + (e.field().empty() ? std::string("value") : e.field()), e.reason());
    }
  }();
  r.finish();
  return spec;
}

inline json windows_to_json(const std::vector<Window>& ws) {
  json a = json::array();
  for (const auto& w : ws) a.push_back({w.lo, w.hi});
  return a;
}

inline std::vector<Window> windows_from_json(const json* j, const std::string& where, std::vector<Window> fallback) {
  if (!j) return fallback;
  if (!j->is_array() || j->empty()) throw ConfigError(where, "expected a non-empty array of [lo, hi] pairs");
  std::vector<Window> out;
  for (std::size_t i = 0; i < j->size(); ++i) {
    const auto& p = (*j)[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw ConfigError(where + "[" + std::to_string(i) + "]", "expected [lo, hi]");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  try {
    validate_windows(out);
  } catch (const ConfigError& e) {
    throw ConfigError(where, e.reason());
  }
  return out;
}

/// "default", "silverman", or a positive number.
inline Bandwidth bandwidth_from_json(const json* j, const std::string& where, Bandwidth fallback) {
  if (!j) return fallback;
  if (j->is_string()) {
    const auto s = j->get<std::string>();
    if (s == "default") return Bandwidth{};
    if (s == "silverman") return Bandwidth::silverman();
    throw ConfigError(where, "expected \"default\", \"silverman\" or a positive number");
  }
  if (!j->is_number()) throw ConfigError(where, "expected \"default\", \"silverman\" or a positive number");
  try {
    return Bandwidth(j->get<double>());
  } catch (const ConfigError& e) {
    throw ConfigError(where, e.reason());
  }
}

inline json bandwidth_to_json(const Bandwidth& b) {
  switch (b.rule) {
    case Bandwidth::Rule::Default: return "default";
    case Bandwidth::Rule::Silverman: return "silverman";
    case Bandwidth::Rule::Fixed: return b.value;
  }
  return "default";
}

}  // namespace spectra
