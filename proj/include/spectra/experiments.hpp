#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "spectra/config.hpp"
#include "spectra/disorder.hpp"
#include "spectra/eigen.hpp"
#include "spectra/operator.hpp"
#include "spectra/parallel.hpp"
#include "spectra/perturb.hpp"
#include "spectra/seed.hpp"
#include "spectra/stats.hpp"

namespace spectra {

inline constexpr int kResultSchemaVersion = 1;

/// Shortest text that reads back to the same double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

struct ExperimentResult {
  std::string name;
  std::string label;
  json parameters = json::object();
  std::optional<double> estimate;
  std::optional<Interval> interval;
  std::optional<double> reference_bound;
  std::optional<double> slack;
  std::optional<bool> verdict;
  std::string verdict_rule;
  json statistics = json::object();
};

inline json to_json(const ExperimentResult& r) {
  json j = {{"schema_version", kResultSchemaVersion}, {"name", r.name}, {"label", r.label},
            {"parameters", r.parameters}, {"statistics", r.statistics}};
  auto opt = [](const std::optional<double>& v) -> json {
    if (!v || !std::isfinite(*v)) return nullptr;
    return *v;
  };
  j["estimate"] = opt(r.estimate);
  j["interval"] = r.interval ? json{r.interval->lo, r.interval->hi} : json(nullptr);
  j["reference_bound"] = opt(r.reference_bound);
  j["slack"] = opt(r.slack);
  j["verdict"] = r.verdict ? json(*r.verdict) : json(nullptr);
  j["verdict_rule"] = r.verdict_rule;
  return j;
}

/// Plot-ready CSV table.
struct Table {
  std::string file;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string str() const {
    std::string s;
    for (std::size_t i = 0; i < header.size(); ++i) s += (i ? "," : "") + header[i];
    s += '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
      s += '\n';
    }
    return s;
  }
};

struct Outcome {
  std::vector<ExperimentResult> results;
  std::vector<Table> tables;

  bool passed() const {
    for (const auto& r : results)
      if (r.verdict && !*r.verdict) return false;
    return true;
  }
  const ExperimentResult* find(const std::string& label) const {
    for (const auto& r : results)
      if (r.label == label) return &r;
    return nullptr;
  }
};

inline Table summary_table(const std::vector<ExperimentResult>& results) {
  Table t{"summary.csv", {"name", "label", "estimate", "ci_lo", "ci_hi", "reference_bound", "verdict"}, {}};
  auto f = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& r : results)
    t.rows.push_back({r.name, r.label, f(r.estimate), r.interval ? format_double(r.interval->lo) : "",
                      r.interval ? format_double(r.interval->hi) : "", f(r.reference_bound),
                      r.verdict ? (*r.verdict ? "pass" : "fail") : ""});
  return t;
}

/// One record per sample index; records depend only on (parameters, seed,
/// index), so any split of the index range gives the same aggregate.
using Record = std::vector<double>;

struct Plan {
  std::string name;
  json parameters;
  std::size_t n_records = 0;
  std::function<Record(std::size_t)> record;
  std::function<Outcome(const std::vector<Record>&)> finish;
};

inline Outcome execute(const Plan& plan, std::size_t workers) {
  return plan.finish(parallel_map(0, plan.n_records, resolve_workers(workers), plan.record));
}

/// 3 sigma binomial slack at the bound, 3 sqrt(b(1-b)/n) with b = min(bound, 1).
inline double bernoulli_slack(double bound, std::size_t n) {
  const double b = std::clamp(bound, 0.0, 1.0);
  return 3.0 * std::sqrt(b * (1.0 - b) / static_cast<double>(n));
}

inline ExperimentResult probability_result(std::string name, std::string label, const json& params,
                                           std::uint64_t hits, std::size_t n) {
  ExperimentResult r;
  r.name = std::move(name);
  r.label = std::move(label);
  r.parameters = params;
  r.estimate = n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
  r.interval = wilson_interval(hits, n);
  r.statistics["hits"] = hits;
  r.statistics["n_samples"] = n;
  return r;
}

// ---------------------------------------------------------------------------
// bounds

/// Wegner: 2 d ||s rho||_inf eps |Lambda| / (E - eps), d = 1.
inline double wegner_bound(const DisorderSpec& spec, double energy, double epsilon, std::size_t n_sites) {
  const auto f = density_functionals(spec);
  return 2.0 * f.s_rho_sup / (energy - epsilon) * epsilon * static_cast<double>(n_sites);
}

/// Minami: beta0 ||rho||_inf ||s rho||_inf (|J| |Lambda|)^2 / (2 a^2).
inline double minami_bound(const DisorderSpec& spec, double a, double b, std::size_t n_sites) {
  const auto f = density_functionals(spec);
  const double x = (b - a) * static_cast<double>(n_sites);
  return spec.beta0() * f.rho_sup * f.s_rho_sup * x * x / (2.0 * a * a);
}

/// Union bound (2L+1) F(exp(-(log L)^delta)) over the bonds of Lambda_L.
inline double heavy_union_bound(const DisorderSpec& spec, std::size_t L, double delta) {
  const double t = std::exp(-std::pow(std::log(static_cast<double>(L)), delta));
  return (2.0 * static_cast<double>(L) + 1.0) * spec.tail_envelope(t);
}

// ---------------------------------------------------------------------------
// localization gate

struct GateParams {
  double threshold = 0.02;
  std::size_t sites = 513;
  std::size_t samples = 20;
  bool allow_delocalized = false;
};

inline json gate_to_json(const GateParams& g) {
  return {{"threshold", g.threshold}, {"sites", g.sites}, {"samples", g.samples},
          {"allow_delocalized", g.allow_delocalized}};
}

inline GateParams gate_from_json(const json* j) {
  GateParams g;
  if (!j) return g;
  ParamReader r(*j, "gate");
  g.threshold = r.number("threshold", g.threshold);
  g.sites = r.count("sites", g.sites);
  g.samples = r.count("samples", g.samples);
  g.allow_delocalized = r.flag("allow_delocalized", g.allow_delocalized);
  r.finish();
  if (g.sites < 16) throw ConfigError("gate.sites", "must be at least 16");
  if (g.samples < 1) throw ConfigError("gate.samples", "must be at least 1");
  return g;
}

/// Median decay rate of the eigenvector nearest `energy` over gate samples.
inline double median_decay_rate(const DisorderSpec& spec, double energy, const GateParams& g,
                                const SeedPolicy& seeds, std::size_t workers) {
  const auto rates = parallel_map(0, g.samples, workers, [&](std::size_t i) {
    const auto f = sample_weights(spec, g.sites, seeds, i, StreamDomain::Gate);
    const auto [k, e] = tridiagonal_form(f).nearest(energy);
    return localization_diagnostics(inverse_iteration(f, e)).decay_rate;
  });
  return median(rates);
}

/// Refuses energies outside the localized regime unless overridden.
inline double localization_gate(const DisorderSpec& spec, double energy, const GateParams& g,
                                const SeedPolicy& seeds, std::size_t workers) {
  const double m = median_decay_rate(spec, energy, g, seeds, workers);
  if (m < g.threshold && !g.allow_delocalized)
    throw ConfigError("energy", "E=" + format_double(energy) + " fails the localization gate: median decay rate " +
                                    format_double(m) + " < " + format_double(g.threshold) +
                                    " (set gate.allow_delocalized to override)");
  return m;
}

// ---------------------------------------------------------------------------
// shared parameter pieces

struct DosParams {
  std::size_t samples = 500;
  Bandwidth bandwidth = Bandwidth::silverman();
};

inline json dos_to_json(const DosParams& d) {
  return {{"samples", d.samples}, {"bandwidth", bandwidth_to_json(d.bandwidth)}};
}

inline DosParams dos_from_json(const json* j) {
  DosParams d;
  if (!j) return d;
  ParamReader r(*j, "dos");
  d.samples = r.count("samples", d.samples);
  d.bandwidth = bandwidth_from_json(r.raw("bandwidth"), "dos.bandwidth", d.bandwidth);
  r.finish();
  if (d.samples < 1) throw ConfigError("dos.samples", "must be at least 1");
  return d;
}

inline DisorderSpec disorder_or(ParamReader& r, const DisorderSpec& fallback) {
  const json* j = r.raw("disorder");
  return j ? disorder_from_json(*j) : fallback;
}

inline void require_sites(std::size_t n, const std::string& field = "n_sites") {
  if (n < 3) throw ConfigError(field, "a ring needs at least 3 sites");
}

inline void require_samples(std::size_t n, const std::string& field = "n_samples") {
  if (n < 1) throw ConfigError(field, "must be at least 1");
}

/// The count interval [lo, hi] closed at both ends.
inline std::size_t count_closed(const TridiagonalForm& t, double lo, double hi) {
  return t.count_in(lo, std::nextafter(hi, std::numeric_limits<double>::infinity()));
}

/// The open interval (lo, hi).
inline std::size_t count_open(const TridiagonalForm& t, double lo, double hi) {
  return t.count_in(std::nextafter(lo, std::numeric_limits<double>::infinity()), hi);
}

// ---------------------------------------------------------------------------
// wegner

struct WegnerParams {
  DisorderSpec disorder = DisorderSpec::uniform(0.5, 1.5);
  double energy = 1.0;
  std::vector<double> epsilons = {1e-3, 1e-4, 1e-5};
  std::size_t n_sites = 101;
  std::size_t n_samples = 100000;
  bool allow_low_energy = false;

  static WegnerParams from_json(const json& j) {
    WegnerParams p;
    ParamReader r(j);
    p.disorder = disorder_or(r, p.disorder);
    p.energy = r.number("energy", p.energy);
    p.epsilons = r.numbers("epsilons", p.epsilons);
    p.n_sites = r.count("n_sites", p.n_sites);
    p.n_samples = r.count("n_samples", p.n_samples);
    p.allow_low_energy = r.flag("allow_low_energy", p.allow_low_energy);
    r.finish();
    p.validate();
    return p;
  }
  json to_json() const {
    return {{"disorder", disorder_to_json(disorder)}, {"energy", energy}, {"epsilons", epsilons},
            {"n_sites", n_sites}, {"n_samples", n_samples}, {"allow_low_energy", allow_low_energy}};
  }
  void validate() const {
    require_sites(n_sites);
    require_samples(n_samples);
    require_reference_energy(energy, disorder.beta0(), allow_low_energy);
    for (double e : epsilons)
      if (!(e > 0.0 && e < energy)) throw ConfigError("epsilons", "each epsilon must satisfy 0 < epsilon < E");
  }
};

inline Plan wegner_plan(const WegnerParams& p, const SeedPolicy& seeds) {
  p.validate();
  Plan plan;
  plan.name = "wegner";
  plan.parameters = p.to_json();
  plan.n_records = p.n_samples;
  plan.record = [p, seeds](std::size_t i) {
    const auto t = tridiagonal_form(sample_weights(p.disorder, p.n_sites, seeds, i));
    Record rec;
    for (double eps : p.epsilons) rec.push_back(count_closed(t, p.energy - eps, p.energy + eps) > 0 ? 1.0 : 0.0);
    return rec;
  };
  plan.finish = [p, params = plan.parameters](const std::vector<Record>& recs) {
    Outcome out;
    for (std::size_t k = 0; k < p.epsilons.size(); ++k) {
      std::uint64_t hits = 0;
      for (const auto& r : recs) hits += r[k] > 0.5;
      auto res = probability_result("wegner", "epsilon=" + format_double(p.epsilons[k]), params, hits, recs.size());
      res.parameters["epsilon"] = p.epsilons[k];
      res.reference_bound = wegner_bound(p.disorder, p.energy, p.epsilons[k], p.n_sites);
      res.slack = bernoulli_slack(*res.reference_bound, recs.size());
      res.verdict = res.interval->hi <= *res.reference_bound + *res.slack;
      res.verdict_rule = "upper Wilson limit <= bound + 3 sigma";
      out.results.push_back(std::move(res));
    }
    out.tables.push_back(summary_table(out.results));
    return out;
  };
  return plan;
}

// ---------------------------------------------------------------------------
// minami

struct MinamiParams {
  DisorderSpec disorder = DisorderSpec::uniform(0.5, 1.5);
  double energy = 1.0;
  std::vector<double> widths = {1e-2, 1e-3};  // J = [E - w/2, E + w/2]
  std::size_t n_sites = 101;
  std::size_t n_samples = 100000;
  bool allow_low_energy = false;

  static MinamiParams from_json(const json& j) {
    MinamiParams p;
    ParamReader r(j);
    p.disorder = disorder_or(r, p.disorder);
    p.energy = r.number("energy", p.energy);
    p.widths = r.numbers("widths", p.widths);
    p.n_sites = r.count("n_sites", p.n_sites);
    p.n_samples = r.count("n_samples", p.n_samples);
    p.allow_low_energy = r.flag("allow_low_energy", p.allow_low_energy);
    r.finish();
    p.validate();
    return p;
  }
  json to_json() const {
    return {{"disorder", disorder_to_json(disorder)}, {"energy", energy}, {"widths", widths},
            {"n_sites", n_sites}, {"n_samples", n_samples}, {"allow_low_energy", allow_low_energy}};
  }
  void validate() const {
    require_sites(n_sites);
    require_samples(n_samples);
    require_reference_energy(energy, disorder.beta0(), allow_low_energy);
    for (double w : widths) {
      if (!(w > 0.0)) throw ConfigError("widths", "each width must be positive");
      if (!(energy - 0.5 * w > 0.0)) throw ConfigError("widths", "J = [a, b] needs a > 0");
    }
  }
};

inline Plan minami_plan(const MinamiParams& p, const SeedPolicy& seeds) {
  p.validate();
  Plan plan;
  plan.name = "minami";
  plan.parameters = p.to_json();
  plan.n_records = p.n_samples;
  plan.record = [p, seeds](std::size_t i) {
    const auto t = tridiagonal_form(sample_weights(p.disorder, p.n_sites, seeds, i));
    Record rec;
    for (double w : p.widths)
      rec.push_back(static_cast<double>(count_closed(t, p.energy - 0.5 * w, p.energy + 0.5 * w)));
    return rec;
  };
  plan.finish = [p, params = plan.parameters](const std::vector<Record>& recs) {
    Outcome out;
    for (std::size_t k = 0; k < p.widths.size(); ++k) {
      const double a = p.energy - 0.5 * p.widths[k], b = p.energy + 0.5 * p.widths[k];
      std::uint64_t two = 0, one = 0;
      for (const auto& r : recs) {
        two += r[k] >= 2;
        one += r[k] >= 1;
      }
      auto res = probability_result("minami", "width=" + format_double(p.widths[k]), params, two, recs.size());
      res.parameters["J"] = {a, b};
      res.reference_bound = minami_bound(p.disorder, a, b, p.n_sites);
      res.slack = bernoulli_slack(*res.reference_bound, recs.size());
      res.verdict = res.interval->hi <= *res.reference_bound + *res.slack;
      res.verdict_rule = "upper Wilson limit <= bound + 3 sigma";
      res.statistics["at_least_one"] = static_cast<double>(one) / static_cast<double>(recs.size());
      out.results.push_back(std::move(res));
    }
    out.tables.push_back(summary_table(out.results));
    return out;
  };
  return plan;
}

// ---------------------------------------------------------------------------
// decorrelation

struct DecorrelationParams {
  DisorderSpec disorder = DisorderSpec::uniform(0.1, 1.9);
  double energy = 0.8;
  double energy2 = 2.0;
  std::vector<std::size_t> L_list = {256, 512, 1024, 2048};
  double alpha = 0.5;
  double beta = 0.75;
  double c = 1.0;      // l = ceil(c L^alpha)
  double theta = 0.5;  // reported only
  std::size_t n_samples = 100000;
  double min_slope = 1.7;
  bool allow_low_energy = false;
  GateParams gate;

  static DecorrelationParams from_json(const json& j) {
    DecorrelationParams p;
    ParamReader r(j);
    p.disorder = disorder_or(r, p.disorder);
    p.energy = r.number("energy", p.energy);
    p.energy2 = r.number("energy2", p.energy2);
    p.L_list = r.counts("L_list", p.L_list);
    p.alpha = r.number("alpha", p.alpha);
    p.beta = r.number("beta", p.beta);
    p.c = r.number("c", p.c);
    p.theta = r.number("theta", p.theta);
    p.n_samples = r.count("n_samples", p.n_samples);
    p.min_slope = r.number("min_slope", p.min_slope);
    p.allow_low_energy = r.flag("allow_low_energy", p.allow_low_energy);
    p.gate = gate_from_json(r.raw("gate"));
    r.finish();
    p.validate();
    return p;
  }
  json to_json() const {
    return {{"disorder", disorder_to_json(disorder)}, {"energy", energy}, {"energy2", energy2},
            {"L_list", L_list}, {"alpha", alpha}, {"beta", beta}, {"c", c}, {"theta", theta},
            {"n_samples", n_samples}, {"min_slope", min_slope}, {"allow_low_energy", allow_low_energy},
            {"gate", gate_to_json(gate)}};
  }
  std::size_t box(std::size_t L) const {
    return static_cast<std::size_t>(std::ceil(c * std::pow(static_cast<double>(L), alpha)));
  }
  void validate() const {
    require_samples(n_samples);
    if (energy == energy2) throw ConfigError("energy2", "must differ from energy");
    if (!(energy > 0.0) || !(energy2 > 0.0)) throw ConfigError("energy", "both energies must be positive");
    require_reference_energy(energy, disorder.beta0(), allow_low_energy);
    require_reference_energy(energy2, disorder.beta0(), allow_low_energy);
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha", "must lie in (0, 1)");
    if (!(beta > 0.5 && beta < 1.0)) throw ConfigError("beta", "must lie in (1/2, 1)");
    if (!(c > 0.0)) throw ConfigError("c", "must be positive");
    if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("theta", "must lie in (0, 1)");
    for (std::size_t L : L_list) {
      if (L < 2) throw ConfigError("L_list", "each L must be at least 2");
      if (2 * box(L) + 1 < 3) throw ConfigError("L_list", "box too small");
    }
  }
};

inline Plan decorrelation_plan(const DecorrelationParams& p, const SeedPolicy& seeds, std::size_t workers) {
  p.validate();
  Plan plan;
  plan.name = "decorrelate";
  plan.parameters = p.to_json();
  const double top = 4.0 * p.disorder.beta0();
  for (double e : {p.energy, p.energy2})
    if (e < top) plan.parameters["gate_decay_rate"].push_back(localization_gate(p.disorder, e, p.gate, seeds, workers));
  plan.n_records = p.n_samples * p.L_list.size();
  plan.record = [p, seeds](std::size_t i) {
    const std::size_t L = p.L_list[i / p.n_samples];
    const double r = 1.0 / static_cast<double>(L);
    const auto t = tridiagonal_form(sample_weights(p.disorder, 2 * p.box(L) + 1, seeds, i));
    return Record{count_open(t, p.energy - r, p.energy + r) > 0 ? 1.0 : 0.0,
                  count_open(t, p.energy2 - r, p.energy2 + r) > 0 ? 1.0 : 0.0};
  };
  plan.finish = [p, params = plan.parameters](const std::vector<Record>& recs) {
    Outcome out;
    std::vector<double> xs, ys, log_l, log_ratio;
    bool all_positive = true;
    for (std::size_t li = 0; li < p.L_list.size(); ++li) {
      const std::size_t L = p.L_list[li], l = p.box(L);
      std::uint64_t a = 0, b = 0, ab = 0;
      for (std::size_t s = 0; s < p.n_samples; ++s) {
        const auto& r = recs[li * p.n_samples + s];
        a += r[0] > 0.5;
        b += r[1] > 0.5;
        ab += r[0] > 0.5 && r[1] > 0.5;
      }
      const double n = static_cast<double>(p.n_samples);
      const double pa = a / n, pb = b / n, pj = ab / n;
      auto res = probability_result("decorrelate", "L=" + std::to_string(L), params, ab, p.n_samples);
      const double ratio_lL = static_cast<double>(l) / static_cast<double>(L);
      res.parameters["L"] = L;
      res.parameters["l"] = l;
      res.parameters["box_sites"] = 2 * l + 1;
      res.statistics["p_energy"] = pa;
      res.statistics["p_energy2"] = pb;
      res.statistics["product"] = pa * pb;
      res.statistics["ratio"] = pa * pb > 0 ? pj / (pa * pb) : std::numeric_limits<double>::quiet_NaN();
      res.statistics["rate"] = ratio_lL * ratio_lL * std::exp(std::pow(std::log(static_cast<double>(L)), p.beta));
      res.statistics["rate_theta"] = std::pow(ratio_lL, 1.0 + p.theta);
      out.results.push_back(res);
      if (ab == 0) all_positive = false;
      else {
        xs.push_back(std::log(ratio_lL));
        ys.push_back(std::log(pj));
      }
      if (pa * pb > 0 && pj > 0) {
        log_l.push_back(std::log(static_cast<double>(L)));
        log_ratio.push_back(std::log(pj / (pa * pb)));
      }
    }
    ExperimentResult s;
    s.name = "decorrelate";
    s.label = "slope";
    s.parameters = params;
    const double slope = all_positive && xs.size() >= 2 ? ls_slope(xs, ys) : std::numeric_limits<double>::quiet_NaN();
    s.estimate = slope;
    s.reference_bound = p.min_slope;
    s.verdict = std::isfinite(slope) && slope >= p.min_slope;
    s.verdict_rule = "least-squares slope of log P_joint against log(l/L) >= min_slope";
    s.statistics["ratio_trend"] = log_l.size() >= 2 ? ls_slope(log_l, log_ratio) : 0.0;
    out.results.push_back(std::move(s));
    out.tables.push_back(summary_table(out.results));
    return out;
  };
  return plan;
}

// ---------------------------------------------------------------------------
// windows around a reference energy, shared by levelstats and independence

/// nu(E) from a calibration DOS run.
inline std::vector<double> calibrate_nu(const DisorderSpec& spec, std::size_t n_sites, const DosParams& d,
                                        std::span<const double> energies, const SeedPolicy& seeds,
                                        std::size_t workers) {
  const auto dos = estimate_dos(spec, n_sites, d.samples, seeds, d.bandwidth, workers);
  std::vector<double> nu;
  for (double e : energies) {
    const double v = dos.nu_at(e);
    if (!(v > 0.0)) throw ConfigError("energy", "estimated density of states vanishes at E=" + format_double(e));
    nu.push_back(v);
  }
  return nu;
}

inline std::vector<unsigned> targets_from_json(const json* j, std::size_t n, const std::string& where) {
  std::vector<unsigned> k(n, 0);
  if (!j) return k;
  if (!j->is_array() || j->size() != n) throw ConfigError(where, "expected one count per window");
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_count((*j)[i])) throw ConfigError(where, "counts must be non-negative integers");
    k[i] = (*j)[i].get<unsigned>();
  }
  return k;
}

// ---------------------------------------------------------------------------
// levelstats (Poisson statistics at one energy)

struct LevelStatsParams {
  DisorderSpec disorder = DisorderSpec::uniform(0.1, 1.9);
  double energy = 1.0;
  std::vector<Window> windows = {{-1.0, 1.0}};
  std::vector<unsigned> k = {2};
  std::size_t n_sites = 513;
  std::size_t n_samples = 5000;
  std::size_t calibration_samples = 10000;
  double max_tv = 0.1;
  double max_calibration_tv = 0.02;
  bool allow_low_energy = false;
  DosParams dos;
  GateParams gate;

  static LevelStatsParams from_json(const json& j) {
    LevelStatsParams p;
    ParamReader r(j);
    p.disorder = disorder_or(r, p.disorder);
    p.energy = r.number("energy", p.energy);
    p.windows = windows_from_json(r.raw("windows"), "windows", p.windows);
    p.k = targets_from_json(r.raw("k"), p.windows.size(), "k");
    if (!r.has("k") && p.windows.size() == 1) p.k = {2};
    p.n_sites = r.count("n_sites", p.n_sites);
    p.n_samples = r.count("n_samples", p.n_samples);
    p.calibration_samples = r.count("calibration_samples", p.calibration_samples);
    p.max_tv = r.number("max_tv", p.max_tv);
    p.max_calibration_tv = r.number("max_calibration_tv", p.max_calibration_tv);
    p.allow_low_energy = r.flag("allow_low_energy", p.allow_low_energy);
    p.dos = dos_from_json(r.raw("dos"));
    p.gate = gate_from_json(r.raw("gate"));
    r.finish();
    p.validate();
    return p;
  }
  json to_json() const {
    return {{"disorder", disorder_to_json(disorder)}, {"energy", energy}, {"windows", windows_to_json(windows)},
            {"k", k}, {"n_sites", n_sites}, {"n_samples", n_samples}, {"calibration_samples", calibration_samples},
            {"max_tv", max_tv}, {"max_calibration_tv", max_calibration_tv}, {"allow_low_energy", allow_low_energy},
            {"dos", dos_to_json(dos)}, {"gate", gate_to_json(gate)}};
  }
  void validate() const {
    require_sites(n_sites);
    if (n_samples < 1000) throw ConfigError("n_samples", "Poisson fits need at least 1000 samples");
    if (calibration_samples < 1000) throw ConfigError("calibration_samples", "must be at least 1000");
    require_reference_energy(energy, disorder.beta0(), allow_low_energy);
    validate_windows(windows);
    if (k.size() != windows.size()) throw ConfigError("k", "expected one count per window");
  }
};

inline Plan levelstats_plan(const LevelStatsParams& p, const SeedPolicy& seeds, std::size_t workers) {
  p.validate();
  Plan plan;
  plan.name = "levelstats";
  plan.parameters = p.to_json();
  plan.parameters["gate_decay_rate"] = localization_gate(p.disorder, p.energy, p.gate, seeds, workers);
  const double nu = calibrate_nu(p.disorder, p.n_sites, p.dos, std::vector<double>{p.energy}, seeds, workers)[0];
  plan.parameters["nu"] = nu;
  plan.n_records = p.n_samples;
  plan.record = [p, seeds, nu](std::size_t i) {
    const auto t = tridiagonal_form(sample_weights(p.disorder, p.n_sites, seeds, i));
    Record rec;
    for (const auto& w : p.windows) {
      const auto iv = energy_window(w, p.energy, nu, p.n_sites);
      rec.push_back(static_cast<double>(t.count_in(iv.lo, iv.hi)));
    }
    return rec;
  };
  plan.finish = [p, seeds, params = plan.parameters](const std::vector<Record>& recs) {
    Outcome out;
    CountRecord cr;
    cr.windows = p.windows;
    Table counts{"counts.csv", {"sample", "window", "count"}, {}};
    for (std::size_t s = 0; s < recs.size(); ++s) {
      std::vector<unsigned> c;
      for (std::size_t j = 0; j < recs[s].size(); ++j) {
        c.push_back(static_cast<unsigned>(recs[s][j]));
        counts.rows.push_back({std::to_string(s), std::to_string(j), std::to_string(c.back())});
      }
      cr.counts.push_back(std::move(c));
    }
    std::vector<double> mu;
    for (const auto& w : p.windows) mu.push_back(w.length());
    const auto fit = poisson_fit(cr, mu, p.k);
    const auto cal = poisson_fit(synthetic_poisson_counts(p.windows, p.calibration_samples, seeds), mu);
    Table fit_table{"fit.csv", {"window", "k", "empirical", "poisson", "tv"}, {}};
    for (std::size_t j = 0; j < fit.windows.size(); ++j) {
      const auto& w = fit.windows[j];
      for (std::size_t kk = 0; kk < w.empirical.size(); ++kk)
        fit_table.rows.push_back({std::to_string(j), std::to_string(kk), format_double(w.empirical[kk]),
                                  format_double(w.poisson[kk]), format_double(w.tv)});
      ExperimentResult r;
      r.name = "levelstats";
      r.label = "tv_window=" + std::to_string(j);
      r.parameters = params;
      r.estimate = w.tv;
      r.reference_bound = p.max_tv;
      r.verdict = w.tv <= p.max_tv;
      r.verdict_rule = "total variation to Poisson(|U|) <= max_tv";
      r.statistics["intensity"] = w.intensity;
      r.statistics["empirical"] = w.empirical;
      r.statistics["poisson"] = w.poisson;
      r.statistics["calibration_tv"] = cal.windows[j].tv;
      out.results.push_back(std::move(r));
    }
    ExperimentResult c;
    c.name = "levelstats";
    c.label = "calibration";
    c.parameters = params;
    c.estimate = cal.max_tv();
    c.reference_bound = p.max_calibration_tv;
    c.verdict = cal.max_tv() <= p.max_calibration_tv;
    c.verdict_rule = "total variation of synthetic Poisson counts <= max_calibration_tv";
    c.statistics["n_samples"] = p.calibration_samples;
    out.results.push_back(std::move(c));
    if (fit.joint) {
      auto j = probability_result("levelstats", "joint", params, fit.joint->hits, fit.n_samples);
      j.parameters["k"] = fit.joint->k;
      j.statistics["poisson_product"] = fit.joint->poisson_product;
      j.statistics["marginal_product"] = fit.joint->marginal_product;
      out.results.push_back(std::move(j));
    }
    out.tables.push_back(summary_table(out.results));
    out.tables.push_back(std::move(counts));
    out.tables.push_back(std::move(fit_table));
    return out;
  };
  return plan;
}

// ---------------------------------------------------------------------------
// independence across several energies

struct IndependenceParams {
  DisorderSpec disorder = DisorderSpec::uniform(0.1, 1.9);
  std::vector<double> energies = {0.8, 2.0};
  std::vector<Window> windows = {{-1.0, 1.0}};
  std::vector<unsigned> k = {0};
  std::size_t n_sites = 513;
  std::size_t n_samples = 5000;
  double max_discrepancy = 0.03;
  double max_correlation = 0.07;
  bool allow_low_energy = false;
  DosParams dos;
  GateParams gate;

  static IndependenceParams from_json(const json& j) {
    IndependenceParams p;
    ParamReader r(j);
    p.disorder = disorder_or(r, p.disorder);
    p.energies = r.numbers("energies", p.energies);
    p.windows = windows_from_json(r.raw("windows"), "windows", p.windows);
    p.k = targets_from_json(r.raw("k"), p.windows.size(), "k");
    p.n_sites = r.count("n_sites", p.n_sites);
    p.n_samples = r.count("n_samples", p.n_samples);
    p.max_discrepancy = r.number("max_discrepancy", p.max_discrepancy);
    p.max_correlation = r.number("max_correlation", p.max_correlation);
    p.allow_low_energy = r.flag("allow_low_energy", p.allow_low_energy);
    p.dos = dos_from_json(r.raw("dos"));
    p.gate = gate_from_json(r.raw("gate"));
    r.finish();
    p.validate();
    return p;
  }
  json to_json() const {
    return {{"disorder", disorder_to_json(disorder)}, {"energies", energies}, {"windows", windows_to_json(windows)},
            {"k", k}, {"n_sites", n_sites}, {"n_samples", n_samples}, {"max_discrepancy", max_discrepancy},
            {"max_correlation", max_correlation}, {"allow_low_energy", allow_low_energy},
            {"dos", dos_to_json(dos)}, {"gate", gate_to_json(gate)}};
  }
  void validate() const {
    require_sites(n_sites);
    require_samples(n_samples);
    for (std::size_t i = 0; i < energies.size(); ++i) {
      require_reference_energy(energies[i], disorder.beta0(), allow_low_energy);
      for (std::size_t j = i + 1; j < energies.size(); ++j)
        if (energies[i] == energies[j]) throw ConfigError("energies", "energies must be pairwise distinct");
    }
    validate_windows(windows);
    if (k.size() != windows.size()) throw ConfigError("k", "expected one count per window");
  }
};

inline Plan independence_plan(const IndependenceParams& p, const SeedPolicy& seeds, std::size_t workers) {
  p.validate();
  Plan plan;
  plan.name = "independence";
  plan.parameters = p.to_json();
  for (double e : p.energies)
    plan.parameters["gate_decay_rate"].push_back(localization_gate(p.disorder, e, p.gate, seeds, workers));
  const auto nu = calibrate_nu(p.disorder, p.n_sites, p.dos, p.energies, seeds, workers);
  plan.parameters["nu"] = nu;
  plan.n_records = p.n_samples;
  plan.record = [p, seeds, nu](std::size_t i) {
    const auto t = tridiagonal_form(sample_weights(p.disorder, p.n_sites, seeds, i));
    Record rec;
    for (std::size_t e = 0; e < p.energies.size(); ++e)
      for (const auto& w : p.windows) {
        const auto iv = energy_window(w, p.energies[e], nu[e], p.n_sites);
        rec.push_back(static_cast<double>(t.count_in(iv.lo, iv.hi)));
      }
    return rec;
  };
  plan.finish = [p, params = plan.parameters](const std::vector<Record>& recs) {
    Outcome out;
    const std::size_t ne = p.energies.size(), nw = p.windows.size(), n = recs.size();
    const double dn = static_cast<double>(n);
    // event A_e: the count vector at energy e equals k
    std::vector<std::vector<char>> hit(ne, std::vector<char>(n));
    std::vector<std::vector<double>> total(ne, std::vector<double>(n));
    std::vector<double> marginal(ne, 0.0);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t e = 0; e < ne; ++e) {
        bool h = true;
        double tot = 0;
        for (std::size_t j = 0; j < nw; ++j) {
          h = h && recs[s][e * nw + j] == p.k[j];
          tot += recs[s][e * nw + j];
        }
        hit[e][s] = h;
        total[e][s] = tot;
        marginal[e] += h / dn;
      }
    double poisson_single = 1.0;
    for (std::size_t j = 0; j < nw; ++j) poisson_single *= poisson_pmf(p.k[j], p.windows[j].length());
    double worst_disc = 0.0, worst_corr = 0.0;
    auto joint_result = [&](const std::vector<std::size_t>& set) {
      std::uint64_t hits = 0;
      for (std::size_t s = 0; s < n; ++s) {
        bool all = true;
        for (std::size_t e : set) all = all && hit[e][s];
        hits += all;
      }
      std::string label = "joint";
      double product = 1.0;
      json es = json::array();
      for (std::size_t e : set) {
        label += ":" + format_double(p.energies[e]);
        product *= marginal[e];
        es.push_back(p.energies[e]);
      }
      auto r = probability_result("independence", label, params, hits, n);
      r.parameters["event_energies"] = es;
      const double disc = std::abs(*r.estimate - product);
      r.reference_bound = p.max_discrepancy;
      r.verdict = disc <= p.max_discrepancy;
      r.verdict_rule = "|P_joint - product of marginals| <= max_discrepancy";
      r.statistics["product_of_marginals"] = product;
      r.statistics["discrepancy"] = disc;
      r.statistics["poisson_product"] = std::pow(poisson_single, static_cast<double>(set.size()));
      worst_disc = std::max(worst_disc, disc);
      return r;
    };
    if (ne == 1) out.results.push_back(joint_result({0}));
    for (std::size_t a = 0; a < ne; ++a)
      for (std::size_t b = a + 1; b < ne; ++b) {
        auto r = joint_result({a, b});
        const double corr = correlation(total[a], total[b]);
        r.statistics["count_correlation"] = corr;
        worst_corr = std::max(worst_corr, std::abs(corr));
        out.results.push_back(std::move(r));
        ExperimentResult c;
        c.name = "independence";
        c.label = "correlation:" + format_double(p.energies[a]) + ":" + format_double(p.energies[b]);
        c.parameters = params;
        c.estimate = corr;
        c.reference_bound = p.max_correlation;
        c.verdict = std::abs(corr) <= p.max_correlation;
        c.verdict_rule = "|corr(total counts)| <= max_correlation";
        out.results.push_back(std::move(c));
      }
    if (ne >= 3) {
      std::vector<std::size_t> all(ne);
      for (std::size_t e = 0; e < ne; ++e) all[e] = e;
      out.results.push_back(joint_result(all));
    }
    ExperimentResult m;
    m.name = "independence";
    m.label = "max_discrepancy";
    m.parameters = params;
    m.estimate = worst_disc;
    m.reference_bound = p.max_discrepancy;
    m.verdict = worst_disc <= p.max_discrepancy;
    m.verdict_rule = "largest joint-vs-product discrepancy over the event set <= max_discrepancy";
    m.statistics["max_abs_correlation"] = worst_corr;
    for (std::size_t e = 0; e < ne; ++e) m.statistics["marginals"].push_back(marginal[e]);
    out.results.push_back(std::move(m));
    out.tables.push_back(summary_table(out.results));
    return out;
  };
  return plan;
}

// ---------------------------------------------------------------------------
// heavy-tailed weights

struct HeavyTailParams {
  DisorderSpec disorder = DisorderSpec::heavy_near_zero(1.0, 1.0);
  std::size_t L = 512;
  double delta = 0.5;
  double beta = 0.75;
  double epsilon = 0.25;
  double energy = 1.0;
  std::size_t n_samples = 10000;
  double min_verification = 0.99;
  bool allow_low_energy = false;

  static HeavyTailParams from_json(const json& j) {
    HeavyTailParams p;
    ParamReader r(j);
    p.disorder = disorder_or(r, p.disorder);
    p.L = r.count("L", p.L);
    p.delta = r.number("delta", p.delta);
    p.beta = r.number("beta", p.beta);
    p.epsilon = r.number("epsilon", p.epsilon);
    p.energy = r.number("energy", p.energy);
    p.n_samples = r.count("n_samples", p.n_samples);
    p.min_verification = r.number("min_verification", p.min_verification);
    p.allow_low_energy = r.flag("allow_low_energy", p.allow_low_energy);
    r.finish();
    p.validate();
    return p;
  }
  json to_json() const {
    return {{"disorder", disorder_to_json(disorder)}, {"L", L}, {"delta", delta}, {"beta", beta},
            {"epsilon", epsilon}, {"energy", energy}, {"n_samples", n_samples},
            {"min_verification", min_verification}, {"allow_low_energy", allow_low_energy}};
  }
  double threshold() const { return std::exp(-std::pow(std::log(static_cast<double>(L)), delta)); }
  void validate() const {
    if (disorder.kind() != DisorderKind::HeavyNearZero)
      throw ConfigError("disorder.kind", "the heavy-tail experiment needs kind heavy_near_zero");
    if (L < 2) throw ConfigError("L", "must be at least 2");
    require_samples(n_samples);
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta", "must lie in (0, 1)");
    if (!(beta > 0.5 && beta < 1.0)) throw ConfigError("beta", "must lie in (1/2, 1)");
    if (!(epsilon > 0.0 && epsilon < beta)) throw ConfigError("epsilon", "must lie in (0, beta)");
    require_reference_energy(energy, disorder.beta0(), allow_low_energy);
  }
};

inline Plan heavytail_plan(const HeavyTailParams& p, const SeedPolicy& seeds) {
  p.validate();
  Plan plan;
  plan.name = "heavytail";
  plan.parameters = p.to_json();
  plan.parameters["weight_threshold"] = p.threshold();
  plan.n_records = p.n_samples;
  plan.record = [p, seeds](std::size_t i) {
    const auto f = sample_weights(p.disorder, 2 * p.L + 1, seeds, i);
    if (f.min_weight() <= p.threshold()) return Record{1.0, -1.0};
    const auto [k, e] = tridiagonal_form(f).nearest(p.energy);
    const auto w = lower_bound_window_heavy(inverse_iteration(f, e), p.beta, p.epsilon);
    return Record{0.0, w.verified ? 1.0 : 0.0};
  };
  plan.finish = [p, params = plan.parameters](const std::vector<Record>& recs) {
    Outcome out;
    std::uint64_t bad = 0, good = 0, verified = 0;
    for (const auto& r : recs) {
      if (r[0] > 0.5) ++bad;
      else {
        ++good;
        verified += r[1] > 0.5;
      }
    }
    auto b = probability_result("heavytail", "bad_event", params, bad, recs.size());
    b.reference_bound = heavy_union_bound(p.disorder, p.L, p.delta);
    b.slack = bernoulli_slack(*b.reference_bound, recs.size());
    b.verdict = *b.estimate <= *b.reference_bound + *b.slack;
    b.verdict_rule = "empirical frequency <= union bound + 3 sigma";
    out.results.push_back(b);
    auto v = probability_result("heavytail", "window_verified", params, verified, good);
    v.reference_bound = p.min_verification;
    v.verdict = good > 0 && *v.estimate >= p.min_verification;
    v.verdict_rule = "verification rate on the good event >= min_verification";
    v.statistics["halfwidth"] = static_cast<std::size_t>(
        std::floor(0.25 * std::pow(static_cast<double>(p.L), p.beta - p.epsilon)));
    v.statistics["lower_limit"] = 1.0 - *b.reference_bound - *b.slack;
    out.results.push_back(std::move(v));
    out.tables.push_back(summary_table(out.results));
    return out;
  };
  return plan;
}

// ---------------------------------------------------------------------------
// Laplace-functional identity for three Bernoulli variables

struct LaplaceReport {
  double lhs = 0.0;            // E exp(sum a_i X_i)
  double product = 0.0;        // prod E exp(a_i X_i)
  double expansion_joint = 0.0;    // inclusion-exclusion form of lhs
  double expansion_product = 0.0;  // expanded form of product
  std::array<double, 3> pair_brackets{};  // P(X_i = X_j = 1) - P(X_i = 1) P(X_j = 1), pairs 01, 02, 12
  double triple_bracket = 0.0;
  double correlation_terms = 0.0;
  double discrepancy = 0.0;  // |lhs - product - correlation_terms|
};

/// pmf[x] is P(X = x) with bit i of x giving X_{i+1}.
inline LaplaceReport laplace_identity_check(std::span<const double> pmf, std::span<const double> a) {
  if (pmf.size() != 8 || a.size() != 3) throw ConfigError("pmf", "expected 8 atoms and 3 exponents");
  double total = 0.0;
  for (double q : pmf) {
    if (!(q >= 0.0)) throw ConfigError("pmf", "probabilities must be non-negative");
    total += q;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("pmf", "probabilities must sum to 1");
  auto prob_all = [&](unsigned mask) {
    double s = 0.0;
    for (unsigned x = 0; x < 8; ++x)
      if ((x & mask) == mask) s += pmf[x];
    return s;
  };
  std::array<double, 3> m{}, em{};
  for (unsigned i = 0; i < 3; ++i) {
    m[i] = prob_all(1u << i);
    em[i] = std::expm1(a[i]);
  }
  LaplaceReport r;
  for (unsigned x = 0; x < 8; ++x) {
    double s = 0.0;
    for (unsigned i = 0; i < 3; ++i)
      if (x >> i & 1u) s += a[i];
    r.lhs += pmf[x] * std::exp(s);
  }
  r.product = 1.0;
  for (unsigned i = 0; i < 3; ++i) r.product *= 1.0 + em[i] * m[i];
  const unsigned pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  const double triple = prob_all(7u);
  r.expansion_joint = 1.0 + em[0] * m[0] + em[1] * m[1] + em[2] * m[2] + em[0] * em[1] * em[2] * triple;
  r.expansion_product = 1.0 + em[0] * m[0] + em[1] * m[1] + em[2] * m[2] + em[0] * em[1] * em[2] * m[0] * m[1] * m[2];
  for (unsigned q = 0; q < 3; ++q) {
    const unsigned i = pairs[q][0], j = pairs[q][1];
    const double pij = prob_all((1u << i) | (1u << j));
    r.expansion_joint += em[i] * em[j] * pij;
    r.expansion_product += em[i] * em[j] * m[i] * m[j];
    r.pair_brackets[q] = pij - m[i] * m[j];
    r.correlation_terms += em[i] * em[j] * r.pair_brackets[q];
  }
  r.triple_bracket = triple - m[0] * m[1] * m[2];
  r.correlation_terms += em[0] * em[1] * em[2] * r.triple_bracket;
  r.discrepancy = std::abs(r.lhs - r.product - r.correlation_terms);
  return r;
}

struct LaplaceParams {
  std::size_t n_pmfs = 1000;
  double a_lo = -2.0;
  double a_hi = 2.0;
  double tolerance = 1e-12;

  static LaplaceParams from_json(const json& j) {
    LaplaceParams p;
    ParamReader r(j);
    p.n_pmfs = r.count("n_pmfs", p.n_pmfs);
    p.a_lo = r.number("a_lo", p.a_lo);
    p.a_hi = r.number("a_hi", p.a_hi);
    p.tolerance = r.number("tolerance", p.tolerance);
    r.finish();
    p.validate();
    return p;
  }
  json to_json() const { return {{"n_pmfs", n_pmfs}, {"a_lo", a_lo}, {"a_hi", a_hi}, {"tolerance", tolerance}}; }
  void validate() const {
    require_samples(n_pmfs, "n_pmfs");
    if (!(a_hi >= a_lo)) throw ConfigError("a_hi", "must be at least a_lo");
  }
};

inline Plan laplace_plan(const LaplaceParams& p, const SeedPolicy& seeds) {
  p.validate();
  Plan plan;
  plan.name = "laplace-check";
  plan.parameters = p.to_json();
  plan.n_records = p.n_pmfs;
  plan.record = [p, seeds](std::size_t i) {
    auto rng = seeds.stream(i, StreamDomain::Synthetic);
    std::array<double, 8> pmf{};
    double s = 0.0;
    for (double& q : pmf) s += q = -std::log(rng.uniform_open());
    for (double& q : pmf) q /= s;
    const std::array<double, 3> a = {rng.uniform(p.a_lo, p.a_hi), rng.uniform(p.a_lo, p.a_hi),
                                     rng.uniform(p.a_lo, p.a_hi)};
    const auto r = laplace_identity_check(pmf, a);
    return Record{r.discrepancy, std::abs(r.lhs - r.expansion_joint), std::abs(r.product - r.expansion_product)};
  };
  plan.finish = [p, params = plan.parameters](const std::vector<Record>& recs) {
    Outcome out;
    const char* labels[3] = {"difference_formula", "joint_expansion", "product_expansion"};
    for (std::size_t k = 0; k < 3; ++k) {
      double worst = 0.0;
      for (const auto& r : recs) worst = std::max(worst, r[k]);
      ExperimentResult res;
      res.name = "laplace-check";
      res.label = labels[k];
      res.parameters = params;
      res.estimate = worst;
      res.reference_bound = p.tolerance;
      res.verdict = worst <= p.tolerance;
      res.verdict_rule = "largest absolute discrepancy <= tolerance";
      res.statistics["n_pmfs"] = recs.size();
      out.results.push_back(std::move(res));
    }
    out.tables.push_back(summary_table(out.results));
    return out;
  };
  return plan;
}

// ---------------------------------------------------------------------------
// perturbation formulas against finite differences

struct PerturbationParams {
  DisorderSpec disorder = DisorderSpec::uniform(0.5, 1.5);
  std::vector<std::size_t> sizes = {16, 32, 64};
  std::size_t n_samples = 100;  // eigenpairs
  double gap_min = 5e-2;
  double gradient_step = 1e-5;
  double hessian_step = 1e-3;
  double gradient_tolerance = 1e-6;
  double sum_rule_tolerance = 1e-10;
  double hessian_tolerance = 1e-4;
  std::size_t separation_pairs = 1000;
  std::size_t separation_sites = 257;
  double energy = 0.8;
  double energy2 = 2.0;

  static PerturbationParams from_json(const json& j) {
    PerturbationParams p;
    ParamReader r(j);
    p.disorder = disorder_or(r, p.disorder);
    p.sizes = r.counts("sizes", p.sizes);
    p.n_samples = r.count("n_samples", p.n_samples);
    p.gap_min = r.number("gap_min", p.gap_min);
    p.gradient_step = r.number("gradient_step", p.gradient_step);
    p.hessian_step = r.number("hessian_step", p.hessian_step);
    p.gradient_tolerance = r.number("gradient_tolerance", p.gradient_tolerance);
    p.sum_rule_tolerance = r.number("sum_rule_tolerance", p.sum_rule_tolerance);
    p.hessian_tolerance = r.number("hessian_tolerance", p.hessian_tolerance);
    p.separation_pairs = r.count("separation_pairs", p.separation_pairs);
    p.separation_sites = r.count("separation_sites", p.separation_sites);
    p.energy = r.number("energy", p.energy);
    p.energy2 = r.number("energy2", p.energy2);
    r.finish();
    p.validate();
    return p;
  }
  json to_json() const {
    return {{"disorder", disorder_to_json(disorder)}, {"sizes", sizes}, {"n_samples", n_samples},
            {"gap_min", gap_min}, {"gradient_step", gradient_step}, {"hessian_step", hessian_step},
            {"gradient_tolerance", gradient_tolerance}, {"sum_rule_tolerance", sum_rule_tolerance},
            {"hessian_tolerance", hessian_tolerance}, {"separation_pairs", separation_pairs},
            {"separation_sites", separation_sites}, {"energy", energy}, {"energy2", energy2}};
  }
  void validate() const {
    for (std::size_t n : sizes) require_sites(n, "sizes");
    require_sites(separation_sites, "separation_sites");
    if (!(gradient_step > 0.0)) throw ConfigError("gradient_step", "must be positive");
    if (!(hessian_step > 0.0)) throw ConfigError("hessian_step", "must be positive");
    if (energy == energy2) throw ConfigError("energy2", "must differ from energy");
    if (disorder.alpha0() <= 0.0 && disorder.kind() != DisorderKind::HeavyNearZero)
      throw ConfigError("disorder", "weights must stay positive under finite-difference steps");
  }
};

namespace detail {

inline double tracked_eigenvalue(const WeightField& f, double e) {
  const auto t = tridiagonal_form(f);
  return t.nearest(e).second;
}

/// Max-entry relative errors {gradient, sum rule, hessian} for one eigenpair.
inline Record perturbation_record(const PerturbationParams& p, const SeedPolicy& seeds, std::size_t i) {
  const std::size_t n = p.sizes[i % p.sizes.size()];
  const auto f = sample_weights(p.disorder, n, seeds, i);
  const auto d = decompose(f);
  auto rng = seeds.stream(i, StreamDomain::Parameter);
  std::size_t j = 1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(n - 1)) % (n - 1);
  std::size_t best = j;
  for (std::size_t step = 0; step < n - 1 && d.gaps[j] < p.gap_min; ++step) {
    j = 1 + j % (n - 1);
    if (d.gaps[j] > d.gaps[best]) best = j;
  }
  if (d.gaps[j] < p.gap_min) j = best;
  const double e = d.eigenvalues[j];
  const auto g = gradient(d, j);
  double gscale = 0.0, gerr = 0.0;
  for (double x : g) gscale = std::max(gscale, std::abs(x));
  for (std::size_t b = 0; b < n; ++b) {
    const double h = p.gradient_step;
    const double fd = (tracked_eigenvalue(f.with_bond(b, f[b] + h), e) -
                       tracked_eigenvalue(f.with_bond(b, f[b] - h), e)) / (2 * h);
    gerr = std::max(gerr, std::abs(fd - g[b]));
  }
  const double sum_err = std::abs(sum_rule(f, g) - e) / e;
  const auto hm = hessian(d, j);
  const double hscale = hm.max_abs(), h = p.hessian_step;
  double herr = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) {
      auto shifted = [&](double sa, double sb) {
        const WeightField q = f.with_bond(a, f[a] + sa);
        return tracked_eigenvalue(q.with_bond(b, q[b] + sb), e);
      };
      auto second = [&](double s) {
        return a == b ? (shifted(s, 0) - 2 * e + shifted(-s, 0)) / (s * s)
                      : (shifted(s, s) - shifted(s, -s) - shifted(-s, s) + shifted(-s, -s)) / (4 * s * s);
      };
      // Richardson step h, h/2 removes the O(h^2) truncation term
      const double fd = (4 * second(0.5 * h) - second(h)) / 3;
      herr = std::max(herr, std::abs(fd - hm(a, b)));
    }
  return Record{0.0, gscale > 0 ? gerr / gscale : gerr, sum_err, hscale > 0 ? herr / hscale : herr,
                static_cast<double>(n), d.gaps[j]};
}

inline Record separation_record(const PerturbationParams& p, const SeedPolicy& seeds, std::size_t i) {
  const auto f = sample_weights(p.disorder, p.separation_sites, seeds, i);
  const auto t = tridiagonal_form(f);
  const double e1 = t.nearest(p.energy).second, e2 = t.nearest(p.energy2).second;
  const auto u = inverse_iteration(f, e1), v = inverse_iteration(f, e2);
  const auto s = gradient_separation(u, v, e1 - e2, p.disorder.beta0());
  return Record{1.0, s.violated ? 1.0 : 0.0, s.l1_distance, s.lower_bound};
}

}  // namespace detail

inline Plan perturbation_plan(const PerturbationParams& p, const SeedPolicy& seeds) {
  p.validate();
  Plan plan;
  plan.name = "check-perturbation";
  plan.parameters = p.to_json();
  plan.n_records = p.n_samples + p.separation_pairs;
  plan.record = [p, seeds](std::size_t i) {
    return i < p.n_samples ? detail::perturbation_record(p, seeds, i) : detail::separation_record(p, seeds, i);
  };
  plan.finish = [p, params = plan.parameters](const std::vector<Record>& recs) {
    Outcome out;
    double worst[3] = {0, 0, 0};
    double min_gap = std::numeric_limits<double>::infinity();
    std::uint64_t violations = 0, pairs = 0;
    double min_margin = std::numeric_limits<double>::infinity();
    for (const auto& r : recs) {
      if (r[0] == 0.0) {
        for (int k = 0; k < 3; ++k) worst[k] = std::max(worst[k], r[1 + k]);
        min_gap = std::min(min_gap, r[5]);
      } else {
        ++pairs;
        violations += r[1] > 0.5;
        min_margin = std::min(min_margin, r[2] / r[3]);
      }
    }
    const char* labels[3] = {"gradient", "sum_rule", "hessian"};
    const double tol[3] = {p.gradient_tolerance, p.sum_rule_tolerance, p.hessian_tolerance};
    for (int k = 0; k < 3; ++k) {
      ExperimentResult r;
      r.name = "check-perturbation";
      r.label = labels[k];
      r.parameters = params;
      r.estimate = worst[k];
      r.reference_bound = tol[k];
      r.verdict = worst[k] <= tol[k];
      r.verdict_rule = "largest relative error <= tolerance";
      r.statistics["eigenpairs"] = p.n_samples;
      r.statistics["min_gap"] = std::isfinite(min_gap) ? min_gap : 0.0;
      out.results.push_back(std::move(r));
    }
    if (p.separation_pairs > 0) {
      ExperimentResult r;
      r.name = "check-perturbation";
      r.label = "separation";
      r.parameters = params;
      r.estimate = static_cast<double>(violations);
      r.reference_bound = 0.0;
      r.verdict = violations == 0;
      r.verdict_rule = "no pair with ||grad E - grad E'||_1 below Delta E |Lambda|^{-1/2} / (2 beta0)";
      r.statistics["pairs"] = pairs;
      r.statistics["min_ratio_to_bound"] = min_margin;
      out.results.push_back(std::move(r));
    }
    out.tables.push_back(summary_table(out.results));
    return out;
  };
  return plan;
}

// ---------------------------------------------------------------------------
// 10x10 determinant identities

struct DeterminantParams {
  std::size_t draws = 1000;
  double w_lo = 0.5, w_hi = 1.5;
  double e_lo = 0.2, e_hi = 4.0;
  double tolerance = 1e-9;
  double zero_tolerance = 1e-10;

  static DeterminantParams from_json(const json& j) {
    DeterminantParams p;
    ParamReader r(j);
    p.draws = r.count("draws", p.draws);
    p.w_lo = r.number("w_lo", p.w_lo);
    p.w_hi = r.number("w_hi", p.w_hi);
    p.e_lo = r.number("e_lo", p.e_lo);
    p.e_hi = r.number("e_hi", p.e_hi);
    p.tolerance = r.number("tolerance", p.tolerance);
    p.zero_tolerance = r.number("zero_tolerance", p.zero_tolerance);
    r.finish();
    p.validate();
    return p;
  }
  json to_json() const {
    return {{"draws", draws}, {"w_lo", w_lo}, {"w_hi", w_hi}, {"e_lo", e_lo}, {"e_hi", e_hi},
            {"tolerance", tolerance}, {"zero_tolerance", zero_tolerance}};
  }
  void validate() const {
    require_samples(draws, "draws");
    if (!(w_lo > 0.0 && w_hi >= w_lo)) throw ConfigError("w_lo", "need 0 < w_lo <= w_hi");
    if (!(e_lo > 0.0 && e_hi > e_lo)) throw ConfigError("e_lo", "need 0 < e_lo < e_hi");
  }
};

namespace detail {

/// Sets the case's vanishing factor to zero and returns the size of the
/// remaining factors, the scale for |det|.
inline double zero_factor(SystemCase& s) {
  const double a = s.w_m2, b = s.w_m1, d = s.w_p1, E = s.e, F = s.e2;
  switch (s.id) {
    case CaseId::A0:
      s.w_0 = (E - F) / 4.0;
      return std::abs(4.0 * E / F * (E + F) * a * d) * std::max(1.0, std::abs(s.w_0));
    case CaseId::A1:
      s.w_0 = (E + F) * (E + F) / (4.0 * b);
      return std::abs(4.0 * E / F * a * d) * std::max(1.0, b * s.w_0);
    case CaseId::A2:
      s.w_0 = (E - F) / 4.0;
      return std::abs(4.0 * E * (E + F) * a * d) * std::max(1.0, std::abs(s.w_0));
    case CaseId::A3:
      s.w_0 = (E - F) / 4.0;
      return std::abs(E * F * a * d * (4.0 * b + F - E)) * std::max({1.0, std::abs(F - E), 4.0 * std::abs(s.w_0)});
  }
  return 1.0;
}

}  // namespace detail

inline Plan determinant_plan(const DeterminantParams& p, const SeedPolicy& seeds) {
  p.validate();
  Plan plan;
  plan.name = "check-determinants";
  plan.parameters = p.to_json();
  plan.n_records = 4 * p.draws;
  plan.record = [p, seeds](std::size_t i) {
    auto rng = seeds.stream(i, StreamDomain::Parameter);
    SystemCase c;
    c.id = static_cast<CaseId>(i / p.draws);
    c.w_m2 = rng.uniform(p.w_lo, p.w_hi);
    c.w_m1 = rng.uniform(p.w_lo, p.w_hi);
    c.w_0 = rng.uniform(p.w_lo, p.w_hi);
    c.w_p1 = rng.uniform(p.w_lo, p.w_hi);
    do {
      c.e = rng.uniform(p.e_lo, p.e_hi);
      c.e2 = rng.uniform(p.e_lo, p.e_hi);
    } while (c.e == c.e2);
    const double lu = std::abs(determinant(build_system(c)));
    const double cf = det_factored(c);
    const double rel = std::abs(lu - cf) / std::max({lu, cf, 1e-300});
    SystemCase z = c;
    const double scale = detail::zero_factor(z);
    const double zero = std::abs(determinant(build_system(z))) / scale;
    return Record{rel, zero};
  };
  plan.finish = [p, params = plan.parameters](const std::vector<Record>& recs) {
    Outcome out;
    Table t{"determinants.csv", {"case", "draws", "max_rel_err"}, {}};
    for (std::size_t k = 0; k < 4; ++k) {
      double worst = 0.0, worst_zero = 0.0;
      for (std::size_t s = 0; s < p.draws; ++s) {
        worst = std::max(worst, recs[k * p.draws + s][0]);
        worst_zero = std::max(worst_zero, recs[k * p.draws + s][1]);
      }
      const std::string name = to_string(static_cast<CaseId>(k));
      t.rows.push_back({name, std::to_string(p.draws), format_double(worst)});
      ExperimentResult r;
      r.name = "check-determinants";
      r.label = name;
      r.parameters = params;
      r.estimate = worst;
      r.reference_bound = p.tolerance;
      r.verdict = worst <= p.tolerance && worst_zero <= p.zero_tolerance;
      r.verdict_rule = "closed form vs pivoted elimination rel <= tolerance; zeroed factor |det|/scale <= zero_tolerance";
      r.statistics["max_zero_det"] = worst_zero;
      out.results.push_back(std::move(r));
    }
    out.tables.push_back(summary_table(out.results));
    out.tables.push_back(std::move(t));
    return out;
  };
  return plan;
}

// ---------------------------------------------------------------------------
// spectra and density of states

struct SpectrumParams {
  DisorderSpec disorder = DisorderSpec::uniform(0.5, 1.5);
  std::size_t n_sites = 64;
  std::size_t n_samples = 1;

  static SpectrumParams from_json(const json& j) {
    SpectrumParams p;
    ParamReader r(j);
    p.disorder = disorder_or(r, p.disorder);
    p.n_sites = r.count("n_sites", p.n_sites);
    p.n_samples = r.count("n_samples", p.n_samples);
    r.finish();
    require_sites(p.n_sites);
    require_samples(p.n_samples);
    return p;
  }
  json to_json() const {
    return {{"disorder", disorder_to_json(disorder)}, {"n_sites", n_sites}, {"n_samples", n_samples}};
  }
};

inline Plan spectrum_plan(const SpectrumParams& p, const SeedPolicy& seeds) {
  Plan plan;
  plan.name = "sample-spectrum";
  plan.parameters = p.to_json();
  plan.n_records = p.n_samples;
  plan.record = [p, seeds](std::size_t i) {
    return eigenvalues(sample_weights(p.disorder, p.n_sites, seeds, i), SampleOrigin{seeds.master_seed(), i, p.n_sites});
  };
  plan.finish = [p, params = plan.parameters](const std::vector<Record>& recs) {
    Outcome out;
    Table t{"spectrum.csv", {"sample", "index", "eigenvalue"}, {}};
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t s = 0; s < recs.size(); ++s)
      for (std::size_t k = 0; k < recs[s].size(); ++k) {
        t.rows.push_back({std::to_string(s), std::to_string(k), format_double(recs[s][k])});
        lo = std::min(lo, recs[s][k]);
        hi = std::max(hi, recs[s][k]);
      }
    ExperimentResult r;
    r.name = "sample-spectrum";
    r.label = "range";
    r.parameters = params;
    r.estimate = hi;
    r.reference_bound = 4.0 * p.disorder.beta0();
    r.verdict = hi <= 4.0 * p.disorder.beta0() * (1 + 1e-12) && lo >= -1e-10 * std::max(1.0, hi);
    r.verdict_rule = "all eigenvalues within [0, 4 beta0]";
    r.statistics["min"] = lo;
    r.statistics["max"] = hi;
    out.results.push_back(std::move(r));
    out.tables.push_back(summary_table(out.results));
    out.tables.push_back(std::move(t));
    return out;
  };
  return plan;
}

struct DosRunParams {
  DisorderSpec disorder = DisorderSpec::uniform(0.5, 1.5);
  std::size_t n_sites = 513;
  std::size_t n_samples = 500;
  Bandwidth bandwidth;
  std::size_t grid_points = 401;

  static DosRunParams from_json(const json& j) {
    DosRunParams p;
    ParamReader r(j);
    p.disorder = disorder_or(r, p.disorder);
    p.n_sites = r.count("n_sites", p.n_sites);
    p.n_samples = r.count("n_samples", p.n_samples);
    p.bandwidth = bandwidth_from_json(r.raw("bandwidth"), "bandwidth", p.bandwidth);
    p.grid_points = r.count("grid_points", p.grid_points);
    r.finish();
    require_sites(p.n_sites);
    require_samples(p.n_samples);
    if (p.grid_points < 2) throw ConfigError("grid_points", "must be at least 2");
    return p;
  }
  json to_json() const {
    return {{"disorder", disorder_to_json(disorder)}, {"n_sites", n_sites}, {"n_samples", n_samples},
            {"bandwidth", bandwidth_to_json(bandwidth)}, {"grid_points", grid_points}};
  }
};

inline Plan dos_plan(const DosRunParams& p, const SeedPolicy& seeds) {
  Plan plan;
  plan.name = "dos";
  plan.parameters = p.to_json();
  plan.n_records = p.n_samples;
  plan.record = [p, seeds](std::size_t i) {
    return eigenvalues(sample_weights(p.disorder, p.n_sites, seeds, i, StreamDomain::Calibration),
                       SampleOrigin{seeds.master_seed(), i, p.n_sites});
  };
  plan.finish = [p, params = plan.parameters](const std::vector<Record>& recs) {
    const auto d = dos_from_spectra(recs, p.disorder.beta0(), p.bandwidth, p.grid_points);
    Outcome out;
    Table t{"dos.csv", {"energy", "N_hat", "nu_hat"}, {}};
    double integral = 0.0;
    for (std::size_t i = 0; i < d.grid.size(); ++i) {
      t.rows.push_back({format_double(d.grid[i]), format_double(d.n_hat[i]), format_double(d.nu_hat[i])});
      if (i) integral += 0.5 * (d.nu_hat[i] + d.nu_hat[i - 1]) * (d.grid[i] - d.grid[i - 1]);
    }
    ExperimentResult r;
    r.name = "dos";
    r.label = "integral";
    r.parameters = params;
    r.parameters["bandwidth_value"] = d.bandwidth;
    r.estimate = integral;
    r.reference_bound = 1.0;
    r.verdict = std::abs(integral - 1.0) <= 0.01 && std::abs(d.n_hat.back() - 1.0) <= 1e-9;
    r.verdict_rule = "integral of nu_hat within 0.01 of 1 and N_hat(4 beta0) = 1";
    out.results.push_back(std::move(r));
    out.tables.push_back(summary_table(out.results));
    out.tables.push_back(std::move(t));
    return out;
  };
  return plan;
}

// ---------------------------------------------------------------------------
// registry

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {
      "sample-spectrum", "dos",        "levelstats",         "wegner",             "minami",       "decorrelate",
      "independence",    "heavytail", "check-perturbation", "check-determinants", "laplace-check"};
  return names;
}

inline std::string experiment_list() {
  std::string s;
  for (const auto& n : experiment_names()) s += (s.empty() ? "" : ", ") + n;
  return s;
}

/// Parses, validates and re-serializes experiment parameters.
inline json canonical_parameters(const std::string& name, const json& params) {
  if (name == "sample-spectrum") return SpectrumParams::from_json(params).to_json();
  if (name == "dos") return DosRunParams::from_json(params).to_json();
  if (name == "levelstats") return LevelStatsParams::from_json(params).to_json();
  if (name == "wegner") return WegnerParams::from_json(params).to_json();
  if (name == "minami") return MinamiParams::from_json(params).to_json();
  if (name == "decorrelate") return DecorrelationParams::from_json(params).to_json();
  if (name == "independence") return IndependenceParams::from_json(params).to_json();
  if (name == "heavytail") return HeavyTailParams::from_json(params).to_json();
  if (name == "check-perturbation") return PerturbationParams::from_json(params).to_json();
  if (name == "check-determinants") return DeterminantParams::from_json(params).to_json();
  if (name == "laplace-check") return LaplaceParams::from_json(params).to_json();
  throw ConfigError("experiment", "unknown experiment '" + name + "'; valid names: " + experiment_list());
}

inline Plan make_plan(const std::string& name, const json& params, const SeedPolicy& seeds, std::size_t workers) {
  workers = resolve_workers(workers);
  if (name == "sample-spectrum") return spectrum_plan(SpectrumParams::from_json(params), seeds);
  if (name == "dos") return dos_plan(DosRunParams::from_json(params), seeds);
  if (name == "levelstats") return levelstats_plan(LevelStatsParams::from_json(params), seeds, workers);
  if (name == "wegner") return wegner_plan(WegnerParams::from_json(params), seeds);
  if (name == "minami") return minami_plan(MinamiParams::from_json(params), seeds);
  if (name == "decorrelate") return decorrelation_plan(DecorrelationParams::from_json(params), seeds, workers);
  if (name == "independence") return independence_plan(IndependenceParams::from_json(params), seeds, workers);
  if (name == "heavytail") return heavytail_plan(HeavyTailParams::from_json(params), seeds);
  if (name == "check-perturbation") return perturbation_plan(PerturbationParams::from_json(params), seeds);
  if (name == "check-determinants") return determinant_plan(DeterminantParams::from_json(params), seeds);
  if (name == "laplace-check") return laplace_plan(LaplaceParams::from_json(params), seeds);
  throw ConfigError("experiment", "unknown experiment '" + name + "'; valid names: " + experiment_list());
}

}  // namespace spectra
