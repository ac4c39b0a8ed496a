// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "spectra/experiments.hpp"

using namespace spectra;

namespace {

const SeedPolicy kSeeds(20261015);

struct Check {
  bool ok = true;
  std::string detail;
};

void note(Check& c, bool ok, const std::string& what) {
  c.ok = c.ok && ok;
  if (!c.detail.empty()) c.detail += "; ";
  c.detail += what + (ok ? "" : " [fail]");
}

std::string g(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

// Every result carrying a verdict must pass.
void note_outcome(Check& c, const Outcome& out, const std::vector<std::string>& labels = {}) {
  for (const auto& r : out.results) {
    if (!labels.empty() && std::find(labels.begin(), labels.end(), r.label) == labels.end()) continue;
    if (!r.verdict) continue;
    std::string s = r.name + " " + r.label + " = " + (r.estimate ? g(*r.estimate) : "-");
    if (r.reference_bound) s += " vs " + g(*r.reference_bound);
    if (r.slack) s += " + " + g(*r.slack);
    note(c, *r.verdict, s);
  }
}

Check ring_exactness() {
  Check c;
  for (double w : {1.0, 0.7}) {
    for (std::size_t n : {3, 8, 64, 513, 1024}) {
      const auto e = eigenvalues(WeightField::constant(n, w));
      std::vector<double> want(n);
      for (std::size_t k = 0; k < n; ++k) {
        const double s = std::sin(std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
        want[k] = 4 * w * s * s;
      }
      std::sort(want.begin(), want.end());
      double err = 0;
      for (std::size_t k = 0; k < n; ++k) err = std::max(err, std::abs(e[k] - want[k]));
      if (err > 1e-9 * 4 * w) note(c, false, "N=" + std::to_string(n) + " c=" + g(w) + " err " + g(err));
    }
  }
  if (c.ok) note(c, true, "N in {3,8,64,513,1024}, c in {1,0.7} within 1e-9*4c");
  return c;
}

Check kernel_and_range(std::size_t workers) {
  const auto spec = DisorderSpec::uniform(0.5, 1.5);
  const auto worst = parallel_map(0, 1000, workers, [&](std::size_t i) {
    const auto d = decompose(sample_weights(spec, 64, kSeeds, i));
    const auto u = d.vector(0);
    double flat = 0;
    for (double x : u) flat = std::max(flat, std::abs(std::abs(x) - std::abs(u[0])));
    bool same_sign = std::all_of(u.begin(), u.end(), [&](double x) { return x * u[0] > 0; });
    return std::vector<double>{std::abs(d.eigenvalues[0]) / d.operator_norm, same_sign ? flat : 1.0,
                               d.eigenvalues.back() - 4 * spec.beta0()};
  });
  double e1 = 0, flat = 0, top = -1e300;
  for (const auto& w : worst) {
    e1 = std::max(e1, w[0]);
    flat = std::max(flat, w[1]);
    top = std::max(top, w[2]);
  }
  Check c;
  note(c, e1 <= 1e-10, "max |E_1|/||H|| " + g(e1));
  note(c, flat <= 1e-8, "ground vector deviation " + g(flat));
  note(c, top <= 1e-10, "max E_N - 4 beta0 " + g(top));
  return c;
}

Check hellmann_feynman(std::size_t workers) {
  PerturbationParams p;
  p.separation_pairs = 0;
  Check c;
  note_outcome(c, execute(perturbation_plan(p, kSeeds), workers), {"gradient", "sum_rule", "hessian"});
  return c;
}

Check separation(std::size_t workers) {
  PerturbationParams p;
  p.n_samples = 0;
  const auto out = execute(perturbation_plan(p, kSeeds), workers);
  Check c;
  note_outcome(c, out, {"separation"});
  if (const auto* r = out.find("separation"))
    note(c, true, "min ratio to bound " + g(r->statistics["min_ratio_to_bound"].get<double>()));
  return c;
}

Check run_default(const std::string& name, std::size_t workers) {
  Check c;
  note_outcome(c, execute(make_plan(name, json::object(), kSeeds, workers), workers));
  return c;
}

Check wegner_minami(std::size_t workers) {
  Check c;
  note_outcome(c, execute(make_plan("wegner", json::object(), kSeeds, workers), workers));
  note_outcome(c, execute(make_plan("minami", json::object(), kSeeds, workers), workers));
  return c;
}

Check determinism() {
  Check c;
  const std::vector<std::pair<std::string, json>> runs = {
      {"wegner", {{"n_samples", 5000}}},
      {"independence", {{"n_samples", 600}, {"n_sites", 257}, {"dos", {{"samples", 60}}}}},
      {"laplace-check", json::object()},
  };
  for (const auto& [name, params] : runs) {
    std::string first;
    for (std::size_t w : {1, 2, 5}) {
      const auto s = summary_table(execute(make_plan(name, params, kSeeds, w), w).results).str();
      if (first.empty())
        first = s;
      else if (s != first)
        note(c, false, name + " differs at " + std::to_string(w) + " workers");
    }
  }
  if (c.ok) note(c, true, "wegner, independence, laplace-check identical at 1, 2, 5 workers");
  return c;
}

}  // namespace

int main() {
  const std::size_t workers = resolve_workers(0);
  struct Criterion {
    int id;
    const char* title;
    double budget_s;
    std::function<Check()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "ring exactness", 10, ring_exactness},
      {2, "kernel and range", 30, [&] { return kernel_and_range(workers); }},
      {3, "Hellmann-Feynman derivatives", 120, [&] { return hellmann_feynman(workers); }},
      {4, "determinant identities", 10, [&] { return run_default("check-determinants", workers); }},
      {5, "Wegner and Minami bounds", 600, [&] { return wegner_minami(workers); }},
      {6, "Poisson level statistics", 900, [&] { return run_default("levelstats", workers); }},
      {7, "two-energy independence", 900, [&] { return run_default("independence", workers); }},
      {8, "decorrelation scaling", 1200, [&] { return run_default("decorrelate", workers); }},
      {9, "Laplace identity", 1, [&] { return run_default("laplace-check", workers); }},
      {10, "heavy-tail bad event", 300, [&] { return run_default("heavytail", workers); }},
      {11, "gradient separation", 300, [&] { return separation(workers); }},
      {12, "worker-count determinism", 60, determinism},
  };
  std::printf("acceptance: master seed %llu, %zu workers\n", static_cast<unsigned long long>(kSeeds.master_seed()),
              workers);
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Check c;
    try {
      c = cr.run();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("error: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < cr.budget_s;
    const bool ok = c.ok && in_time;
    failed += !ok;
    std::printf("criterion %2d %s  %-30s %.1fs/%gs%s  %s\n", cr.id, ok ? "PASS" : "FAIL", cr.title, secs, cr.budget_s,
                in_time ? "" : " over budget", c.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
