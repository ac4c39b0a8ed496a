// Command-line front end for the spectral statistics experiments.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spectra/runner.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 1, kSolver = 2, kIo = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
  std::string out;
  std::vector<std::string> sets;
  std::optional<std::size_t> max_chunks;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--workers", c.workers, "worker threads (default: SPECTRA_WORKERS, then all cores)");
  cmd->add_option("--out", c.out, "output directory (default: out/<experiment>)");
  cmd->add_option("--set", c.sets, "override a config field, key=value (dotted keys reach nested fields)");
  cmd->add_option("--max-chunks", c.max_chunks, "stop after this many checkpoint chunks");
}

void report(const spectra::RunStatus& s, const std::string& out) {
  if (!s.complete) {
    std::printf("paused after %zu of %zu chunks; continue with: spectra resume %s/manifest.json\n", s.chunks_done,
                s.chunks_total, out.c_str());
    return;
  }
  for (const auto& r : s.outcome.results) {
    std::printf("%-20s %-28s", r.name.c_str(), r.label.c_str());
    if (r.estimate) std::printf(" estimate=%s", spectra::format_double(*r.estimate).c_str());
    if (r.reference_bound) std::printf(" bound=%s", spectra::format_double(*r.reference_bound).c_str());
    if (r.verdict) std::printf(" %s", *r.verdict ? "PASS" : "FAIL");
    std::printf("\n");
  }
  std::printf("wrote %s\n", out.c_str());
}

int run_experiment(const std::string& experiment, const Common& c) {
  spectra::json cfg = spectra::json::object();
  if (!c.config.empty()) cfg = spectra::read_json_file(c.config);
  for (const auto& s : c.sets) spectra::apply_override(cfg, s);
  if (c.seed) cfg["seed"] = *c.seed;
  const auto parsed = spectra::parse_config(cfg, experiment);
  const std::string out = c.out.empty() ? "out/" + parsed.experiment : c.out;
  spectra::Runner runner(parsed, out, c.workers);
  report(runner.run(c.max_chunks), out);
  return kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const spectra::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const spectra::SolverError& e) {
    std::fprintf(stderr, "solver failure: %s\n", e.what());
    return kSolver;
  } catch (const spectra::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kSolver;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo level statistics for random-hopping rings"};
  app.require_subcommand(1);

  Common common;
  std::string chosen;
  for (const auto& name : spectra::experiment_names()) {
    auto* cmd = app.add_subcommand(name, "run the " + name + " experiment");
    add_common(cmd, common);
    cmd->callback([&chosen, name] { chosen = name; });
  }
  auto* run = app.add_subcommand("run", "run the experiment named in the config");
  add_common(run, common);
  run->callback([&chosen] { chosen = "run"; });

  std::string manifest;
  std::size_t resume_workers = 0;
  std::optional<std::size_t> resume_chunks;
  auto* resume = app.add_subcommand("resume", "continue an interrupted run");
  resume->add_option("manifest", manifest, "path to manifest.json")->required();
  resume->add_option("--workers", resume_workers, "worker threads");
  resume->add_option("--max-chunks", resume_chunks, "stop after this many more chunks");
  resume->callback([&chosen] { chosen = "resume"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) std::fprintf(stderr, "valid experiments: %s\n", spectra::experiment_list().c_str());
    return code == 0 ? 0 : kConfig;
  }

  if (chosen == "resume") {
    return guarded([&] {
      const auto s = spectra::Runner::resume(manifest, resume_workers, resume_chunks);
      const std::string dir = std::filesystem::path(manifest).parent_path().string();
      if (s.complete && s.outcome.results.empty()) {
        std::printf("run already complete; nothing to do\n");
        return int{kOk};
      }
      report(s, dir.empty() ? "." : dir);
      return int{kOk};
    });
  }
  return guarded([&] { return run_experiment(chosen == "run" ? "" : chosen, common); });
}
