#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spectra/config.hpp"
#include "spectra/experiments.hpp"

namespace spectra {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "spectra 0.1.0";

/// Output or checkpoint file problems.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 1000;
  json params = json::object();  // canonical experiment parameters

  /// The config as written to disk: runner keys plus parameters, flat.
  json to_json() const {
    json j = params;
    j["schema_version"] = kConfigSchemaVersion;
    j["experiment"] = experiment;
    j["seed"] = seed;
    j["checkpoint_interval"] = checkpoint_interval;
    return j;
  }

  /// Hash of everything that determines the results.
  std::string hash() const {
    const json j = {{"experiment", experiment}, {"seed", seed}, {"params", params},
                    {"schema_version", kConfigSchemaVersion}};
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << h;
    return s.str();
  }
};

/// Validates everything before any compute. `experiment` overrides or must
/// agree with the config's own field.
inline RunConfig parse_config(json j, const std::string& experiment = "") {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  RunConfig c;
  if (j.contains("schema_version")) {
    if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kConfigSchemaVersion)
      throw ConfigError("schema_version", "expected " + std::to_string(kConfigSchemaVersion));
    j.erase("schema_version");
  }
  if (j.contains("experiment")) {
    if (!j["experiment"].is_string()) throw ConfigError("experiment", "expected a string");
    c.experiment = j["experiment"].get<std::string>();
    j.erase("experiment");
    if (!experiment.empty() && c.experiment != experiment)
      throw ConfigError("experiment", "config names '" + c.experiment + "' but the command is '" + experiment + "'");
  }
  if (!experiment.empty()) c.experiment = experiment;
  if (c.experiment.empty()) throw ConfigError("experiment", "missing; valid names: " + experiment_list());
  if (j.contains("seed")) {
    if (!is_count(j["seed"])) throw ConfigError("seed", "expected a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
    j.erase("seed");
  }
  if (j.contains("checkpoint_interval")) {
    if (!is_count(j["checkpoint_interval"]) || j["checkpoint_interval"].get<std::size_t>() == 0)
      throw ConfigError("checkpoint_interval", "expected a positive integer");
    c.checkpoint_interval = j["checkpoint_interval"].get<std::size_t>();
    j.erase("checkpoint_interval");
  }
  c.params = canonical_parameters(c.experiment, j);
  return c;
}

/// Applies "a.b.c=value"; the value is read as JSON when it parses, else as a string.
inline void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set", "expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set", "empty path component in '" + key + "'");
    if (!node->is_object()) throw ConfigError(key, "cannot set a field inside a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string(), std::string("invalid JSON: ") + e.what());
  }
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out.flush()) throw IoError("write failed for " + p.string());
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunStatus {
  bool complete = false;
  std::size_t chunks_done = 0;
  std::size_t chunks_total = 0;
  Outcome outcome;
};

/// Files in an output directory: config.json, manifest.json, checkpoint.jsonl,
/// results.jsonl and the experiment's CSV tables.
class Runner {
 public:
  Runner(RunConfig config, std::filesystem::path out_dir, std::size_t workers = 0)
      : config_(std::move(config)), out_(std::move(out_dir)), workers_(resolve_workers(workers)) {}

  const RunConfig& config() const noexcept { return config_; }

  /// Fresh run; stops after `max_chunks` new chunks when given.
  RunStatus run(std::optional<std::size_t> max_chunks = std::nullopt) {
    std::error_code ec;
    std::filesystem::create_directories(out_, ec);
    if (ec) throw IoError("cannot create " + out_.string() + ": " + ec.message());
    write_text(out_ / "config.json", config_.to_json().dump(2) + "\n");
    write_text(out_ / "checkpoint.jsonl", "");
    for (const char* f : {"results.jsonl", "summary.csv"}) std::filesystem::remove(out_ / f, ec);
    manifest_ = json::object();
    manifest_["schema_version"] = kConfigSchemaVersion;
    manifest_["config_hash"] = config_.hash();
    manifest_["code_version"] = kCodeVersion;
    manifest_["config"] = "config.json";
    manifest_["checkpoint"] = "checkpoint.jsonl";
    manifest_["started"] = utc_now();
    manifest_["finished"] = nullptr;
    manifest_["complete"] = false;
    manifest_["chunks"] = json::array();
    return proceed({}, max_chunks);
  }

  /// Continues the run recorded in `manifest_path`. A completed run is left untouched.
  static RunStatus resume(const std::filesystem::path& manifest_path, std::size_t workers = 0,
                          std::optional<std::size_t> max_chunks = std::nullopt) {
    const auto dir = manifest_path.parent_path().empty() ? std::filesystem::path(".") : manifest_path.parent_path();
    json manifest = read_json_file(manifest_path);
    if (!manifest.contains("config_hash") || !manifest.contains("chunks"))
      throw IoError(manifest_path.string() + " is not a run manifest");
    const RunConfig cfg = parse_config(read_json_file(dir / manifest.value("config", "config.json")));
    if (cfg.hash() != manifest["config_hash"].get<std::string>())
      throw ConfigError("config", "config hash " + cfg.hash() + " does not match the manifest (" +
                                      manifest["config_hash"].get<std::string>() + "); refusing a stale checkpoint");
    Runner r(cfg, dir, workers);
    r.manifest_ = manifest;
    if (manifest.value("complete", false)) {
      RunStatus s;
      s.complete = true;
      s.chunks_done = s.chunks_total = manifest["chunks"].size();
      return s;
    }
    return r.proceed(r.load_checkpoint(), max_chunks);
  }

 private:
  std::vector<Record> load_checkpoint() {
    std::ifstream in(out_ / manifest_.value("checkpoint", "checkpoint.jsonl"));
    if (!in) throw IoError("cannot read checkpoint in " + out_.string());
    std::vector<Record> records;
    json chunks = json::array();
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
      json c;
      try {
        c = json::parse(line);
      } catch (const json::parse_error&) {
        break;  // torn final line from an interrupted write
      }
      if (c.value("config_hash", "") != config_.hash())
        throw ConfigError("checkpoint", "chunk written under a different config; refusing to resume");
      if (c["begin"].get<std::size_t>() != records.size()) throw IoError("checkpoint chunks are not contiguous");
      for (const auto& r : c["records"]) records.push_back(r.get<Record>());
      chunks.push_back({{"index", chunks.size()}, {"begin", c["begin"]}, {"end", c["end"]}, {"offset", offset}});
      offset += line.size() + 1;
    }
    // drop anything after the last complete chunk
    std::filesystem::resize_file(out_ / manifest_.value("checkpoint", "checkpoint.jsonl"), offset);
    manifest_["chunks"] = chunks;
    return records;
  }

  RunStatus proceed(std::vector<Record> records, std::optional<std::size_t> max_chunks) {
    const Plan plan = make_plan(config_.experiment, config_.params, SeedPolicy(config_.seed), workers_);
    const std::size_t n = plan.n_records, step = config_.checkpoint_interval;
    RunStatus status;
    status.chunks_total = (n + step - 1) / step;
    const auto ck = out_ / manifest_.value("checkpoint", "checkpoint.jsonl");
    std::size_t fresh = 0;
    while (records.size() < n) {
      if (max_chunks && fresh >= *max_chunks) break;
      const std::size_t begin = records.size(), end = std::min(n, begin + step);
      auto chunk = parallel_map(begin, end, workers_, plan.record);
      const json line = {{"config_hash", config_.hash()}, {"begin", begin}, {"end", end}, {"records", chunk}};
      const auto offset = std::filesystem::file_size(ck);
      {
        std::ofstream out(ck, std::ios::binary | std::ios::app);
        if (!out) throw IoError("cannot append to " + ck.string());
        out << line.dump() << '\n';
        if (!out.flush()) throw IoError("write failed for " + ck.string());
      }
      manifest_["chunks"].push_back(
          {{"index", manifest_["chunks"].size()}, {"begin", begin}, {"end", end}, {"offset", offset}});
      write_manifest();
      for (auto& r : chunk) records.push_back(std::move(r));
      ++fresh;
    }
    status.chunks_done = manifest_["chunks"].size();
    if (records.size() < n) {
      write_manifest();
      return status;
    }
    status.outcome = plan.finish(records);
    std::string lines;
    for (const auto& r : status.outcome.results) lines += to_json(r).dump() + "\n";
    write_text(out_ / "results.jsonl", lines);
    for (const auto& t : status.outcome.tables) write_text(out_ / t.file, t.str());
    manifest_["finished"] = utc_now();
    manifest_["complete"] = true;
    manifest_["passed"] = status.outcome.passed();
    write_manifest();
    status.complete = true;
    return status;
  }

  void write_manifest() { write_text(out_ / "manifest.json", manifest_.dump(2) + "\n"); }

  RunConfig config_;
  std::filesystem::path out_;
  std::size_t workers_;
  json manifest_;
};

}  // namespace spectra
