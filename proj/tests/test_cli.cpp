#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "spectra/runner.hpp"

namespace fs = std::filesystem;
using namespace spectra;

namespace {

struct Ran {
  int code;
  std::string output;
};

std::string cli() {
  const char* p = std::getenv("SPECTRA_CLI");
  return p ? p : "spectra";
}

Ran run(const std::string& args) {
  const std::string cmd = cli() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("spectra_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string at(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

const std::string kSmallWegner = "wegner --set n_samples=400 --set checkpoint_interval=100 --seed 42";

}  // namespace

TEST_F(Cli, SummaryIsByteIdenticalAcrossRunsAndWorkers) {
  ASSERT_EQ(run(kSmallWegner + " --workers 1 --out " + at("a")).code, 0);
  ASSERT_EQ(run(kSmallWegner + " --workers 1 --out " + at("b")).code, 0);
  ASSERT_EQ(run(kSmallWegner + " --workers 3 --out " + at("c")).code, 0);
  const auto a = slurp(at("a/summary.csv"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a.rfind("name,label,estimate,ci_lo,ci_hi,reference_bound,verdict\n", 0), 0u);
  EXPECT_EQ(a, slurp(at("b/summary.csv")));
  EXPECT_EQ(a, slurp(at("c/summary.csv")));
  EXPECT_EQ(slurp(at("a/results.jsonl")), slurp(at("c/results.jsonl")));
}

TEST_F(Cli, DifferentSeedsDiffer) {
  ASSERT_EQ(run("minami --set n_samples=300 --set widths=[0.05] --seed 1 --out " + at("a")).code, 0);
  ASSERT_EQ(run("minami --set n_samples=300 --set widths=[0.05] --seed 2 --out " + at("b")).code, 0);
  const auto records = [](const std::string& f) { return json::parse(slurp(f))["records"]; };
  EXPECT_NE(records(at("a/checkpoint.jsonl")), records(at("b/checkpoint.jsonl")));
}

TEST_F(Cli, DeterminantTable) {
  const auto r = run("check-determinants --set draws=50 --out " + at("d"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto csv = slurp(at("d/determinants.csv"));
  EXPECT_EQ(csv.rfind("case,draws,max_rel_err\n", 0), 0u);
  for (const char* c : {"A0", "A1", "A2", "A3"}) EXPECT_NE(csv.find(c), std::string::npos) << c;
  EXPECT_NE(r.output.find("PASS"), std::string::npos);
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos);
}

TEST_F(Cli, UnknownExperimentListsValidNames) {
  const auto r = run("frobnicate");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("wegner"), std::string::npos);
  EXPECT_NE(r.output.find("laplace-check"), std::string::npos);

  std::ofstream(at("cfg.json")) << R"({"experiment": "frobnicate"})";
  const auto r2 = run("run --config " + at("cfg.json") + " --out " + at("o"));
  EXPECT_EQ(r2.code, 1);
  EXPECT_NE(r2.output.find("check-perturbation"), std::string::npos) << r2.output;
}

TEST_F(Cli, InvalidConfigIsRejectedBeforeCompute) {
  const auto r = run("wegner --set n_samples=-5 --out " + at("o"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("n_samples"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(at("o")));

  const auto r2 = run("wegner --set disorder.alpha0=3 --out " + at("o"));
  EXPECT_EQ(r2.code, 1);
  EXPECT_NE(r2.output.find("disorder"), std::string::npos) << r2.output;

  const auto r3 = run("wegner --set bogus=1 --out " + at("o"));
  EXPECT_EQ(r3.code, 1);
  EXPECT_NE(r3.output.find("unknown field"), std::string::npos) << r3.output;
}

TEST_F(Cli, RunReadsExperimentFromConfig) {
  std::ofstream(at("cfg.json")) << R"({"experiment": "laplace-check", "seed": 3, "n_pmfs": 20})";
  const auto r = run("run --config " + at("cfg.json") + " --out " + at("o"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto cfg = read_json_file(at("o/config.json"));
  EXPECT_EQ(cfg["experiment"], "laplace-check");
  EXPECT_EQ(cfg["n_pmfs"], 20);
  const auto m = read_json_file(at("o/manifest.json"));
  EXPECT_TRUE(m["complete"].get<bool>());
  EXPECT_TRUE(m["passed"].get<bool>());
}

TEST_F(Cli, InterruptedRunResumesToTheSameResult) {
  ASSERT_EQ(run(kSmallWegner + " --out " + at("ref")).code, 0);
  const auto r = run(kSmallWegner + " --out " + at("part") + " --max-chunks 2");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("paused"), std::string::npos);
  EXPECT_FALSE(fs::exists(at("part/summary.csv")));
  auto m = read_json_file(at("part/manifest.json"));
  EXPECT_FALSE(m["complete"].get<bool>());
  EXPECT_EQ(m["chunks"].size(), 2u);

  // a torn final line is discarded on resume
  std::ofstream(at("part/checkpoint.jsonl"), std::ios::app) << R"({"config_hash": "abc", "begin)";
  const auto r2 = run("resume " + at("part/manifest.json"));
  ASSERT_EQ(r2.code, 0) << r2.output;
  EXPECT_EQ(slurp(at("part/summary.csv")), slurp(at("ref/summary.csv")));
  EXPECT_EQ(slurp(at("part/results.jsonl")), slurp(at("ref/results.jsonl")));
  EXPECT_EQ(slurp(at("part/checkpoint.jsonl")), slurp(at("ref/checkpoint.jsonl")));
  m = read_json_file(at("part/manifest.json"));
  EXPECT_TRUE(m["complete"].get<bool>());
  EXPECT_EQ(m["chunks"].size(), 4u);
}

TEST_F(Cli, ResumeOfCompletedRunIsNoOp) {
  ASSERT_EQ(run(kSmallWegner + " --out " + at("o")).code, 0);
  const auto before = slurp(at("o/manifest.json"));
  const auto r = run("resume " + at("o/manifest.json"));
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("nothing to do"), std::string::npos);
  EXPECT_EQ(slurp(at("o/manifest.json")), before);
}

TEST_F(Cli, ResumeRefusesEditedConfig) {
  ASSERT_EQ(run(kSmallWegner + " --out " + at("o") + " --max-chunks 1").code, 0);
  auto cfg = read_json_file(at("o/config.json"));
  cfg["n_samples"] = 500;
  std::ofstream(at("o/config.json")) << cfg.dump(2);
  const auto r = run("resume " + at("o/manifest.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("does not match"), std::string::npos) << r.output;
}

TEST_F(Cli, MissingManifestIsAnIoError) {
  EXPECT_EQ(run("resume " + at("nope/manifest.json")).code, 3);
}

TEST(Runner, OverridesReachNestedFields) {
  json c = json::object();
  apply_override(c, "n_samples=5");
  apply_override(c, "disorder.kind=uniform");
  apply_override(c, "disorder.beta0=1.5");
  apply_override(c, "epsilons=[1e-3,1e-4]");
  EXPECT_EQ(c["n_samples"], 5);
  EXPECT_EQ(c["disorder"]["kind"], "uniform");
  EXPECT_DOUBLE_EQ(c["disorder"]["beta0"].get<double>(), 1.5);
  EXPECT_EQ(c["epsilons"].size(), 2u);
  EXPECT_THROW(apply_override(c, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(c, "a..b=1"), ConfigError);
}

TEST(Runner, ConfigRoundTripAndHash) {
  const auto a = parse_config(json{{"experiment", "wegner"}, {"seed", 9}, {"n_samples", 1000}});
  const auto b = parse_config(a.to_json());
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  const auto c = parse_config(json{{"experiment", "wegner"}, {"seed", 10}, {"n_samples", 1000}});
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_THROW(parse_config(json{{"experiment", "wegner"}}, "minami"), ConfigError);
  EXPECT_THROW(parse_config(json{{"n_samples", 5}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"experiment", "wegner"}, {"schema_version", 2}}), ConfigError);
}

TEST(Runner, ShippedConfigsParse) {
  const char* dir = std::getenv("SPECTRA_CONFIGS");
  if (!dir) GTEST_SKIP() << "SPECTRA_CONFIGS not set";
  std::size_t seen = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    const auto c = parse_config(read_json_file(e.path()));
    EXPECT_EQ(c.experiment, e.path().stem().string());
    ++seen;
  }
  EXPECT_EQ(seen, experiment_names().size());
}
