#include "itr/runner.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace itr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("itr_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json small_config() {
  return json::parse(R"({
    "seed": 17, "method": "pats",
    "scenario": {"kind": "quadratic", "p": 2, "n_per_group": 40, "theta_degrees": 5,
                 "missingness": {"kind": "dropout"}},
    "test": {"n_per_group": 50},
    "estimation": {"restarts": 1}
  })");
}

CommandResult run(const std::string& cmd, json config, const fs::path& out, std::ostream& err,
                  Overrides o = {}) {
  o.out = out;
  return run_command(cmd, config, out.parent_path(), o, err);
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("derived seeds are distinct along paths") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 20; ++a) {
      for (std::uint64_t b = 0; b < 5; ++b) CHECK(seen.insert(derive_seed(9, {a, b})).second);
    }
    CHECK(derive_seed(9, {1}) != derive_seed(10, {1}));
    CHECK(derive_seed(9, {1, 2}) == derive_seed(9, {1, 2}));
  }

  TEST_CASE("config sections parse with defaults and reject bad values") {
    const SimScenario s = scenario_from_json(json::parse(R"({"p": 4, "missingness": {"kind": "mcar", "rate": 0.2}})"));
    CHECK(s.p == 4);
    CHECK(s.n_per_group == 100);
    CHECK(s.missingness.kind == MissingnessSpec::Kind::mcar);
    CHECK(s.missingness.rate == 0.2);
    CHECK(scenario_from_json(to_json(s)).times == s.times);
    CHECK_THROWS_AS(scenario_from_json(json::parse(R"({"p": 3})")), ConfigError);
    CHECK_THROWS_AS(scenario_from_json(json::parse(R"({"kind": "cubic"})")), ConfigError);
    CHECK_THROWS_AS(scenario_from_json(json::parse(R"({"p": "two"})")), ConfigError);
    CHECK_THROWS_AS(missingness_from_json(json::parse(R"({"kind": "dropout", "proportions": [1, 0]})")), ConfigError);
    const EstimationOptions e =
        estimation_from_json(json::parse(R"({"restarts": 2, "time_basis": {"kind": "polynomial", "degree": 3}})"));
    CHECK(e.restarts == 2);
    CHECK(e.time_basis->dimension() == 4);
    CHECK_THROWS_AS(estimation_from_json(json::parse(R"({"cosine_tolerance": 2})")), ConfigError);
    CHECK_THROWS_AS(preference_from_json(json::parse(R"({"prefer": "bigger"})")), ConfigError);
  }

  TEST_CASE("simulate, fit, decide, evaluate chain and embed config and seed") {
    const fs::path dir = scratch("chain");
    std::ostringstream err;
    json cfg = small_config();
    REQUIRE(run("simulate", cfg, dir / "sim", err).exit_code == 0);
    CHECK(fs::exists(dir / "sim" / "train_outcomes.csv"));
    CHECK(fs::exists(dir / "sim" / "test_oracle.csv"));
    const json sim_report = json::parse(slurp(dir / "sim" / "report.json"));
    CHECK(sim_report["seed"] == 17);
    CHECK(sim_report["config"]["scenario"]["n_per_group"] == 40);

    json files = json::parse(R"({"seed": 17, "method": "mle",
      "data": {"outcomes": "sim/train_outcomes.csv", "covariates": "sim/train_covariates.csv", "oracle": "sim/train_oracle.csv"},
      "test_data": {"outcomes": "sim/test_outcomes.csv", "covariates": "sim/test_covariates.csv", "oracle": "sim/test_oracle.csv"}})");
    REQUIRE(run_command("fit", files, dir, Overrides{.out = dir / "fit"}, err).exit_code == 0);
    CHECK(fs::exists(dir / "fit" / "rule.json"));
    const json fit_report = json::parse(slurp(dir / "fit" / "report.json"));
    CHECK(fit_report["diagnostics"]["method"] == "mle");
    CHECK(fit_report["config"]["method"] == "mle");

    files["rule"] = "fit/rule.json";
    REQUIRE(run_command("decide", files, dir, Overrides{.out = dir / "decide"}, err).exit_code == 0);
    const std::string decisions = slurp(dir / "decide" / "decisions.csv");
    CHECK(decisions.starts_with("subject_id,decision\n1,"));
    CHECK(std::count(decisions.begin(), decisions.end(), '\n') == 81);

    REQUIRE(run_command("evaluate", files, dir, Overrides{.out = dir / "eval"}, err).exit_code == 0);
    const json ev = json::parse(slurp(dir / "eval" / "report.json"));
    CHECK(ev["evaluation"]["pcd"].get<double>() >= 0.0);
    CHECK(ev["evaluation"]["pcd"].get<double>() <= 1.0);
    CHECK(ev["uniform"].size() == 2);
    CHECK(err.str().empty());
    fs::remove_all(dir);
  }

  TEST_CASE("re-running with the same seed is byte-identical; a new seed changes the data") {
    const fs::path dir = scratch("determinism");
    std::ostringstream err;
    for (const char* sub : {"a", "b"}) REQUIRE(run("simulate", small_config(), dir / sub, err).exit_code == 0);
    for (const char* f : {"train_outcomes.csv", "train_covariates.csv", "test_oracle.csv", "report.json"}) {
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    REQUIRE(run("simulate", small_config(), dir / "c", err, Overrides{.seed = 18}).exit_code == 0);
    CHECK(slurp(dir / "a" / "train_outcomes.csv") != slurp(dir / "c" / "train_outcomes.csv"));
    CHECK(json::parse(slurp(dir / "c" / "report.json"))["seed"] == 18);
    fs::remove_all(dir);
  }

  TEST_CASE("sweep writes one summary row per cell and method, independent of thread count") {
    const fs::path dir = scratch("sweep");
    std::ostringstream err;
    json cfg = small_config();
    cfg["sweep"] = json::parse(R"({"thetas": [0, 5], "ps": [2], "replications": 2,
                                   "missingness": ["none", {"kind": "mcar", "rate": 0.4}],
                                   "methods": ["pats", "mle", "all1"]})");
    REQUIRE(run("sweep", cfg, dir / "one", err, Overrides{.threads = 1}).exit_code == 0);
    REQUIRE(run("sweep", cfg, dir / "two", err, Overrides{.threads = 3}).exit_code == 0);
    const std::string summary = slurp(dir / "one" / "sweep_summary.csv");
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 1 + 4 * 3);
    CHECK(summary.starts_with("theta,p,missingness,method,n,value_mean,value_halfwidth,pcd_mean,pcd_halfwidth\n"));
    CHECK(summary == slurp(dir / "two" / "sweep_summary.csv"));
    CHECK(slurp(dir / "one" / "sweep_raw.csv") == slurp(dir / "two" / "sweep_raw.csv"));
    CHECK(slurp(dir / "one" / "report.json") == slurp(dir / "two" / "report.json"));
    fs::remove_all(dir);
  }

  TEST_CASE("cv writes fold-level IPWEs") {
    const fs::path dir = scratch("cv");
    std::ostringstream err;
    json cfg = small_config();
    cfg["cv"] = {{"folds", 4}, {"repeats", 2}};
    REQUIRE(run("cv", cfg, dir / "out", err).exit_code == 0);
    const std::string folds = slurp(dir / "out" / "cv_folds.csv");
    CHECK(std::count(folds.begin(), folds.end(), '\n') == 1 + 8);
    const json report = json::parse(slurp(dir / "out" / "report.json"));
    CHECK(report["diagnostics"]["folds"] == 8);
    fs::remove_all(dir);
  }

  TEST_CASE("exit codes") {
    const fs::path dir = scratch("exit");
    std::ostringstream err;
    json no_seed = small_config();
    no_seed.erase("seed");
    CHECK(run("simulate", no_seed, dir / "a", err).exit_code == 2);
    CHECK(err.str().find("itr simulate: configuration error") != std::string::npos);

    CHECK(run("launch", small_config(), dir / "b", err).exit_code == 2);

    json missing = json::parse(R"({"seed": 1, "data": {"outcomes": "nope.csv", "covariates": "nope2.csv"}})");
    CHECK(run("fit", missing, dir / "c", err).exit_code == 2);

    {
      std::ofstream(dir / "o.csv") << "subject_id,group,time,outcome\n1,1,0,oops\n";
      std::ofstream(dir / "x.csv") << "subject_id,x1,x2\n1,0,0\n";
    }
    json bad = json::parse(R"({"seed": 1, "data": {"outcomes": "o.csv", "covariates": "x.csv"}})");
    std::ostringstream data_err;
    CHECK(run("fit", bad, dir / "d", data_err).exit_code == 3);
    CHECK(data_err.str().find("o.csv:2: non-numeric field") != std::string::npos);

    json hard = small_config();
    hard["estimation"] = {{"max_outer_iterations", 1}, {"cosine_tolerance", 1.0}, {"restarts", 0}};
    const CommandResult r = run("fit", hard, dir / "e", err);
    CHECK(r.exit_code == 4);
    CHECK(fs::exists(dir / "e" / "rule.json"));
    CHECK(json::parse(slurp(dir / "e" / "report.json"))["status"] == "not_converged");

    std::ostringstream file_err;
    CHECK(run_command_file("fit", dir / "absent.json", {}, file_err).exit_code == 2);
    fs::remove_all(dir);
  }
}
