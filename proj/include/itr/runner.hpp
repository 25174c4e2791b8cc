#pragma once

#include "itr/policy.hpp"
#include "itr/signature.hpp"
#include "itr/trial_sim.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace itr {

inline constexpr const char* kVersion = "0.1.0";

/// Child seed for a position in the experiment tree (splitmix64 chain).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

MissingnessSpec missingness_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MissingnessSpec& spec);
/// Scenario fields over defaults; the seed is set by the caller.
SimScenario scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimScenario& scenario);
EstimationOptions estimation_from_json(const nlohmann::json& j);
Preference preference_from_json(const nlohmann::json& config);

/// Rules compared in one simulated replication. Besides the estimation
/// methods: "true_alpha" (group fits at the generating alpha), "all1" and
/// "all2" (uniform assignment).
struct ReplicationSpec {
  SimScenario train;
  int test_n_per_group = 500;
  std::uint64_t test_seed = 2;
  std::uint64_t estimation_seed = 3;
  std::vector<std::string> methods{"npats", "pats", "mle", "true_alpha", "all1", "all2"};
  EstimationOptions estimation;
  Preference prefer = Preference::larger_ats;
  bool use_observed_outcome = false;
};

struct MethodOutcome {
  std::string method;
  /// "ok", "not_converged" or "failed".
  std::string status = "ok";
  std::string error;
  std::optional<double> value;
  std::optional<double> pcd;
  std::optional<double> ipwe;
  /// |cos(alpha_hat, alpha_true)|, estimation methods only.
  std::optional<double> cosine;
  int iterations = 0;
  bool converged = true;
};

/// Simulates training and test data, fits every requested rule and
/// evaluates it on the test set. Pure in the spec.
std::vector<MethodOutcome> run_replication(const ReplicationSpec& spec);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> method;
  std::optional<int> threads;
};

struct CommandResult {
  /// 0 success, 2 configuration error, 3 data error, 4 convergence failure.
  int exit_code = 0;
  nlohmann::json report;
};

/// Runs one subcommand (simulate, fit, decide, evaluate, cv, sweep).
/// Relative paths inside `config` resolve against `config_dir`. Errors are
/// reported on `err` and mapped to exit codes; nothing is thrown.
CommandResult run_command(const std::string& command, const nlohmann::json& config,
                          const std::filesystem::path& config_dir, const Overrides& overrides, std::ostream& err);

/// Reads the JSON config at `config_path` and calls run_command.
CommandResult run_command_file(const std::string& command, const std::filesystem::path& config_path,
                               const Overrides& overrides, std::ostream& err);

}  // namespace itr
