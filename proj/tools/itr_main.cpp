#include "itr/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Individualized treatment rules from longitudinal trial data"};
  app.set_version_flag("--version", std::string(itr::kVersion));
  app.require_subcommand(1, 1);

  std::string config;
  itr::Overrides overrides;
  std::uint64_t seed = 0;
  std::string out;
  std::string method;
  int threads = 1;

  const char* commands[][2] = {
      {"simulate", "Generate training (and optional test) data from a scenario"},
      {"fit", "Estimate a biosignature and group models; writes rule.json"},
      {"decide", "Apply a fitted rule to a dataset; writes decisions.csv"},
      {"evaluate", "Value, PCD and IPWE of a rule on test data"},
      {"cv", "Repeated stratified cross-validation of the IPWE"},
      {"sweep", "Simulation study over a grid of scenarios"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "JSON configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Base seed (overrides config)");
    sub->add_option("--out", out, "Output directory (overrides config)");
    sub->add_option("--method", method, "Estimation method")->check(CLI::IsMember({"npats", "pats", "mle"}));
    sub->add_option("--threads", threads, "Worker threads for sweep")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed") > 0) overrides.seed = seed;
  if (sub->count("--out") > 0) overrides.out = out;
  if (sub->count("--method") > 0) overrides.method = method;
  if (sub->count("--threads") > 0) overrides.threads = threads;
  return itr::run_command_file(sub->get_name(), config, overrides, std::cerr).exit_code;
}
