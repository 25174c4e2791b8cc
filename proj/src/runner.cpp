#include "itr/runner.hpp"

#include "itr/io.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace itr {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  std::uint64_t s = mix(base);
  for (std::uint64_t p : path) s = mix(s ^ mix(p + 0x632BE59BD9B4E019ull));
  return s;
}

namespace {

template <typename T>
T field(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

const json& section(const json& config, const char* key) {
  static const json empty = json::object();
  if (!config.contains(key)) return empty;
  const json& s = config.at(key);
  if (!s.is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
  return s;
}

}  // namespace

MissingnessSpec missingness_from_json(const json& j) {
  if (j.is_string()) return missingness_from_json(json{{"kind", j}});
  const std::string kind = field<std::string>(j, "kind", "none");
  if (kind == "none") return MissingnessSpec::none();
  if (kind == "mcar") return MissingnessSpec::mcar(field<double>(j, "rate", 0.4));
  if (kind == "dropout") {
    const auto q = field<std::vector<double>>(j, "proportions", {0.5, 0.3, 0.1, 0.05, 0.05});
    if (q.size() != 5) throw ConfigError("dropout needs exactly 5 proportions");
    return MissingnessSpec::dropout({q[0], q[1], q[2], q[3], q[4]});
  }
  throw ConfigError("unknown missingness kind '" + kind + "' (expected none, mcar or dropout)");
}

json to_json(const MissingnessSpec& spec) {
  switch (spec.kind) {
    case MissingnessSpec::Kind::none: return {{"kind", "none"}};
    case MissingnessSpec::Kind::mcar: return {{"kind", "mcar"}, {"rate", spec.rate}};
    case MissingnessSpec::Kind::dropout:
      return {{"kind", "dropout"}, {"proportions", std::vector<double>(spec.proportions.begin(), spec.proportions.end())}};
  }
  return {{"kind", "none"}};
}

SimScenario scenario_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("scenario must be an object");
  SimScenario s;
  const std::string kind = field<std::string>(j, "kind", "quadratic");
  if (kind == "quadratic") {
    s.kind = SimScenario::Kind::quadratic;
  } else if (kind == "nonquadratic") {
    s.kind = SimScenario::Kind::nonquadratic;
  } else {
    throw ConfigError("unknown scenario kind '" + kind + "' (expected quadratic or nonquadratic)");
  }
  s.p = field<int>(j, "p", s.p);
  s.n_per_group = field<int>(j, "n_per_group", s.n_per_group);
  s.theta_degrees = field<double>(j, "theta_degrees", s.theta_degrees);
  s.times = field<std::vector<double>>(j, "times", s.times);
  s.sigma2 = field<double>(j, "sigma2", s.sigma2);
  s.shared_random_effects = field<bool>(j, "shared_random_effects", s.shared_random_effects);
  s.noiseless = field<bool>(j, "noiseless", s.noiseless);
  if (j.contains("missingness")) s.missingness = missingness_from_json(j.at("missingness"));
  s.validate();
  return s;
}

json to_json(const SimScenario& s) {
  return {{"kind", s.kind == SimScenario::Kind::quadratic ? "quadratic" : "nonquadratic"},
          {"p", s.p},
          {"n_per_group", s.n_per_group},
          {"theta_degrees", s.theta_degrees},
          {"times", s.times},
          {"seed", s.seed},
          {"sigma2", s.sigma2},
          {"shared_random_effects", s.shared_random_effects},
          {"noiseless", s.noiseless},
          {"missingness", to_json(s.missingness)}};
}

EstimationOptions estimation_from_json(const json& j) {
  EstimationOptions o;
  if (j.is_null()) return o;
  if (!j.is_object()) throw ConfigError("estimation must be an object");
  if (j.contains("time_basis")) o.time_basis = basis_from_json(j.at("time_basis"));
  if (j.contains("index_basis")) o.index_basis = basis_from_json(j.at("index_basis"));
  if (j.contains("random_basis")) o.random_basis = basis_from_json(j.at("random_basis"));
  o.max_outer_iterations = field<int>(j, "max_outer_iterations", o.max_outer_iterations);
  o.restarts = field<int>(j, "restarts", o.restarts);
  o.cosine_tolerance = field<double>(j, "cosine_tolerance", o.cosine_tolerance);
  o.pooled_index_distribution = field<bool>(j, "pooled_index_distribution", o.pooled_index_distribution);
  if (j.contains("initial_alpha")) {
    const auto a = field<std::vector<double>>(j, "initial_alpha", {});
    o.initial_alpha = Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
  }
  const json& nm = j.contains("nelder_mead") ? j.at("nelder_mead") : json::object();
  o.nelder_mead.max_evals = field<int>(nm, "max_evals", o.nelder_mead.max_evals);
  o.nelder_mead.simplex_scale = field<double>(nm, "simplex_scale", o.nelder_mead.simplex_scale);
  o.nelder_mead.f_tolerance = field<double>(nm, "f_tolerance", o.nelder_mead.f_tolerance);
  o.nelder_mead.x_tolerance = field<double>(nm, "x_tolerance", o.nelder_mead.x_tolerance);
  const json& fit = j.contains("fit") ? j.at("fit") : json::object();
  o.fit.max_iterations = field<int>(fit, "max_iterations", o.fit.max_iterations);
  o.fit.tolerance = field<double>(fit, "tolerance", o.fit.tolerance);
  o.fit.sigma2_floor = field<double>(fit, "sigma2_floor", o.fit.sigma2_floor);
  if (o.restarts < 0) throw ConfigError("restarts must be non-negative");
  if (o.max_outer_iterations < 0) throw ConfigError("max_outer_iterations must be non-negative");
  if (!(o.cosine_tolerance > 0.0 && o.cosine_tolerance <= 1.0)) throw ConfigError("cosine_tolerance must lie in (0, 1]");
  if (o.fit.max_iterations < 1) throw ConfigError("fit.max_iterations must be positive");
  return o;
}

Preference preference_from_json(const json& config) {
  const std::string p = field<std::string>(config, "prefer", "larger");
  if (p == "larger") return Preference::larger_ats;
  if (p == "smaller") return Preference::smaller_ats;
  throw ConfigError("prefer must be 'larger' or 'smaller', got '" + p + "'");
}

std::vector<MethodOutcome> run_replication(const ReplicationSpec& spec) {
  const TrialDataset train = simulate(spec.train);
  SimScenario test_scenario = spec.train;
  test_scenario.n_per_group = spec.test_n_per_group;
  test_scenario.seed = spec.test_seed;
  test_scenario.missingness = MissingnessSpec::none();
  const TrialDataset test = simulate(test_scenario);
  const Eigen::VectorXd alpha0 = true_alpha(spec.train.p);

  std::vector<MethodOutcome> out;
  for (const auto& name : spec.methods) {
    MethodOutcome o;
    o.method = name;
    try {
      std::vector<int> decisions;
      if (name == "all1" || name == "all2") {
        decisions.assign(test.size(), name == "all1" ? 1 : 2);
      } else {
        EstimationOptions est = spec.estimation;
        est.seed = spec.estimation_seed;
        SignatureEstimate e;
        if (name == "true_alpha") {
          const ModelForm form =
              spec.train.kind == SimScenario::Kind::quadratic ? ModelForm::linear_index : ModelForm::tensor;
          e = estimate_fixed(train, alpha0, form, est);
        } else {
          e = estimate(train, method_from_string(name), est);
          o.cosine = std::abs(e.signature.alpha.dot(alpha0));
        }
        o.iterations = e.signature.iterations;
        o.converged = e.signature.converged;
        if (!o.converged) o.status = "not_converged";
        decisions = decide_all(FittedITR::from_estimate(e, spec.prefer), test);
      }
      const EvalReport r = evaluate_decisions(test, decisions, spec.prefer, spec.use_observed_outcome);
      o.value = r.value;
      o.pcd = r.pcd;
      if (!std::isnan(r.ipwe)) o.ipwe = r.ipwe;
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      o.status = "failed";
      o.error = e.what();
      o.converged = false;
    }
    out.push_back(std::move(o));
  }
  return out;
}

namespace {

// Exit code 4 with whatever was written so far.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, json report) : Error(what), report_(std::move(report)) {}
  const json& report() const { return report_; }

 private:
  json report_;
};

struct Context {
  std::string command;
  json config;
  fs::path config_dir;
  std::optional<std::uint64_t> seed;
  fs::path out;
  int threads = 1;
  Preference prefer = Preference::larger_ats;

  std::uint64_t require_seed() const {
    if (!seed) throw ConfigError("command '" + command + "' is stochastic and needs a seed (config 'seed' or --seed)");
    return *seed;
  }

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : config_dir / path;
  }

  json base_report() const {
    json r;
    r["command"] = command;
    r["version"] = kVersion;
    r["config"] = config;
    if (seed) r["seed"] = *seed;
    return r;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

DatasetFiles files_from(const Context& ctx, const json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be an object with outcomes/covariates paths");
  DatasetFiles f;
  const auto outcomes = field<std::string>(j, "outcomes", "");
  const auto covariates = field<std::string>(j, "covariates", "");
  if (outcomes.empty() || covariates.empty()) {
    throw ConfigError(std::string(what) + " needs both 'outcomes' and 'covariates' paths");
  }
  f.outcomes = ctx.resolve(outcomes);
  f.covariates = ctx.resolve(covariates);
  const auto oracle = field<std::string>(j, "oracle", "");
  if (!oracle.empty()) f.oracle = ctx.resolve(oracle);
  for (const auto* p : {&f.outcomes, &f.covariates}) {
    if (!fs::exists(*p)) throw ConfigError(std::string(what) + ": file not found: " + p->string());
  }
  if (f.oracle && !fs::exists(*f.oracle)) throw ConfigError(std::string(what) + ": file not found: " + f.oracle->string());
  return f;
}

SimScenario training_scenario(const Context& ctx) {
  SimScenario s = scenario_from_json(ctx.config.at("scenario"));
  s.seed = derive_seed(ctx.require_seed(), {1});
  return s;
}

SimScenario test_scenario(const Context& ctx) {
  SimScenario s = scenario_from_json(ctx.config.at("scenario"));
  const json& test = section(ctx.config, "test");
  s.n_per_group = field<int>(test, "n_per_group", 500);
  s.missingness = test.contains("missingness") ? missingness_from_json(test.at("missingness")) : MissingnessSpec::none();
  s.seed = derive_seed(ctx.require_seed(), {2});
  s.validate();
  return s;
}

TrialDataset training_data(const Context& ctx) {
  if (ctx.config.contains("data")) return read_dataset(files_from(ctx, ctx.config.at("data"), "data"));
  if (ctx.config.contains("scenario")) return simulate(training_scenario(ctx));
  throw ConfigError("command '" + ctx.command + "' needs a 'data' section or a 'scenario' to simulate");
}

TrialDataset test_data(const Context& ctx) {
  if (ctx.config.contains("test_data")) return read_dataset(files_from(ctx, ctx.config.at("test_data"), "test_data"));
  if (ctx.config.contains("scenario")) return simulate(test_scenario(ctx));
  if (ctx.config.contains("data")) return read_dataset(files_from(ctx, ctx.config.at("data"), "data"));
  throw ConfigError("command '" + ctx.command + "' needs 'test_data', 'data' or a 'scenario'");
}

Method configured_method(const Context& ctx) { return method_from_string(field<std::string>(ctx.config, "method", "pats")); }

EstimationOptions configured_estimation(const Context& ctx) {
  EstimationOptions o = estimation_from_json(section(ctx.config, "estimation"));
  o.seed = derive_seed(ctx.require_seed(), {3});
  return o;
}

json fit_diagnostics(const SignatureEstimate& e) {
  json groups = json::array();
  for (const auto& f : e.fits) {
    groups.push_back({{"iterations", f.iterations}, {"converged", f.converged}, {"loglik", f.loglik}});
  }
  return {{"method", to_string(e.signature.method)},
          {"iterations", e.signature.iterations},
          {"converged", e.signature.converged},
          {"objective_trace", e.signature.objective_trace},
          {"warnings", e.signature.warnings},
          {"group_fits", groups}};
}

FittedITR fit_rule(const Context& ctx, const TrialDataset& data, json& report) {
  const Method method = configured_method(ctx);
  EstimationOptions est = configured_estimation(ctx);
  SignatureEstimate e;
  if (method == Method::fixed) {
    if (!est.initial_alpha) throw ConfigError("method 'fixed' needs estimation.initial_alpha");
    const std::string form = field<std::string>(section(ctx.config, "estimation"), "form", "linear_index");
    if (form != "linear_index" && form != "tensor") throw ConfigError("estimation.form must be linear_index or tensor");
    e = estimate_fixed(data, *est.initial_alpha, form == "tensor" ? ModelForm::tensor : ModelForm::linear_index, est);
  } else {
    e = estimate(data, method, est);
  }
  report["diagnostics"] = fit_diagnostics(e);
  report["alpha"] = std::vector<double>(e.signature.alpha.data(), e.signature.alpha.data() + e.signature.alpha.size());
  return FittedITR::from_estimate(e, ctx.prefer);
}

json eval_json(const EvalReport& r) {
  json j{{"value", r.value}, {"n_assigned", r.n_assigned}};
  j["ipwe"] = std::isnan(r.ipwe) ? json(nullptr) : json(r.ipwe);
  j["pcd"] = r.pcd ? json(*r.pcd) : json(nullptr);
  return j;
}

json cmd_simulate(const Context& ctx) {
  json report = ctx.base_report();
  if (!ctx.config.contains("scenario")) throw ConfigError("simulate needs a 'scenario' section");
  const SimScenario train_s = training_scenario(ctx);
  const TrialDataset train = simulate(train_s);
  write_dataset(train, ctx.out, "train_");
  report["train"] = {{"scenario", to_json(train_s)}, {"subjects", train.size()}};
  if (ctx.config.contains("test")) {
    const SimScenario test_s = test_scenario(ctx);
    const TrialDataset test = simulate(test_s);
    write_dataset(test, ctx.out, "test_");
    report["test"] = {{"scenario", to_json(test_s)}, {"subjects", test.size()}};
  }
  return report;
}

json cmd_fit(const Context& ctx) {
  json report = ctx.base_report();
  const TrialDataset data = training_data(ctx);
  const FittedITR rule = fit_rule(ctx, data, report);
  write_json(ctx.out / "rule.json", to_json(rule));
  if (!rule.signature.converged) {
    throw NonConvergence("alpha did not converge within " + std::to_string(rule.signature.iterations) +
                             " outer iterations; rule.json holds the last iterate",
                         report);
  }
  return report;
}

FittedITR load_rule(const Context& ctx) {
  const auto path = field<std::string>(ctx.config, "rule", "");
  if (path.empty()) throw ConfigError("command '" + ctx.command + "' needs 'rule' (path to a rule.json from fit)");
  const fs::path p = ctx.resolve(path);
  std::ifstream in(p);
  if (!in) throw ConfigError("rule file not found: " + p.string());
  try {
    return fitted_itr_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError("cannot parse rule " + p.string() + ": " + e.what());
  }
}

json cmd_decide(const Context& ctx) {
  json report = ctx.base_report();
  const FittedITR rule = load_rule(ctx);
  const TrialDataset data = ctx.config.contains("data") ? read_dataset(files_from(ctx, ctx.config.at("data"), "data"))
                                                         : test_data(ctx);
  const auto decisions = decide_all(rule, data);
  std::ostringstream csv;
  csv << "subject_id,decision\n";
  for (std::size_t i = 0; i < decisions.size(); ++i) csv << data.subjects[i].id << ',' << decisions[i] << '\n';
  write_text(ctx.out / "decisions.csv", csv.str());
  report["subjects"] = decisions.size();
  report["n_assigned"] = {std::count(decisions.begin(), decisions.end(), 1),
                          std::count(decisions.begin(), decisions.end(), 2)};
  return report;
}

json cmd_evaluate(const Context& ctx) {
  json report = ctx.base_report();
  FittedITR rule;
  if (ctx.config.contains("rule")) {
    rule = load_rule(ctx);
  } else {
    rule = fit_rule(ctx, training_data(ctx), report);
    write_json(ctx.out / "rule.json", to_json(rule));
  }
  const TrialDataset test = test_data(ctx);
  const bool observed = field<bool>(section(ctx.config, "evaluation"), "use_observed_outcome", false);
  const auto decisions = decide_all(rule, test);
  report["evaluation"] = eval_json(evaluate_decisions(test, decisions, ctx.prefer, observed));
  json uniform = json::array();
  for (int g = 1; g <= 2; ++g) {
    const std::vector<int> constant(test.size(), g);
    uniform.push_back(eval_json(evaluate_decisions(test, constant, ctx.prefer, observed)));
  }
  report["uniform"] = uniform;
  if (!rule.signature.converged) throw NonConvergence("alpha did not converge; evaluation used the last iterate", report);
  return report;
}

json summary_json(const Summary& s) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"count", s.count}, {"mean", num(s.mean)}, {"median", num(s.median)}, {"sd", num(s.sd)}};
}

json cmd_cv(const Context& ctx) {
  json report = ctx.base_report();
  const TrialDataset data = training_data(ctx);
  const json& cv = section(ctx.config, "cv");
  CrossValidationOptions o;
  o.method = configured_method(ctx);
  o.folds = field<int>(cv, "folds", o.folds);
  o.repeats = field<int>(cv, "repeats", o.repeats);
  o.seed = derive_seed(ctx.require_seed(), {4});
  o.prefer = ctx.prefer;
  o.estimation = configured_estimation(ctx);
  const CrossValidationResult r = cross_validate(data, o);

  std::ostringstream csv;
  csv << "repeat,fold,n_test,ipwe,ipwe_all1,ipwe_all2,iterations,converged\n";
  std::size_t not_converged = 0;
  for (const auto& f : r.folds) {
    csv << f.repeat << ',' << f.fold << ',' << f.test_indices.size() << ',' << opt_number(f.ipwe) << ','
        << opt_number(f.uniform_ipwe[0]) << ',' << opt_number(f.uniform_ipwe[1]) << ',' << f.iterations << ','
        << (f.converged ? 1 : 0) << '\n';
    not_converged += f.converged ? 0 : 1;
  }
  write_text(ctx.out / "cv_folds.csv", csv.str());
  report["ipwe"] = summary_json(r.ipwe);
  report["uniform"] = {summary_json(r.uniform[0]), summary_json(r.uniform[1])};
  report["diagnostics"] = {{"folds", r.folds.size()},
                           {"undefined_folds", r.undefined_folds},
                           {"not_converged_folds", not_converged},
                           {"truncated_change_scores", r.truncated_change_scores}};
  return report;
}

struct Cell {
  std::optional<double> theta;
  int p = 2;
  MissingnessSpec missingness;
  std::string missingness_label;
};

std::string missingness_label(const MissingnessSpec& m) {
  switch (m.kind) {
    case MissingnessSpec::Kind::none: return "none";
    case MissingnessSpec::Kind::mcar: return "mcar";
    case MissingnessSpec::Kind::dropout: return "dropout";
  }
  return "none";
}

json cmd_sweep(const Context& ctx) {
  json report = ctx.base_report();
  if (!ctx.config.contains("scenario")) throw ConfigError("sweep needs a base 'scenario'");
  const std::uint64_t seed = ctx.require_seed();
  const SimScenario base = scenario_from_json(ctx.config.at("scenario"));
  const json& sw = section(ctx.config, "sweep");
  const auto thetas = field<std::vector<double>>(sw, "thetas", {base.theta_degrees});
  const auto ps = field<std::vector<int>>(sw, "ps", {base.p});
  std::vector<MissingnessSpec> miss;
  if (sw.contains("missingness")) {
    if (!sw.at("missingness").is_array()) throw ConfigError("sweep.missingness must be an array");
    for (const auto& m : sw.at("missingness")) miss.push_back(missingness_from_json(m));
  } else {
    miss.push_back(base.missingness);
  }
  const int replications = field<int>(sw, "replications", 200);
  if (replications < 1) throw ConfigError("sweep.replications must be positive");
  const auto methods =
      field<std::vector<std::string>>(sw, "methods", {"npats", "pats", "mle", "true_alpha", "all1", "all2"});
  for (const auto& m : methods) {
    if (m != "true_alpha" && m != "all1" && m != "all2") method_from_string(m);
  }
  const int test_n = field<int>(section(ctx.config, "test"), "n_per_group", 500);
  const bool observed = field<bool>(section(ctx.config, "evaluation"), "use_observed_outcome", false);
  const EstimationOptions est = estimation_from_json(section(ctx.config, "estimation"));

  std::vector<Cell> cells;
  const bool quadratic = base.kind == SimScenario::Kind::quadratic;
  const std::vector<std::optional<double>> theta_axis =
      quadratic ? std::vector<std::optional<double>>(thetas.begin(), thetas.end())
                : std::vector<std::optional<double>>{std::nullopt};
  for (const auto& th : theta_axis) {
    for (int p : ps) {
      for (const auto& m : miss) cells.push_back({th, p, m, missingness_label(m)});
    }
  }

  struct Task {
    std::size_t cell;
    int replication;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (int r = 0; r < replications; ++r) tasks.push_back({c, r});
  }
  std::vector<std::vector<MethodOutcome>> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      try {
        const Cell& cell = cells[tasks[t].cell];
        ReplicationSpec spec;
        spec.train = base;
        spec.train.p = cell.p;
        if (cell.theta) spec.train.theta_degrees = *cell.theta;
        spec.train.missingness = cell.missingness;
        const auto c = static_cast<std::uint64_t>(tasks[t].cell);
        const auto r = static_cast<std::uint64_t>(tasks[t].replication);
        spec.train.seed = derive_seed(seed, {c, r, 1});
        spec.test_seed = derive_seed(seed, {c, r, 2});
        spec.estimation_seed = derive_seed(seed, {c, r, 3});
        spec.test_n_per_group = test_n;
        spec.methods = methods;
        spec.estimation = est;
        spec.prefer = ctx.prefer;
        spec.use_observed_outcome = observed;
        results[t] = run_replication(spec);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(tasks.size());
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(ctx.threads, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  std::ostringstream raw;
  raw << "theta,p,missingness,replication,method,status,value,pcd,ipwe,cosine,iterations,converged\n";
  std::map<std::pair<std::size_t, std::string>, std::pair<std::vector<double>, std::vector<double>>> acc;
  std::size_t failed = 0;
  std::size_t not_converged = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Cell& cell = cells[tasks[t].cell];
    for (const auto& o : results[t]) {
      raw << (cell.theta ? format_number(*cell.theta) : std::string()) << ',' << cell.p << ',' << cell.missingness_label
          << ',' << tasks[t].replication << ',' << o.method << ',' << o.status << ',' << opt_number(o.value) << ','
          << opt_number(o.pcd) << ',' << opt_number(o.ipwe) << ',' << opt_number(o.cosine) << ',' << o.iterations
          << ',' << (o.converged ? 1 : 0) << '\n';
      failed += o.status == "failed" ? 1 : 0;
      not_converged += o.status == "not_converged" ? 1 : 0;
      auto& slot = acc[{tasks[t].cell, o.method}];
      if (o.value) slot.first.push_back(*o.value);
      if (o.pcd) slot.second.push_back(*o.pcd);
    }
  }
  std::ostringstream summary;
  summary << "theta,p,missingness,method,n,value_mean,value_halfwidth,pcd_mean,pcd_halfwidth\n";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (const auto& m : methods) {
      const auto& slot = acc[{c, m}];
      const Summary v = summarize(slot.first);
      const Summary q = summarize(slot.second);
      auto num = [](double x) { return std::isnan(x) ? std::string() : format_number(x); };
      summary << (cells[c].theta ? format_number(*cells[c].theta) : std::string()) << ',' << cells[c].p << ','
              << cells[c].missingness_label << ',' << m << ',' << v.count << ',' << num(v.mean) << ','
              << num(1.96 * v.sd) << ',' << num(q.mean) << ',' << num(1.96 * q.sd) << '\n';
    }
  }
  write_text(ctx.out / "sweep_raw.csv", raw.str());
  write_text(ctx.out / "sweep_summary.csv", summary.str());
  report["diagnostics"] = {{"cells", cells.size()},
                           {"replications", replications},
                           {"runs", tasks.size() * methods.size()},
                           {"failed_runs", failed},
                           {"not_converged_runs", not_converged}};
  return report;
}

}  // namespace

CommandResult run_command(const std::string& command, const json& config, const fs::path& config_dir,
                          const Overrides& overrides, std::ostream& err) {
  CommandResult result;
  const auto started = std::chrono::steady_clock::now();
  Context ctx;
  ctx.command = command;
  try {
    if (!config.is_object()) throw ConfigError("config must be a JSON object");
    ctx.config = config;
    ctx.config_dir = config_dir;
    if (overrides.seed) ctx.config["seed"] = *overrides.seed;
    if (overrides.method) ctx.config["method"] = *overrides.method;
    if (ctx.config.contains("seed")) ctx.seed = field<std::uint64_t>(ctx.config, "seed", 0);
    ctx.out = overrides.out ? *overrides.out : ctx.resolve(field<std::string>(ctx.config, "out", "out"));
    ctx.threads = overrides.threads.value_or(field<int>(ctx.config, "threads", 1));
    if (ctx.threads < 1) throw ConfigError("threads must be at least 1");
    // Neither affects results; leaving them out keeps reports comparable.
    ctx.config.erase("threads");
    ctx.config.erase("out");
    ctx.prefer = preference_from_json(ctx.config);
    if (ctx.config.contains("method")) configured_method(ctx);

    if (command == "simulate") {
      result.report = cmd_simulate(ctx);
    } else if (command == "fit") {
      result.report = cmd_fit(ctx);
    } else if (command == "decide") {
      result.report = cmd_decide(ctx);
    } else if (command == "evaluate") {
      result.report = cmd_evaluate(ctx);
    } else if (command == "cv") {
      result.report = cmd_cv(ctx);
    } else if (command == "sweep") {
      result.report = cmd_sweep(ctx);
    } else {
      throw ConfigError("unknown command '" + command + "' (expected simulate, fit, decide, evaluate, cv or sweep)");
    }
    result.report["status"] = "ok";
  } catch (const NonConvergence& e) {
    err << "itr " << command << ": convergence failure: " << e.what() << '\n';
    result.exit_code = 4;
    result.report = e.report();
    result.report["status"] = "not_converged";
    result.report["error"] = e.what();
  } catch (const ConvergenceError& e) {
    err << "itr " << command << ": convergence failure: " << e.what() << '\n';
    result.exit_code = 4;
    result.report = ctx.base_report();
    result.report["status"] = "not_converged";
    result.report["error"] = e.what();
  } catch (const ConfigError& e) {
    err << "itr " << command << ": configuration error: " << e.what() << '\n';
    result.exit_code = 2;
  } catch (const json::exception& e) {
    err << "itr " << command << ": configuration error: " << e.what() << '\n';
    result.exit_code = 2;
  } catch (const Error& e) {
    err << "itr " << command << ": data error: " << e.what() << '\n';
    result.exit_code = 3;
  } catch (const fs::filesystem_error& e) {
    err << "itr " << command << ": data error: " << e.what() << '\n';
    result.exit_code = 3;
  }

  if (result.exit_code == 0 || result.exit_code == 4) {
    try {
      write_json(ctx.out / "report.json", result.report);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      write_json(ctx.out / "timing.json", {{"command", command}, {"wall_clock_seconds", seconds}, {"threads", ctx.threads}});
    } catch (const std::exception& e) {
      err << "itr " << command << ": data error: " << e.what() << '\n';
      result.exit_code = 3;
    }
  }
  return result;
}

CommandResult run_command_file(const std::string& command, const fs::path& config_path, const Overrides& overrides,
                               std::ostream& err) {
  std::ifstream in(config_path);
  if (!in) {
    err << "itr " << command << ": configuration error: cannot open config " << config_path.string() << '\n';
    return {2, json()};
  }
  json config;
  try {
    config = json::parse(in);
  } catch (const json::exception& e) {
    err << "itr " << command << ": configuration error: " << config_path.string() << ": " << e.what() << '\n';
    return {2, json()};
  }
  return run_command(command, config, config_path.parent_path(), overrides, err);
}

}  // namespace itr
