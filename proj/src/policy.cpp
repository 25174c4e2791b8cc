#include "itr/policy.hpp"

#include "itr/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace itr {

FittedITR FittedITR::from_estimate(const SignatureEstimate& estimate, Preference prefer) {
  FittedITR itr;
  itr.signature = estimate.signature;
  itr.group_fits = estimate.fits;
  itr.specs = estimate.specs;
  itr.t1 = estimate.t1;
  itr.tm = estimate.tm;
  itr.prefer = prefer;
  return itr;
}

double FittedITR::group_ats(int k, double u) const {
  if (k != 1 && k != 2) throw DomainError("group must be 1 or 2");
  const GroupFit& fit = group_fits[static_cast<std::size_t>(k - 1)];
  if (specs.form == ModelForm::tensor) return ats_nonparametric(fit.eta(), specs.time, specs.index, u, t1, tm);
  return ats_parametric(fit.beta(), fit.gamma(), specs.time, u, t1, tm);
}

int decide(const FittedITR& itr, const Eigen::VectorXd& x) {
  if (x.size() != itr.signature.alpha.size()) {
    throw DimensionError("decide: covariate vector has dimension " + std::to_string(x.size()) + ", rule expects " +
                         std::to_string(itr.signature.alpha.size()));
  }
  const double u = itr.signature.alpha.dot(x);
  const double ats1 = itr.group_ats(1, u);
  const double ats2 = itr.group_ats(2, u);
  const bool second_better = itr.prefer == Preference::larger_ats ? ats2 > ats1 : ats2 < ats1;
  return second_better ? 2 : 1;
}

std::vector<int> decide_all(const FittedITR& itr, const TrialDataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data.subjects) out.push_back(decide(itr, s.x));
  return out;
}

double empirical_value(std::span<const int> decisions, std::span<const int> assignments,
                       std::span<const double> outcomes) {
  if (decisions.size() != assignments.size() || decisions.size() != outcomes.size()) {
    throw DimensionError("empirical_value: decisions, assignments and outcomes must have equal length");
  }
  double total = 0.0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i] == assignments[i]) {
      total += outcomes[i];
      ++agree;
    }
  }
  if (agree == 0) throw UndefinedValueError("empirical value undefined: no subject's assignment agrees with the rule");
  return total / static_cast<double>(agree);
}

double ipwe(std::span<const int> decisions, std::span<const int> assignments, std::span<const double> change_scores) {
  return empirical_value(decisions, assignments, change_scores);
}

double pcd(std::span<const int> decisions, std::span<const int> oracle) {
  if (decisions.size() != oracle.size()) throw DimensionError("pcd: decisions and oracle must have equal length");
  if (decisions.empty()) throw EmptyInputError("pcd needs at least one decision");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) correct += decisions[i] == oracle[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(decisions.size());
}

double uniform_policy_value(int group, std::span<const int> assignments, std::span<const double> outcomes) {
  const std::vector<int> decisions(assignments.size(), group);
  return empirical_value(decisions, assignments, outcomes);
}

std::vector<double> value_outcomes(const TrialDataset& data, Preference prefer, bool use_observed) {
  const double sign = prefer == Preference::larger_ats ? 1.0 : -1.0;
  const bool noiseless = !use_observed && data.has_oracle();
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& s : data.subjects) {
    if (noiseless) {
      out.push_back(sign * s.oracle->change_scores[static_cast<std::size_t>(s.group - 1)]);
    } else {
      const auto cs = observed_change_score(s);
      out.push_back(cs ? sign * *cs : std::nan(""));
    }
  }
  return out;
}

namespace {

// Drops subjects whose outcome is undefined.
struct Defined {
  std::vector<int> decisions;
  std::vector<int> assignments;
  std::vector<double> outcomes;
};

Defined defined_only(std::span<const int> decisions, std::span<const int> assignments, std::span<const double> u) {
  Defined d;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (std::isnan(u[i])) continue;
    d.decisions.push_back(decisions[i]);
    d.assignments.push_back(assignments[i]);
    d.outcomes.push_back(u[i]);
  }
  return d;
}

std::optional<double> try_value(const Defined& d) {
  try {
    return empirical_value(d.decisions, d.assignments, d.outcomes);
  } catch (const UndefinedValueError&) {
    return std::nullopt;
  }
}

}  // namespace

EvalReport evaluate_decisions(const TrialDataset& data, std::span<const int> decisions, Preference prefer,
                              bool use_observed_outcome) {
  if (decisions.size() != data.size()) throw DimensionError("evaluate_decisions: one decision per subject required");
  const std::vector<int> assignments = data.assignments();
  EvalReport report;
  const auto u = value_outcomes(data, prefer, use_observed_outcome);
  const Defined value_set = defined_only(decisions, assignments, u);
  report.value = empirical_value(value_set.decisions, value_set.assignments, value_set.outcomes);

  const auto observed = value_outcomes(data, prefer, true);
  report.ipwe = try_value(defined_only(decisions, assignments, observed)).value_or(std::nan(""));

  if (data.has_oracle()) {
    std::vector<int> oracle;
    oracle.reserve(data.size());
    for (const auto& s : data.subjects) {
      const auto& cs = s.oracle->change_scores;
      oracle.push_back((prefer == Preference::larger_ats ? cs[1] > cs[0] : cs[1] < cs[0]) ? 2 : 1);
    }
    report.pcd = pcd(decisions, oracle);
  }
  for (int d : decisions) report.n_assigned[static_cast<std::size_t>(d == 2 ? 1 : 0)] += 1;
  return report;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) {
    s.mean = s.median = s.sd = std::nan("");
    return s;
  }
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  s.median = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = m > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return s;
}

std::vector<std::vector<std::size_t>> stratified_folds(const TrialDataset& data, int folds, std::uint64_t seed,
                                                       int repeat) {
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (static_cast<std::size_t>(folds) > data.size()) {
    throw StratificationError("cannot split " + std::to_string(data.size()) + " subjects into " +
                              std::to_string(folds) + " folds");
  }
  std::array<std::vector<std::size_t>, 2> members;
  for (std::size_t i = 0; i < data.size(); ++i) members[static_cast<std::size_t>(data.subjects[i].group - 1)].push_back(i);
  for (std::size_t k = 0; k < 2; ++k) {
    // A group held entirely in one test fold leaves that training set
    // without the group.
    if (members[k].size() < 2) {
      throw StratificationError("group " + std::to_string(k + 1) + " has " + std::to_string(members[k].size()) +
                                " subject(s); every training split needs both groups");
    }
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(repeat), 0x43565u};
  std::mt19937_64 rng(seq);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
  std::size_t next = 0;
  for (auto& group : members) {
    std::shuffle(group.begin(), group.end(), rng);
    for (std::size_t idx : group) {
      out[next].push_back(idx);
      next = (next + 1) % out.size();
    }
  }
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

CrossValidationResult cross_validate(const TrialDataset& data, const CrossValidationOptions& options) {
  if (options.repeats < 1) throw ConfigError("cross-validation needs at least one repeat");
  CrossValidationResult result;
  const auto outcomes = value_outcomes(data, options.prefer, true);
  const std::vector<int> assignments = data.assignments();
  if (!data.schedule.empty()) {
    const double last = *std::max_element(data.schedule.begin(), data.schedule.end());
    for (const auto& s : data.subjects) {
      if (!s.times.empty() && s.times.back() != last) ++result.truncated_change_scores;
    }
  }

  std::array<std::vector<double>, 2> uniform_values;
  for (int r = 0; r < options.repeats; ++r) {
    const auto split = stratified_folds(data, options.folds, options.seed, r);
    for (std::size_t f = 0; f < split.size(); ++f) {
      const auto& test = split[f];
      TrialDataset train;
      train.schedule = data.schedule;
      std::size_t t = 0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (t < test.size() && test[t] == i) {
          ++t;
          continue;
        }
        train.subjects.push_back(data.subjects[i]);
      }

      EstimationOptions est = options.estimation;
      est.seed = options.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(r * 1000003 + static_cast<int>(f) + 1));
      if (!est.endpoints) est.endpoints = data.endpoints();
      const FittedITR rule = FittedITR::from_estimate(estimate(train, options.method, est), options.prefer);

      FoldResult fold;
      fold.repeat = r;
      fold.fold = static_cast<int>(f);
      fold.test_indices = test;
      fold.iterations = rule.signature.iterations;
      fold.converged = rule.signature.converged;
      std::vector<int> test_assign;
      std::vector<double> test_u;
      for (std::size_t i : test) {
        fold.decisions.push_back(decide(rule, data.subjects[i].x));
        test_assign.push_back(assignments[i]);
        test_u.push_back(outcomes[i]);
      }
      fold.ipwe = try_value(defined_only(fold.decisions, test_assign, test_u));
      for (int g = 1; g <= 2; ++g) {
        const std::vector<int> constant(test.size(), g);
        fold.uniform_ipwe[static_cast<std::size_t>(g - 1)] = try_value(defined_only(constant, test_assign, test_u));
        if (fold.uniform_ipwe[static_cast<std::size_t>(g - 1)]) {
          uniform_values[static_cast<std::size_t>(g - 1)].push_back(*fold.uniform_ipwe[static_cast<std::size_t>(g - 1)]);
        }
      }
      if (fold.ipwe) {
        result.ipwe_values.push_back(*fold.ipwe);
      } else {
        ++result.undefined_folds;
      }
      result.folds.push_back(std::move(fold));
    }
  }
  result.ipwe = summarize(result.ipwe_values);
  result.uniform = {summarize(uniform_values[0]), summarize(uniform_values[1])};
  return result;
}

}  // namespace itr
