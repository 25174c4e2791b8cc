#pragma once

#include "itr/dataset.hpp"
#include "itr/signature.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace itr {

enum class Preference { larger_ats, smaller_ats };

/// A deployable decision rule: biosignature, per-group fits, basis specs
/// and the study endpoints the average tangent slopes are taken over.
struct FittedITR {
  Biosignature signature;
  std::array<GroupFit, 2> group_fits;
  ModelSpecs specs;
  double t1 = 0.0;
  double tm = 1.0;
  Preference prefer = Preference::larger_ats;

  static FittedITR from_estimate(const SignatureEstimate& estimate, Preference prefer = Preference::larger_ats);

  /// ATS of group k (1 or 2) at index value u.
  double group_ats(int k, double u) const;
};

/// Group whose fitted ATS at u = alpha^T x is preferred; exact ties go to 1.
int decide(const FittedITR& itr, const Eigen::VectorXd& x);
std::vector<int> decide_all(const FittedITR& itr, const TrialDataset& data);

struct EvalReport {
  double value = 0.0;
  std::optional<double> pcd;
  double ipwe = 0.0;
  std::array<int, 2> n_assigned{0, 0};
};

/// sum U_i I(A_i = D_i) / sum I(A_i = D_i); UndefinedValueError when no
/// subject agrees with the rule.
double empirical_value(std::span<const int> decisions, std::span<const int> assignments,
                       std::span<const double> outcomes);

/// Inverse probability weighted estimator; the same expression as
/// empirical_value with change scores as outcomes.
double ipwe(std::span<const int> decisions, std::span<const int> assignments, std::span<const double> change_scores);

/// Proportion of decisions equal to the oracle decision.
double pcd(std::span<const int> decisions, std::span<const int> oracle);

/// Value of assigning everyone to `group`.
double uniform_policy_value(int group, std::span<const int> assignments, std::span<const double> outcomes);

/// Outcome U_i used for value, oriented so that larger is better under
/// `prefer`. Simulated data (with oracle) use the noiseless change score of
/// the assigned arm unless `use_observed` is set; otherwise the observed
/// change score, NaN for subjects with fewer than two visits.
std::vector<double> value_outcomes(const TrialDataset& data, Preference prefer, bool use_observed);

/// Value, PCD (when oracle decisions exist) and IPWE of `decisions` on data.
EvalReport evaluate_decisions(const TrialDataset& data, std::span<const int> decisions, Preference prefer,
                              bool use_observed_outcome = false);

struct CrossValidationOptions {
  Method method = Method::pats;
  int folds = 10;
  int repeats = 100;
  std::uint64_t seed = 1;
  Preference prefer = Preference::larger_ats;
  EstimationOptions estimation;
};

struct FoldResult {
  int repeat = 0;
  int fold = 0;
  std::vector<std::size_t> test_indices;
  std::vector<int> decisions;
  /// Empty when no test subject agrees with the rule.
  std::optional<double> ipwe;
  /// IPWE of assigning every test subject to group 1 / group 2.
  std::array<std::optional<double>, 2> uniform_ipwe;
  int iterations = 0;
  bool converged = true;
};

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double sd = 0.0;
};
Summary summarize(std::span<const double> values);

struct CrossValidationResult {
  std::vector<FoldResult> folds;
  /// Fold-level IPWEs, skipping folds with no agreement.
  std::vector<double> ipwe_values;
  Summary ipwe;
  std::array<Summary, 2> uniform;
  std::size_t undefined_folds = 0;
  /// Subjects whose change score used a visit other than the scheduled last.
  std::size_t truncated_change_scores = 0;
};

/// Stratified-by-group split of subject indices into `folds` folds for one
/// repeat. Deterministic in (seed, repeat).
std::vector<std::vector<std::size_t>> stratified_folds(const TrialDataset& data, int folds, std::uint64_t seed,
                                                       int repeat);

/// Repeated k-fold cross-validation of the IPWE with observed change scores.
CrossValidationResult cross_validate(const TrialDataset& data, const CrossValidationOptions& options);

}  // namespace itr
