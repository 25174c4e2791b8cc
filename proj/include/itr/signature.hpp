#pragma once

#include "itr/basis.hpp"
#include "itr/dataset.hpp"
#include "itr/mixed_model.hpp"
#include "itr/nelder_mead.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace itr {

enum class Method { npats, pats, mle, fixed };

std::string to_string(Method method);
/// Parses "npats", "pats", "mle" or "fixed"; throws ConfigError otherwise.
Method method_from_string(std::string_view name);

/// Unit-norm index vector alpha, first nonzero coordinate positive.
struct Biosignature {
  Eigen::VectorXd alpha;
  Method method = Method::fixed;
  int iterations = 0;
  bool converged = true;
  /// Criterion value after each outer iteration (log-likelihood for MLE).
  std::vector<double> objective_trace;
  std::vector<std::string> warnings;
};

struct CovariateMoments {
  Eigen::VectorXd mean;
  /// Empirical covariance with divisor n, so that the moment expansion of
  /// the criterion equals the empirical mean over the sample exactly.
  Eigen::MatrixXd covariance;

  static CovariateMoments from_sample(const Eigen::MatrixXd& x);
};

/// v / |v|, negated when its leading nonzero coordinate is negative.
Eigen::VectorXd normalize_signature(const Eigen::VectorXd& v);

/// (g(tm) - g(t1)) / (tm - t1); throws DomainError unless tm > t1.
Eigen::VectorXd chord_slope(const BasisSpec& time_spec, double t1, double tm);

/// Average tangent slope of the linear-index model at index value u.
double ats_parametric(const Eigen::VectorXd& beta, const Eigen::VectorXd& gamma, const BasisSpec& time_spec, double u,
                      double t1, double tm);

/// Average tangent slope of the tensor model, eta^T[(g(tm)-g(t1)) ⊗ a(u)]/(tm-t1).
double ats_nonparametric(const Eigen::VectorXd& eta, const BasisSpec& time_spec, const BasisSpec& index_spec, double u,
                         double t1, double tm);

/// Mean over the rows of `covariates` of (ATS_1(u) - ATS_2(u))^2 with
/// u = alpha^T x. alpha is normalized first.
double npats_objective(const Eigen::VectorXd& eta1, const Eigen::VectorXd& eta2, const Eigen::VectorXd& alpha,
                       const Eigen::MatrixXd& covariates, const BasisSpec& time_spec, const BasisSpec& index_spec,
                       double t1, double tm);

struct PatsCoefficients {
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
};

/// With s = chord_slope: c1 = (s.dbeta)^2, c2 = 2 (s.dbeta)(s.dGamma),
/// c3 = (s.dGamma)^2, where d denotes the group 1 minus group 2 difference.
PatsCoefficients pats_coefficients(const Eigen::VectorXd& beta1, const Eigen::VectorXd& beta2,
                                   const Eigen::VectorXd& gamma1, const Eigen::VectorXd& gamma2,
                                   const BasisSpec& time_spec, double t1, double tm);

/// c1 + c2 mu^T alpha + c3 alpha^T (mu mu^T + Sigma) alpha, alpha normalized.
double pats_criterion(const Eigen::VectorXd& beta1, const Eigen::VectorXd& beta2, const Eigen::VectorXd& gamma1,
                      const Eigen::VectorXd& gamma2, const CovariateMoments& moments, const Eigen::VectorXd& alpha,
                      const BasisSpec& time_spec, double t1, double tm);

/// Decomposition log L(alpha) = a + L1 alpha + alpha^T L2 alpha of the
/// linear-index log-likelihood with (beta, Gamma, D, sigma2) held fixed.
struct LikelihoodComponents {
  double a = 0.0;
  Eigen::RowVectorXd L1;
  Eigen::MatrixXd L2;

  double evaluate(const Eigen::VectorXd& alpha) const { return a + L1.dot(alpha) + alpha.dot(L2 * alpha); }
};

/// Components summed over both groups. `alpha` only fixes the covariate
/// dimension; the decomposition holds for every alpha.
LikelihoodComponents mle_components(const std::array<GroupFit, 2>& fits,
                                    const std::array<std::span<const SubjectRecord>, 2>& records,
                                    const Eigen::VectorXd& alpha, const ModelSpecs& specs);

struct EstimationOptions {
  /// Time basis g(t). Defaults: cubic B-spline with one knot at the middle
  /// of the study for NPATS, quadratic polynomial otherwise.
  std::optional<BasisSpec> time_basis;
  /// Index basis a(u) for NPATS. Default: cubic B-spline with one knot at
  /// the median of alpha^T x, re-placed whenever alpha changes.
  std::optional<BasisSpec> index_basis;
  BasisSpec random_basis = BasisSpec::polynomial(2);
  /// 0 picks the per-method cap (NPATS 100, PATS 400, MLE 50).
  int max_outer_iterations = 0;
  /// Extra random starts for NPATS and PATS.
  int restarts = 4;
  std::uint64_t seed = 1;
  double cosine_tolerance = 0.99;
  /// Evaluate the NPATS criterion on the pooled covariate sample (true) or
  /// as the average of the two per-group empirical distributions (false).
  bool pooled_index_distribution = true;
  std::optional<Eigen::VectorXd> initial_alpha;
  /// Study endpoints (t1, tm); default from the dataset schedule.
  std::optional<std::pair<double, double>> endpoints;
  FitOptions fit;
  NelderMeadOptions nelder_mead{.max_evals = 0, .simplex_scale = 0.1, .f_tolerance = 1e-9, .x_tolerance = 1e-4};
};

/// A biosignature together with the group fits at that alpha.
struct SignatureEstimate {
  Biosignature signature;
  std::array<GroupFit, 2> fits;
  ModelSpecs specs;
  double t1 = 0.0;
  double tm = 1.0;
};

/// Starting direction: leading right singular vector of the two per-group
/// regressions of per-subject OLS time slopes on x.
Eigen::VectorXd initial_signature(const TrialDataset& data);

SignatureEstimate estimate_npats(const TrialDataset& data, const EstimationOptions& options = {});
SignatureEstimate estimate_pats(const TrialDataset& data, const EstimationOptions& options = {});
SignatureEstimate estimate_mle(const TrialDataset& data, const EstimationOptions& options = {});
/// Group fits at a given alpha (e.g. the generating one), no search.
SignatureEstimate estimate_fixed(const TrialDataset& data, const Eigen::VectorXd& alpha, ModelForm form,
                                 const EstimationOptions& options = {});
SignatureEstimate estimate(const TrialDataset& data, Method method, const EstimationOptions& options = {});

}  // namespace itr
