#pragma once

#include "itr/basis.hpp"
#include "itr/dataset.hpp"
#include "itr/error.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace itr {

/// Fixed-effect structure of the per-group mixed model.
///
///  - tensor:       y = (G ⊗ a(u)^T) eta + Z b + e, eta in R^{d1*d2}
///  - linear_index: y = G (beta + u Gamma) + Z b + e, i.e. design [G | u G]
///
/// with u = alpha^T x the subject's index value.
enum class ModelForm { tensor, linear_index };

struct ModelSpecs {
  BasisSpec time = BasisSpec::polynomial(2);
  /// Index basis a(u); only used by the tensor form.
  BasisSpec index = BasisSpec::polynomial(1);
  /// Random-effect design rows z(t).
  BasisSpec random = BasisSpec::polynomial(2);
  ModelForm form = ModelForm::linear_index;

  Eigen::Index coefficient_count() const;
  /// Per-subject index row: a(u) for tensor, (1, u) for linear_index.
  Eigen::VectorXd index_row(double u) const;
  Eigen::MatrixXd fixed_design(const Eigen::MatrixXd& G, double u) const;
};

/// Fitted mixed model for one treatment group.
struct GroupFit {
  ModelForm form = ModelForm::linear_index;
  Eigen::Index time_dimension = 0;
  /// eta (tensor) or (beta, Gamma) stacked (linear_index).
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd D;
  double sigma2 = 1.0;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = true;

  const Eigen::VectorXd& eta() const { return coefficients; }
  Eigen::VectorXd beta() const;
  Eigen::VectorXd gamma() const;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, GroupFit best) : Error(what), best_(std::move(best)) {}
  /// Best fit found before the iteration budget ran out.
  const GroupFit& best() const { return best_; }

 private:
  GroupFit best_;
};

struct FitOptions {
  int max_iterations = 500;
  /// Relative log-likelihood tolerance.
  double tolerance = 1e-8;
  double sigma2_floor = 1e-8;
  /// Start the variance-component search from (D, sigma2) instead of the
  /// default (0.1 I, per-subject OLS residual variance).
  std::optional<std::pair<Eigen::MatrixXd, double>> warm_start;
};

/// Z D Z^T + sigma2 I.
Eigen::MatrixXd marginal_covariance(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& D, double sigma2);

/// (sum X_i^T V_i^{-1} X_i)^{-1} sum X_i^T V_i^{-1} y_i over independent blocks.
Eigen::VectorXd gls_fixed_effects(std::span<const Eigen::MatrixXd> X, std::span<const Eigen::VectorXd> y,
                                  std::span<const Eigen::MatrixXd> V);

/// Maximum-likelihood fit of one group at fixed alpha. Fixed effects and
/// sigma2 are profiled out in closed form; the relative random-effect
/// covariance factor is searched by Nelder-Mead, then polished by BFGS.
///
/// Throws ConvergenceError (carrying the best fit) when the iteration
/// budget is exhausted, UnderIdentifiedError for too little data and
/// RankDeficiencyError for a singular fixed design.
GroupFit fit_group(std::span<const SubjectRecord> records, const Eigen::VectorXd& alpha, const ModelSpecs& specs,
                   const FitOptions& options = {});

/// Same as fit_group but reports non-convergence through GroupFit::converged.
GroupFit fit_group_unchecked(std::span<const SubjectRecord> records, const Eigen::VectorXd& alpha,
                             const ModelSpecs& specs, const FitOptions& options = {});

/// Gaussian marginal log-likelihood of the records under `fit`, evaluated
/// directly from dense per-subject covariances.
double log_likelihood(const GroupFit& fit, std::span<const SubjectRecord> records, const Eigen::VectorXd& alpha,
                      const ModelSpecs& specs);

/// Per-subject sufficient statistics of a group at fixed (D, sigma2).
///
/// With the marginal covariance held fixed, generalized least squares for
/// any index vector reduces to small Kronecker-structured sums; this is what
/// makes profiling the fixed effects over many candidate alphas cheap.
class CovarianceProfile {
 public:
  CovarianceProfile(std::span<const SubjectRecord> records, const BasisSpec& time, const BasisSpec& random,
                    const Eigen::MatrixXd& D, double sigma2);

  std::size_t size() const { return pattern_.size(); }
  /// G_i^T Psi_i^{-1} G_i
  const Eigen::MatrixXd& gram(std::size_t i) const { return gram_[pattern_[i]]; }
  /// G_i^T Psi_i^{-1} y_i
  const Eigen::VectorXd& cross(std::size_t i) const { return cross_[i]; }
  /// y_i^T Psi_i^{-1} y_i
  double quadratic(std::size_t i) const { return quad_[i]; }
  /// log |Psi_i|
  double log_det(std::size_t i) const { return log_det_[i]; }
  std::size_t visits(std::size_t i) const { return visits_[i]; }

  /// GLS coefficients for the given per-subject index rows.
  Eigen::VectorXd coefficients(ModelForm form, std::span<const Eigen::VectorXd> index_rows) const;
  double log_likelihood(ModelForm form, std::span<const Eigen::VectorXd> index_rows,
                        const Eigen::VectorXd& coefficients) const;

 private:
  // Subjects with the same visit times share one gram matrix.
  std::vector<std::size_t> pattern_;
  std::vector<Eigen::MatrixXd> gram_;
  std::vector<Eigen::VectorXd> cross_;
  std::vector<double> quad_;
  std::vector<double> log_det_;
  std::vector<std::size_t> visits_;
};

}  // namespace itr
