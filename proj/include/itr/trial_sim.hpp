#pragma once

#include "itr/dataset.hpp"
#include "itr/policy.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace itr {

struct MissingnessSpec {
  enum class Kind { none, mcar, dropout };
  Kind kind = Kind::none;
  double rate = 0.0;
  /// Share of subjects missing the last 0, 1, 2, 3, 4 visits.
  std::array<double, 5> proportions{1.0, 0.0, 0.0, 0.0, 0.0};

  static MissingnessSpec none() { return {}; }
  static MissingnessSpec mcar(double rate);
  static MissingnessSpec dropout(const std::array<double, 5>& proportions);
  /// 50/30/10/5/5.
  static MissingnessSpec default_dropout();

  void validate() const;
};

struct SimScenario {
  enum class Kind { quadratic, nonquadratic };
  Kind kind = Kind::quadratic;
  int p = 2;
  int n_per_group = 100;
  double theta_degrees = 5.0;
  std::vector<double> times{0, 1, 2, 3, 4, 5, 6, 7};
  std::uint64_t seed = 1;
  MissingnessSpec missingness;
  double sigma2 = 1.0;
  /// Use one random-effect draw for both potential arms.
  bool shared_random_effects = false;
  /// Drop random effects and residual error entirely.
  bool noiseless = false;

  void validate() const;
};

/// (-p, ..., -(p/2+1), p/2, ..., 1).
Eigen::VectorXd covariate_mean(int p);
/// Unit diagonal, 0.5^|i-j| off the diagonal.
Eigen::MatrixXd covariate_covariance(int p);
/// n x p draws from N(covariate_mean(p), covariate_covariance(p)).
/// Throws ConfigError for odd p or p < 2.
Eigen::MatrixXd sample_covariates(int n, int p, std::mt19937_64& rng);

/// (1, 2, ..., p) normalized.
Eigen::VectorXd true_alpha(int p);

/// Gamma_1 = (0, cos t, sin t), Gamma_2 = (0, cos t, -sin t), t in degrees.
std::pair<Eigen::Vector3d, Eigen::Vector3d> gamma_pair(double theta_degrees);

/// Fixed-effect coefficients of the quadratic scenario.
std::array<Eigen::Vector3d, 2> quadratic_betas();
/// Random-effect covariances of the quadratic scenario.
std::array<Eigen::Matrix3d, 2> quadratic_random_covariances();

/// Mean outcome of arm k (1 or 2) at time t and index u in the
/// non-quadratic scenario.
double nonquadratic_mean(int k, double t, double u);

/// Complete data from the quadratic scenario, then missingness. The first
/// n_per_group subjects are assigned to group 1, the rest to group 2.
TrialDataset simulate_quadratic(const SimScenario& scenario);
TrialDataset simulate_nonquadratic(const SimScenario& scenario);
TrialDataset simulate(const SimScenario& scenario);

/// Deletes each non-baseline visit independently with probability `rate`.
TrialDataset apply_mcar(const TrialDataset& data, double rate, std::uint64_t seed);
/// Removes the last 0..4 visits per the pattern proportions, within each
/// group. Exact quotas when every group_size * proportion is an integer.
TrialDataset apply_dropout(const TrialDataset& data, const std::array<double, 5>& proportions, std::uint64_t seed);
TrialDataset apply_missingness(const TrialDataset& data, const MissingnessSpec& spec, std::uint64_t seed);

/// Arm with the preferred noiseless change score per subject; ties go to 1.
/// Throws DataError when a subject has no potential outcomes.
std::vector<int> oracle_decisions(const TrialDataset& data, Preference prefer = Preference::larger_ats);

}  // namespace itr
