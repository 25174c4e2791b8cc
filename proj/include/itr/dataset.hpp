#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace itr {

/// Noiseless potential outcomes of a simulated subject under both arms.
struct SubjectOracle {
  /// Trajectories on the full visit schedule, fixed plus random effects.
  std::array<std::vector<double>, 2> trajectories;
  /// Last-minus-first value of each trajectory.
  std::array<double, 2> change_scores{0.0, 0.0};
  int decision = 1;
};

/// One subject's observed data. Missing visits are absent from (times, y).
struct SubjectRecord {
  std::string id;
  int group = 1;
  Eigen::VectorXd x;
  std::vector<double> times;
  std::vector<double> y;
  std::optional<SubjectOracle> oracle;

  std::size_t visits() const { return times.size(); }
};

struct TrialDataset {
  std::vector<SubjectRecord> subjects;
  /// Full planned visit schedule; observed times are a subset of it.
  std::vector<double> schedule;

  std::size_t size() const { return subjects.size(); }
  Eigen::Index covariate_dimension() const;

  /// Subjects of group k (1 or 2), in dataset order.
  std::vector<SubjectRecord> group(int k) const;
  std::size_t group_size(int k) const;

  /// Pooled n x p covariate matrix.
  Eigen::MatrixXd covariates() const;
  std::vector<int> assignments() const;
  bool has_oracle() const;

  /// First and last scheduled visit (t1, tm). Falls back to the range of the
  /// observed times when no schedule is recorded.
  std::pair<double, double> endpoints() const;

  /// Checks per-subject invariants; throws DataError on the first violation.
  void validate() const;
};

/// Observed change score: last observed minus first observed outcome.
/// Returns nullopt for subjects with fewer than two visits.
std::optional<double> observed_change_score(const SubjectRecord& s);

}  // namespace itr
