#pragma once

#include <Eigen/Dense>

#include <functional>

namespace itr {

struct NelderMeadOptions {
  int max_evals = 2000;
  int max_iterations = 1000000;
  /// Edge length of the initial axis-aligned simplex around the start point.
  double simplex_scale = 0.1;
  /// Stop once the objective spread across the simplex is below
  /// f_tolerance * (1 + |best|) and every vertex is within x_tolerance of
  /// the best one (max-norm).
  double f_tolerance = 1e-10;
  double x_tolerance = 1e-8;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  int iterations = 0;
  /// False when max_evals ran out; x is then the best vertex seen.
  bool converged = false;
};

/// Maximizes `objective` over R^p with the classic simplex method
/// (reflection 1, expansion 2, contraction 0.5, shrink 0.5).
///
/// The start point is a simplex vertex and ties keep the earlier vertex, so
/// the returned value is never worse than objective(init).
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                             const Eigen::VectorXd& init, const NelderMeadOptions& options = {});

}  // namespace itr
