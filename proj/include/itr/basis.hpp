#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace itr {

/// Declarative description of a one-dimensional basis g(t) or a(u).
///
/// Two families are supported: monomials (1, s, s^2, ...) of a given degree,
/// and clamped cubic B-splines with interior knots on a closed boundary
/// interval. Arguments outside the B-spline boundary are clamped onto it, so
/// the basis is defined on the whole real line.
class BasisSpec {
 public:
  enum class Kind { polynomial, cubic_bspline };

  static BasisSpec polynomial(int degree);
  static BasisSpec cubic_bspline(std::vector<double> interior_knots, double lower, double upper);

  Kind kind() const { return kind_; }
  int degree() const { return degree_; }
  const std::vector<double>& interior_knots() const { return knots_; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }

  /// Number of basis functions: degree + 1, or interior knots + 4.
  int dimension() const;

  bool operator==(const BasisSpec&) const = default;

 private:
  BasisSpec() = default;

  Kind kind_ = Kind::polynomial;
  int degree_ = 0;
  std::vector<double> knots_;
  double lower_ = 0.0;
  double upper_ = 0.0;
};

/// Evaluates every basis function at s. Throws DomainError for non-finite s.
Eigen::VectorXd evaluate_basis(const BasisSpec& spec, double s);

/// Stacks evaluate_basis over `times`; row j is g(t_j)^T.
Eigen::MatrixXd time_design(const BasisSpec& spec, std::span<const double> times);

/// Row-wise Kronecker product G ⊗ a^T.
///
/// Column layout is time-major: column (r * a.size() + c) holds G(:, r) * a(c).
/// Every coefficient vector eta in this library follows the same ordering.
Eigen::MatrixXd tensor_design(const Eigen::MatrixXd& G, const Eigen::VectorXd& a_u);

/// Cubic B-spline spec for index values: one interior knot at the sample
/// median, boundary at the sample range.
BasisSpec index_spline_for(std::span<const double> u);

}  // namespace itr
