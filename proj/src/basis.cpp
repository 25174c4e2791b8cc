#include "itr/basis.hpp"

#include "itr/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace itr {

BasisSpec BasisSpec::polynomial(int degree) {
  if (degree < 0) {
    throw DomainError("polynomial basis degree must be non-negative, got " + std::to_string(degree));
  }
  BasisSpec spec;
  spec.kind_ = Kind::polynomial;
  spec.degree_ = degree;
  return spec;
}

BasisSpec BasisSpec::cubic_bspline(std::vector<double> interior_knots, double lower, double upper) {
  if (!std::isfinite(lower) || !std::isfinite(upper) || !(lower < upper)) {
    throw DomainError("B-spline boundary must be a finite interval with lower < upper");
  }
  double previous = lower;
  for (double knot : interior_knots) {
    if (!std::isfinite(knot) || !(knot > previous) || !(knot < upper)) {
      throw DomainError("B-spline interior knots must be strictly increasing and strictly inside the boundary");
    }
    previous = knot;
  }
  BasisSpec spec;
  spec.kind_ = Kind::cubic_bspline;
  spec.degree_ = 3;
  spec.knots_ = std::move(interior_knots);
  spec.lower_ = lower;
  spec.upper_ = upper;
  return spec;
}

int BasisSpec::dimension() const {
  if (kind_ == Kind::polynomial) return degree_ + 1;
  return static_cast<int>(knots_.size()) + 4;
}

namespace {

constexpr int kOrder = 4;

// Nonzero cubic B-splines on span `span` of the clamped knot vector (de Boor's
// triangular recurrence). Returns N_{span-3..span}(s).
std::array<double, kOrder> nonzero_cubic(const std::vector<double>& knots, int span, double s) {
  std::array<double, kOrder> values{};
  std::array<double, kOrder> left{};
  std::array<double, kOrder> right{};
  values[0] = 1.0;
  for (int j = 1; j < kOrder; ++j) {
    left[j] = s - knots[span + 1 - j];
    right[j] = knots[span + j] - s;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom == 0.0 ? 0.0 : values[r] / denom;
      values[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    values[j] = saved;
  }
  return values;
}

Eigen::VectorXd evaluate_bspline(const BasisSpec& spec, double s) {
  const double x = std::clamp(s, spec.lower(), spec.upper());
  std::vector<double> knots;
  knots.reserve(spec.interior_knots().size() + 2 * kOrder);
  knots.insert(knots.end(), kOrder, spec.lower());
  knots.insert(knots.end(), spec.interior_knots().begin(), spec.interior_knots().end());
  knots.insert(knots.end(), kOrder, spec.upper());

  const int n = spec.dimension();
  // Span index k with knots[k] <= x < knots[k+1]; the right endpoint belongs
  // to the last non-degenerate span.
  int span = n - 1;
  if (x < spec.upper()) {
    span = static_cast<int>(std::upper_bound(knots.begin(), knots.end(), x) - knots.begin()) - 1;
    span = std::clamp(span, kOrder - 1, n - 1);
  }
  const auto local = nonzero_cubic(knots, span, x);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (int r = 0; r < kOrder; ++r) out(span - (kOrder - 1) + r) = local[r];
  return out;
}

}  // namespace

Eigen::VectorXd evaluate_basis(const BasisSpec& spec, double s) {
  if (!std::isfinite(s)) throw DomainError("basis argument must be finite");
  if (spec.kind() == BasisSpec::Kind::cubic_bspline) return evaluate_bspline(spec, s);
  Eigen::VectorXd out(spec.dimension());
  double power = 1.0;
  for (int d = 0; d < out.size(); ++d) {
    out(d) = power;
    power *= s;
  }
  return out;
}

Eigen::MatrixXd time_design(const BasisSpec& spec, std::span<const double> times) {
  if (times.empty()) throw EmptyInputError("time_design needs at least one time point");
  Eigen::MatrixXd G(static_cast<Eigen::Index>(times.size()), spec.dimension());
  for (std::size_t j = 0; j < times.size(); ++j) {
    G.row(static_cast<Eigen::Index>(j)) = evaluate_basis(spec, times[j]).transpose();
  }
  return G;
}

Eigen::MatrixXd tensor_design(const Eigen::MatrixXd& G, const Eigen::VectorXd& a_u) {
  if (!a_u.allFinite()) throw DomainError("index basis values must be finite");
  if (a_u.size() == 0) throw DimensionError("index basis vector is empty");
  const Eigen::Index d2 = a_u.size();
  Eigen::MatrixXd X(G.rows(), G.cols() * d2);
  for (Eigen::Index r = 0; r < G.cols(); ++r) {
    X.middleCols(r * d2, d2).noalias() = G.col(r) * a_u.transpose();
  }
  return X;
}

BasisSpec index_spline_for(std::span<const double> u) {
  if (u.empty()) throw EmptyInputError("index_spline_for needs at least one index value");
  std::vector<double> sorted(u.begin(), u.end());
  std::sort(sorted.begin(), sorted.end());
  double lower = sorted.front();
  double upper = sorted.back();
  if (!(upper - lower > 1e-12)) {
    lower -= 0.5;
    upper += 0.5;
  }
  const std::size_t n = sorted.size();
  double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const double margin = 1e-6 * (upper - lower);
  if (!(median > lower + margin && median < upper - margin)) median = 0.5 * (lower + upper);
  return BasisSpec::cubic_bspline({median}, lower, upper);
}

}  // namespace itr
