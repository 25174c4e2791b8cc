#include "itr/nelder_mead.hpp"

#include "itr/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace itr {

namespace {

constexpr double kReflect = 1.0;
constexpr double kExpand = 2.0;
constexpr double kContract = 0.5;
constexpr double kShrink = 0.5;

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                             const Eigen::VectorXd& init, const NelderMeadOptions& options) {
  const Eigen::Index n = init.size();
  if (n == 0) throw DimensionError("nelder_mead needs a non-empty start point");

  int evals = 0;
  // Internally minimize the negated objective; NaN counts as +inf.
  auto cost = [&](const Eigen::VectorXd& v) {
    ++evals;
    const double f = -objective(v);
    return std::isnan(f) ? INFINITY : f;
  };

  std::vector<Eigen::VectorXd> vertex(static_cast<std::size_t>(n + 1), init);
  std::vector<double> value(static_cast<std::size_t>(n + 1));
  value[0] = cost(init);
  if (!std::isfinite(value[0])) throw DomainError("nelder_mead: objective is not finite at the start point");
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& v = vertex[static_cast<std::size_t>(i + 1)];
    v(i) += options.simplex_scale;
    value[static_cast<std::size_t>(i + 1)] = cost(v);
  }

  std::vector<std::size_t> order(vertex.size());
  NelderMeadResult result;
  int iterations = 0;
  bool converged = false;

  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return value[a] < value[b]; });
    {
      std::vector<Eigen::VectorXd> v2;
      std::vector<double> f2;
      v2.reserve(order.size());
      f2.reserve(order.size());
      for (auto k : order) {
        v2.push_back(std::move(vertex[k]));
        f2.push_back(value[k]);
      }
      vertex = std::move(v2);
      value = std::move(f2);
    }

    const double best = value.front();
    const double spread = value.back() - best;
    double size = 0.0;
    for (std::size_t k = 1; k < vertex.size(); ++k) {
      size = std::max(size, (vertex[k] - vertex[0]).cwiseAbs().maxCoeff());
    }
    if ((spread <= options.f_tolerance * (1.0 + std::abs(best)) || spread == 0.0) && size <= options.x_tolerance) {
      converged = true;
      break;
    }
    if (evals >= options.max_evals || iterations >= options.max_iterations) break;
    ++iterations;

    const std::size_t worst = vertex.size() - 1;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < worst; ++k) centroid += vertex[k];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd reflected = centroid + kReflect * (centroid - vertex[worst]);
    const double f_reflected = cost(reflected);

    if (f_reflected < value[0]) {
      const Eigen::VectorXd expanded = centroid + kExpand * (reflected - centroid);
      const double f_expanded = cost(expanded);
      if (f_expanded < f_reflected) {
        vertex[worst] = expanded;
        value[worst] = f_expanded;
      } else {
        vertex[worst] = reflected;
        value[worst] = f_reflected;
      }
      continue;
    }
    if (f_reflected < value[worst - 1]) {
      vertex[worst] = reflected;
      value[worst] = f_reflected;
      continue;
    }
    if (f_reflected < value[worst]) {
      const Eigen::VectorXd outside = centroid + kContract * (reflected - centroid);
      const double f_outside = cost(outside);
      if (f_outside <= f_reflected) {
        vertex[worst] = outside;
        value[worst] = f_outside;
        continue;
      }
    } else {
      const Eigen::VectorXd inside = centroid + kContract * (vertex[worst] - centroid);
      const double f_inside = cost(inside);
      if (f_inside < value[worst]) {
        vertex[worst] = inside;
        value[worst] = f_inside;
        continue;
      }
    }
    for (std::size_t k = 1; k < vertex.size(); ++k) {
      vertex[k] = vertex[0] + kShrink * (vertex[k] - vertex[0]);
      value[k] = cost(vertex[k]);
    }
  }

  result.x = vertex.front();
  result.value = -value.front();
  result.evaluations = evals;
  result.iterations = iterations;
  result.converged = converged;
  return result;
}

}  // namespace itr
