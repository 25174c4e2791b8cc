#include "itr/nelder_mead.hpp"

#include <doctest.h>

#include <cmath>

using namespace itr;

TEST_SUITE("nelder_mead") {
  TEST_CASE("maximizes a smooth concave quadratic") {
    auto f = [](const Eigen::VectorXd& v) { return -(v - Eigen::Vector2d(1, 2)).squaredNorm(); };
    const NelderMeadResult r = nelder_mead(f, Eigen::Vector2d(0, 0));
    CHECK(r.converged);
    CHECK(std::abs(r.x(0) - 1.0) < 1e-4);
    CHECK(std::abs(r.x(1) - 2.0) < 1e-4);
  }

  TEST_CASE("constant objective returns the start point") {
    auto f = [](const Eigen::VectorXd&) { return 3.0; };
    const Eigen::Vector3d init(0.5, -1, 2);
    const NelderMeadResult r = nelder_mead(f, init);
    CHECK(r.x == init);
    CHECK(r.value == 3.0);
  }

  TEST_CASE("agrees with a 0.01 grid search on a Rosenbrock-style surface") {
    auto f = [](const Eigen::VectorXd& v) {
      const double a = 0.7 - v(0);
      const double b = v(1) - v(0) * v(0);
      return -(a * a + 5.0 * b * b);
    };
    double best = -INFINITY;
    Eigen::Vector2d grid_arg;
    for (int i = -200; i <= 200; ++i) {
      for (int j = -200; j <= 200; ++j) {
        const Eigen::Vector2d v(0.01 * i, 0.01 * j);
        const double val = f(v);
        if (val > best) {
          best = val;
          grid_arg = v;
        }
      }
    }
    NelderMeadOptions opt;
    opt.max_evals = 20000;
    const NelderMeadResult r = nelder_mead(f, Eigen::Vector2d(-1.5, 1.5), opt);
    CHECK((r.x - grid_arg).cwiseAbs().maxCoeff() < 1e-2);
    CHECK(r.value >= best - 1e-8);
  }

  TEST_CASE("exhausted budget returns the best vertex, flagged") {
    auto f = [](const Eigen::VectorXd& v) { return -(v.array() - 3.0).square().sum(); };
    NelderMeadOptions opt;
    opt.max_evals = 15;
    const Eigen::VectorXd init = Eigen::VectorXd::Zero(4);
    const NelderMeadResult r = nelder_mead(f, init, opt);
    CHECK_FALSE(r.converged);
    CHECK(r.evaluations <= opt.max_evals + 6);
    CHECK(r.value >= f(init));
    CHECK(r.value == f(r.x));
  }

  TEST_CASE("property: never worse than the start point") {
    auto bumpy = [](const Eigen::VectorXd& v) { return std::sin(3 * v(0)) * std::cos(2 * v(1)) - 0.01 * v.squaredNorm(); };
    for (int k = 0; k < 20; ++k) {
      const Eigen::Vector2d init(0.37 * k - 3.0, 1.1 - 0.23 * k);
      NelderMeadOptions opt;
      opt.max_evals = 50 + 10 * k;
      CHECK(nelder_mead(bumpy, init, opt).value >= bumpy(init));
    }
  }
}
