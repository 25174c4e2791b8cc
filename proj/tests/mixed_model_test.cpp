#include "itr/mixed_model.hpp"
#include "itr/trial_sim.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

using namespace itr;

namespace {

const std::vector<double> kTimes{0, 1, 2, 3, 4, 5, 6, 7};

// y = G(beta + u Gamma) + Z b + e with Z = G = (1, t, t^2).
std::vector<SubjectRecord> linear_index_group(int n, const Eigen::Vector3d& beta, const Eigen::Vector3d& gamma,
                                              const Eigen::Matrix3d& D, double sigma2, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const Eigen::VectorXd alpha = true_alpha(2);
  const Eigen::MatrixXd G = test::quadratic_rows(kTimes);
  Eigen::LDLT<Eigen::Matrix3d> ldlt(D);
  const Eigen::Matrix3d L = ldlt.transpositionsP().transpose() * Eigen::Matrix3d(ldlt.matrixL()) *
                            ldlt.vectorD().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  std::vector<SubjectRecord> out;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x(2);
    x << z(rng), z(rng);
    Eigen::Vector3d e(z(rng), z(rng), z(rng));
    const Eigen::Vector3d b = L * e;
    const double u = alpha.dot(x);
    const Eigen::VectorXd mean = G * (beta + u * gamma) + G * b;
    std::vector<double> y(kTimes.size());
    for (std::size_t j = 0; j < y.size(); ++j) y[j] = mean(static_cast<Eigen::Index>(j)) + std::sqrt(sigma2) * z(rng);
    out.push_back(test::record(std::to_string(i + 1), 1, x, kTimes, y));
  }
  return out;
}

// Dense log density of N(mu, V) at y, independent of the library.
double dense_log_density(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Eigen::MatrixXd& V) {
  const Eigen::LLT<Eigen::MatrixXd> llt(V);
  const Eigen::VectorXd r = y - mu;
  const Eigen::VectorXd w = llt.matrixL().solve(r);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi) + log_det + w.squaredNorm());
}

}  // namespace

TEST_SUITE("mixed_model") {
  TEST_CASE("marginal covariance examples") {
    CHECK(marginal_covariance(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(2, 2), 2.0) ==
          2.0 * Eigen::MatrixXd::Identity(2, 2));
    const Eigen::MatrixXd cs = marginal_covariance(Eigen::MatrixXd::Ones(3, 1), Eigen::MatrixXd::Ones(1, 1), 1.0);
    CHECK(cs == Eigen::MatrixXd::Ones(3, 3) + Eigen::MatrixXd::Identity(3, 3));
    CHECK_THROWS_AS(marginal_covariance(Eigen::MatrixXd::Ones(3, 2), Eigen::MatrixXd::Ones(1, 1), 1.0), DimensionError);
  }

  TEST_CASE("property: marginal covariance is symmetric") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::MatrixXd Z = test::random_matrix(6, 3, rng);
      const Eigen::MatrixXd L = test::random_matrix(3, 3, rng);
      const Eigen::MatrixXd V = marginal_covariance(Z, L * L.transpose(), 0.7);
      CHECK((V - V.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }

  TEST_CASE("marginal covariance matches the sampling covariance of Zb + e") {
    std::mt19937_64 rng(17);
    const Eigen::MatrixXd Z = test::random_matrix(4, 2, rng);
    const Eigen::MatrixXd L = test::random_matrix(2, 2, rng);
    const double sigma2 = 0.5;
    const Eigen::MatrixXd V = marginal_covariance(Z, L * L.transpose(), sigma2);
    const int draws = 100000;
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(4, 4);
    for (int d = 0; d < draws; ++d) {
      const Eigen::Vector2d e(n(rng), n(rng));
      Eigen::VectorXd v = Z * (L * e);
      for (int j = 0; j < 4; ++j) v(j) += std::sqrt(sigma2) * n(rng);
      acc += v * v.transpose();
    }
    acc /= draws;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        const double se = std::sqrt((V(i, i) * V(j, j) + V(i, j) * V(i, j)) / draws);
        CHECK(std::abs(acc(i, j) - V(i, j)) < 5.0 * se);
      }
    }
  }

  TEST_CASE("GLS with identity covariance is ordinary least squares") {
    std::mt19937_64 rng(21);
    std::vector<Eigen::MatrixXd> X, V;
    std::vector<Eigen::VectorXd> y;
    Eigen::MatrixXd Xs(0, 3);
    Eigen::VectorXd ys(0);
    for (int i = 0; i < 10; ++i) {
      X.push_back(test::random_matrix(4, 3, rng));
      y.push_back(test::random_vector(4, rng));
      V.push_back(Eigen::MatrixXd::Identity(4, 4));
      Xs.conservativeResize(Xs.rows() + 4, Eigen::NoChange);
      Xs.bottomRows(4) = X.back();
      ys.conservativeResize(ys.size() + 4);
      ys.tail(4) = y.back();
    }
    const Eigen::VectorXd ols = Xs.colPivHouseholderQr().solve(ys);
    CHECK((gls_fixed_effects(X, y, V) - ols).cwiseAbs().maxCoeff() <= 1e-10);
  }

  TEST_CASE("GLS on a column of ones is the weighted mean") {
    const std::vector<double> w{1.0, 2.0, 4.0};
    const std::vector<double> vals{3.0, -1.0, 5.0};
    std::vector<Eigen::MatrixXd> X, V;
    std::vector<Eigen::VectorXd> y;
    for (int i = 0; i < 3; ++i) {
      X.push_back(Eigen::MatrixXd::Ones(1, 1));
      y.push_back(Eigen::VectorXd::Constant(1, vals[static_cast<std::size_t>(i)]));
      V.push_back(Eigen::MatrixXd::Constant(1, 1, 1.0 / w[static_cast<std::size_t>(i)]));
    }
    const double expected = (1 * 3.0 + 2 * -1.0 + 4 * 5.0) / 7.0;
    CHECK(gls_fixed_effects(X, y, V)(0) == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("GLS recovers noiseless coefficients and rejects singular designs") {
    std::mt19937_64 rng(8);
    const Eigen::VectorXd eta0 = test::random_vector(3, rng);
    std::vector<Eigen::MatrixXd> X, V;
    std::vector<Eigen::VectorXd> y;
    for (int i = 0; i < 5; ++i) {
      X.push_back(test::random_matrix(4, 3, rng));
      y.push_back(X.back() * eta0);
      const Eigen::MatrixXd A = test::random_matrix(4, 4, rng);
      V.push_back(A * A.transpose() + Eigen::MatrixXd::Identity(4, 4));
    }
    CHECK((gls_fixed_effects(X, y, V) - eta0).cwiseAbs().maxCoeff() <= 1e-8);

    for (auto& x : X) x.col(2) = x.col(1);
    CHECK_THROWS_AS(gls_fixed_effects(X, y, V), RankDeficiencyError);
  }

  TEST_CASE("fit_group recovers beta within three standard errors") {
    const Eigen::Vector3d beta(20, 3, -0.5);
    const Eigen::Vector3d gamma(0, 1, 0.2);
    const auto records = linear_index_group(100, beta, gamma, Eigen::Matrix3d::Zero(), 1.0, 99);
    const Eigen::VectorXd alpha = true_alpha(2);
    const ModelSpecs specs;
    const GroupFit fit = fit_group(records, alpha, specs);
    CHECK(fit.converged);
    CHECK(fit.sigma2 == doctest::Approx(1.0).epsilon(0.15));

    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(6, 6);
    for (const auto& r : records) {
      const Eigen::MatrixXd G = test::quadratic_rows(r.times);
      const Eigen::MatrixXd X = specs.fixed_design(G, alpha.dot(r.x));
      const Eigen::MatrixXd V = marginal_covariance(G, fit.D, fit.sigma2);
      info += X.transpose() * V.llt().solve(X);
    }
    const Eigen::VectorXd se = info.inverse().diagonal().cwiseSqrt();
    for (int j = 0; j < 3; ++j) CHECK(std::abs(fit.beta()(j) - beta(j)) < 3.0 * se(j));
  }

  TEST_CASE("fitted random-effect covariance is positive semi-definite") {
    const auto D = quadratic_random_covariances()[0];
    const auto records = linear_index_group(150, {20, 3, -0.5}, {0, 1, 0.1}, D, 1.0, 5);
    const GroupFit fit = fit_group(records, true_alpha(2), ModelSpecs{});
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fit.D);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8);
    CHECK((fit.D - fit.D.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("noiseless data: residual variance at the floor and exact recovery") {
    const Eigen::Vector3d beta(20, 3, -0.5);
    const Eigen::Vector3d gamma(0, 1, 0.3);
    const auto records = linear_index_group(40, beta, gamma, Eigen::Matrix3d::Zero(), 0.0, 4);
    const GroupFit fit = fit_group_unchecked(records, true_alpha(2), ModelSpecs{});
    CHECK(fit.sigma2 < 1e-4);
    CHECK(fit.sigma2 > 0.0);
    CHECK((fit.beta() - beta).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((fit.gamma() - gamma).cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("fit_group reports under-identified and rank-deficient inputs") {
    const auto records = linear_index_group(2, {20, 3, -0.5}, {0, 1, 0}, Eigen::Matrix3d::Zero(), 1.0, 1);
    CHECK_THROWS_AS(fit_group(records, true_alpha(2), ModelSpecs{}), UnderIdentifiedError);

    auto same_x = linear_index_group(30, {20, 3, -0.5}, {0, 1, 0}, Eigen::Matrix3d::Zero(), 1.0, 2);
    for (auto& r : same_x) r.x = Eigen::Vector2d(1.0, 1.0);
    CHECK_THROWS_AS(fit_group(same_x, true_alpha(2), ModelSpecs{}), RankDeficiencyError);
  }

  TEST_CASE("log-likelihood: single standard-normal observation") {
    ModelSpecs specs;
    specs.time = BasisSpec::polynomial(0);
    specs.random = BasisSpec::polynomial(0);
    GroupFit fit;
    fit.time_dimension = 1;
    fit.coefficients = Eigen::Vector2d(2.5, 0.0);
    fit.D = Eigen::MatrixXd::Zero(1, 1);
    fit.sigma2 = 1.0;
    const std::vector<SubjectRecord> one{test::record("a", 1, Eigen::Vector2d(0.3, -1), {0.0}, {2.5})};
    CHECK(log_likelihood(fit, one, true_alpha(2), specs) ==
          doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  }

  TEST_CASE("log-likelihood: doubling sigma2 with zero residuals costs (sum m / 2) log 2") {
    const ModelSpecs specs;
    GroupFit fit;
    fit.time_dimension = 3;
    fit.coefficients = Eigen::VectorXd::Zero(6);
    fit.coefficients.head(3) = Eigen::Vector3d(1, 2, 3);
    fit.D = Eigen::MatrixXd::Zero(3, 3);
    fit.sigma2 = 0.8;
    std::vector<SubjectRecord> recs;
    std::size_t total = 0;
    for (const std::vector<double>& t : {std::vector<double>{0, 1, 2}, std::vector<double>{0, 3, 5, 7}}) {
      const Eigen::VectorXd mu = test::quadratic_rows(t) * Eigen::Vector3d(1, 2, 3);
      recs.push_back(test::record("s", 1, Eigen::Vector2d(1, 0), t, std::vector<double>(mu.data(), mu.data() + mu.size())));
      total += t.size();
    }
    const double base = log_likelihood(fit, recs, true_alpha(2), specs);
    fit.sigma2 *= 2.0;
    const double doubled = log_likelihood(fit, recs, true_alpha(2), specs);
    CHECK(base - doubled == doctest::Approx(0.5 * static_cast<double>(total) * std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("log-likelihood matches a dense multivariate normal density on 3 subjects") {
    std::mt19937_64 rng(44);
    const ModelSpecs specs;
    GroupFit fit;
    fit.time_dimension = 3;
    fit.coefficients = test::random_vector(6, rng);
    const Eigen::MatrixXd L = test::random_matrix(3, 3, rng);
    fit.D = 0.1 * L * L.transpose();
    fit.sigma2 = 1.3;
    const Eigen::VectorXd alpha = true_alpha(2);
    std::vector<SubjectRecord> recs;
    double expected = 0.0;
    for (const std::vector<double>& t : {std::vector<double>{0, 1, 2, 3}, std::vector<double>{0, 2, 7},
                                         std::vector<double>{1, 4, 5, 6, 7}}) {
      const Eigen::VectorXd x = test::random_vector(2, rng);
      const Eigen::VectorXd y = test::random_vector(static_cast<Eigen::Index>(t.size()), rng) * 3.0;
      const Eigen::MatrixXd G = test::quadratic_rows(t);
      const double u = alpha.dot(x);
      const Eigen::VectorXd mu = G * (fit.coefficients.head(3) + u * fit.coefficients.tail(3));
      const Eigen::MatrixXd V = G * fit.D * G.transpose() + fit.sigma2 * Eigen::MatrixXd::Identity(G.rows(), G.rows());
      expected += dense_log_density(y, mu, V);
      recs.push_back(test::record("s", 1, x, t, std::vector<double>(y.data(), y.data() + y.size())));
    }
    CHECK(log_likelihood(fit, recs, alpha, specs) == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("fit log-likelihood equals the dense evaluation, tensor and linear-index forms") {
    const auto records = linear_index_group(60, {20, 3, -0.5}, {0, 1, 0.2}, quadratic_random_covariances()[1], 1.0, 12);
    const Eigen::VectorXd alpha = true_alpha(2);
    ModelSpecs linear;
    const GroupFit lf = fit_group(records, alpha, linear);
    CHECK(lf.loglik == doctest::Approx(log_likelihood(lf, records, alpha, linear)).epsilon(1e-10));

    ModelSpecs tensor;
    tensor.form = ModelForm::tensor;
    tensor.time = BasisSpec::cubic_bspline({3.5}, 0, 7);
    tensor.index = BasisSpec::cubic_bspline({0.0}, -4, 4);
    const GroupFit tf = fit_group(records, alpha, tensor);
    CHECK(tf.coefficients.size() == 25);
    CHECK(tf.loglik == doctest::Approx(log_likelihood(tf, records, alpha, tensor)).epsilon(1e-10));
  }

  TEST_CASE("property: fixed effects are stationary at the fitted covariance") {
    const auto records = linear_index_group(80, {20, 3, -0.5}, {0, 1, 0.2}, quadratic_random_covariances()[0], 1.0, 31);
    const Eigen::VectorXd alpha = true_alpha(2);
    const ModelSpecs specs;
    const GroupFit fit = fit_group(records, alpha, specs);
    const double at_fit = log_likelihood(fit, records, alpha, specs);
    for (Eigen::Index j = 0; j < fit.coefficients.size(); ++j) {
      for (double h : {-1e-4, 1e-4}) {
        GroupFit moved = fit;
        moved.coefficients(j) += h;
        CHECK(log_likelihood(moved, records, alpha, specs) <= at_fit);
      }
    }
  }

  TEST_CASE("property: the fit is never worse than its starting covariance") {
    const auto records = linear_index_group(80, {20, 3, -0.5}, {0, 1, 0.2}, quadratic_random_covariances()[0], 1.0, 32);
    const Eigen::VectorXd alpha = true_alpha(2);
    const ModelSpecs specs;
    FitOptions warm;
    warm.warm_start = std::make_pair(Eigen::MatrixXd(0.1 * Eigen::MatrixXd::Identity(3, 3)), 2.0);
    const GroupFit fit = fit_group(records, alpha, specs, warm);

    const CovarianceProfile start(records, specs.time, specs.random, warm.warm_start->first, warm.warm_start->second);
    std::vector<Eigen::VectorXd> rows;
    for (const auto& r : records) rows.push_back(specs.index_row(alpha.dot(r.x)));
    const Eigen::VectorXd coef = start.coefficients(specs.form, rows);
    CHECK(fit.loglik >= start.log_likelihood(specs.form, rows, coef));
  }

  TEST_CASE("covariance profile GLS equals dense GLS") {
    const auto records = linear_index_group(25, {20, 3, -0.5}, {0, 1, 0.2}, Eigen::Matrix3d::Identity() * 0.2, 1.0, 77);
    const Eigen::VectorXd alpha = true_alpha(2);
    const ModelSpecs specs;
    const Eigen::MatrixXd D = 0.3 * Eigen::MatrixXd::Identity(3, 3);
    const CovarianceProfile profile(records, specs.time, specs.random, D, 0.9);
    std::vector<Eigen::MatrixXd> X, V;
    std::vector<Eigen::VectorXd> y;
    std::vector<Eigen::VectorXd> rows;
    for (const auto& r : records) {
      const Eigen::MatrixXd G = test::quadratic_rows(r.times);
      X.push_back(specs.fixed_design(G, alpha.dot(r.x)));
      y.push_back(Eigen::Map<const Eigen::VectorXd>(r.y.data(), static_cast<Eigen::Index>(r.y.size())));
      V.push_back(marginal_covariance(G, D, 0.9));
      rows.push_back(specs.index_row(alpha.dot(r.x)));
    }
    const Eigen::VectorXd dense = gls_fixed_effects(X, y, V);
    CHECK((profile.coefficients(specs.form, rows) - dense).cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("property: deleting visits equals fitting the reduced data directly") {
    auto records = linear_index_group(50, {20, 3, -0.5}, {0, 1, 0.2}, quadratic_random_covariances()[0], 1.0, 61);
    TrialDataset data;
    data.schedule = kTimes;
    data.subjects = records;
    const TrialDataset reduced = apply_mcar(data, 0.3, 9);

    std::vector<SubjectRecord> rebuilt;
    for (std::size_t i = 0; i < records.size(); ++i) {
      std::vector<double> t;
      std::vector<double> y;
      for (std::size_t j = 0; j < records[i].times.size(); ++j) {
        const auto& kept = reduced.subjects[i].times;
        if (std::find(kept.begin(), kept.end(), records[i].times[j]) != kept.end()) {
          t.push_back(records[i].times[j]);
          y.push_back(records[i].y[j]);
        }
      }
      rebuilt.push_back(test::record(records[i].id, 1, records[i].x, t, y));
    }
    const GroupFit a = fit_group(reduced.subjects, true_alpha(2), ModelSpecs{});
    const GroupFit b = fit_group(rebuilt, true_alpha(2), ModelSpecs{});
    CHECK(a.coefficients == b.coefficients);
    CHECK(a.D == b.D);
    CHECK(a.sigma2 == b.sigma2);
    CHECK(a.loglik == b.loglik);
  }

  TEST_CASE("exhausted iteration budget raises ConvergenceError with the best fit") {
    const auto records = linear_index_group(40, {20, 3, -0.5}, {0, 1, 0.2}, quadratic_random_covariances()[0], 1.0, 3);
    FitOptions tight;
    tight.max_iterations = 2;
    try {
      (void)fit_group(records, true_alpha(2), ModelSpecs{}, tight);
      FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
      CHECK_FALSE(e.best().converged);
      CHECK(std::isfinite(e.best().loglik));
    }
  }
}
