#include "itr/trial_sim.hpp"

#include "itr/signature.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace itr;

namespace {

bool same_dataset(const TrialDataset& a, const TrialDataset& b) {
  if (a.size() != b.size() || a.schedule != b.schedule) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& s = a.subjects[i];
    const auto& t = b.subjects[i];
    if (s.id != t.id || s.group != t.group || s.x != t.x || s.times != t.times || s.y != t.y) return false;
    if (s.oracle.has_value() != t.oracle.has_value()) return false;
    if (s.oracle && (s.oracle->trajectories != t.oracle->trajectories || s.oracle->decision != t.oracle->decision)) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("trial_sim") {
  TEST_CASE("covariate mean pattern is orthogonal to the true index") {
    CHECK(covariate_mean(4) == Eigen::Vector4d(-4, -3, 2, 1));
    CHECK(covariate_mean(2) == Eigen::Vector2d(-2, 1));
    for (int p : {2, 4, 10, 20, 30}) CHECK(std::abs(true_alpha(p).dot(covariate_mean(p))) < 1e-12);
    const Eigen::MatrixXd S = covariate_covariance(4);
    CHECK(S(0, 0) == 1.0);
    CHECK(S(0, 3) == 0.125);
    CHECK(S(2, 1) == 0.5);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(covariate_covariance(30)).eigenvalues().minCoeff() >= -1e-8);
  }

  TEST_CASE("covariate sample mean converges") {
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd x = sample_covariates(100000, 4, rng);
    const Eigen::VectorXd mean = x.colwise().mean().transpose();
    CHECK((mean - covariate_mean(4)).cwiseAbs().maxCoeff() < 0.02);
    CHECK_THROWS_AS(sample_covariates(10, 3, rng), ConfigError);
    CHECK_THROWS_AS(sample_covariates(10, 0, rng), ConfigError);
  }

  TEST_CASE("true alpha") {
    const Eigen::VectorXd a2 = true_alpha(2);
    CHECK(a2(0) == doctest::Approx(0.4472).epsilon(1e-4));
    CHECK(a2(1) == doctest::Approx(0.8944).epsilon(1e-4));
    CHECK(true_alpha(3).isApprox(Eigen::Vector3d(1, 2, 3) / std::sqrt(14.0)));
    for (int p = 2; p <= 30; ++p) CHECK(true_alpha(p)(0) > 0.0);
  }

  TEST_CASE("gamma pair") {
    const auto [a0, b0] = gamma_pair(0.0);
    CHECK(a0 == Eigen::Vector3d(0, 1, 0));
    CHECK(b0 == Eigen::Vector3d(0, 1, 0));
    const auto [a5, b5] = gamma_pair(5.0);
    const Eigen::Vector3d d = a5 - b5;
    CHECK(d(0) == 0.0);
    CHECK(d(1) == 0.0);
    CHECK(d(2) == doctest::Approx(0.17431).epsilon(1e-4));
    const Eigen::Vector3d slope(0, 1, 7);
    for (double u : {-1.0, 0.5, 2.0}) CHECK(slope.dot(u * d) == doctest::Approx(14.0 * u * std::sin(5.0 * std::numbers::pi / 180.0)));
  }

  TEST_CASE("quadratic scenario means cross at both endpoints with equal ATS") {
    const auto betas = quadratic_betas();
    CHECK(betas[0] == Eigen::Vector3d(20, 3, -0.5));
    CHECK(betas[1] == Eigen::Vector3d(20, 2.3, -0.4));
    auto mu = [&](int k, double t) { return betas[static_cast<std::size_t>(k)].dot(Eigen::Vector3d(1, t, t * t)); };
    CHECK(std::abs(mu(0, 0) - mu(1, 0)) <= 1e-10);
    CHECK(std::abs(mu(0, 7) - mu(1, 7)) <= 1e-10);
    for (int k = 0; k < 2; ++k) {
      CHECK(std::abs(ats_parametric(betas[static_cast<std::size_t>(k)], Eigen::Vector3d::Zero(), BasisSpec::polynomial(2),
                                    0.3, 0, 7) + 0.5) <= 1e-10);
    }
    const auto D = quadratic_random_covariances();
    for (const auto& d : D) {
      CHECK((d - d.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(d).eigenvalues().minCoeff() > 0.0);
    }
  }

  TEST_CASE("non-quadratic means") {
    for (double u : {-2.0, 0.0, 1.5}) {
      CHECK(nonquadratic_mean(1, 0, u) == doctest::Approx(10.0));
      CHECK(nonquadratic_mean(2, 0, u) == doctest::Approx(10.0));
      const double ats1 = (nonquadratic_mean(1, 7, u) - nonquadratic_mean(1, 0, u)) / 7.0;
      const double ats2 = (nonquadratic_mean(2, 7, u) - nonquadratic_mean(2, 0, u)) / 7.0;
      CHECK(ats1 - ats2 == doctest::Approx(2.0 * std::sin(0.7 * std::numbers::pi * u) / 7.0));
    }
    const double ats0 = (nonquadratic_mean(1, 7, 0) - 10.0) / 7.0;
    CHECK(ats0 == doctest::Approx(-1.72717).epsilon(1e-5));
    CHECK(((nonquadratic_mean(2, 7, 0) - 10.0) / 7.0) == doctest::Approx(ats0));
  }

  TEST_CASE("simulated dataset layout") {
    SimScenario sc;
    sc.n_per_group = 100;
    sc.seed = 11;
    const TrialDataset data = simulate(sc);
    REQUIRE(data.size() == 200);
    CHECK(data.group_size(1) == 100);
    CHECK(data.group_size(2) == 100);
    CHECK(data.schedule == std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(data.has_oracle());
    CHECK(data.subjects[0].id == "1");
    for (const auto& s : data.subjects) {
      CHECK(s.times == data.schedule);
      CHECK(s.x.size() == 2);
      CHECK(s.oracle->trajectories[0].size() == 8);
    }
    data.validate();
  }

  TEST_CASE("property: identical scenario and seed give identical datasets") {
    for (auto kind : {SimScenario::Kind::quadratic, SimScenario::Kind::nonquadratic}) {
      SimScenario sc;
      sc.kind = kind;
      sc.p = 4;
      sc.n_per_group = 40;
      sc.seed = 123;
      sc.missingness = MissingnessSpec::mcar(0.3);
      CHECK(same_dataset(simulate(sc), simulate(sc)));
      SimScenario other = sc;
      other.seed = 124;
      CHECK_FALSE(same_dataset(simulate(sc), simulate(other)));
    }
  }

  TEST_CASE("oracle decisions agree with a recomputation from the stored trajectories") {
    SimScenario sc;
    sc.n_per_group = 80;
    sc.seed = 4;
    const TrialDataset data = simulate(sc);
    const auto d = oracle_decisions(data);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& tr = data.subjects[i].oracle->trajectories;
      const double cs1 = tr[0].back() - tr[0].front();
      const double cs2 = tr[1].back() - tr[1].front();
      CHECK(d[i] == (cs2 > cs1 ? 2 : 1));
      CHECK(data.subjects[i].oracle->decision == d[i]);
    }
    const auto smaller = oracle_decisions(data, Preference::smaller_ats);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& cs = data.subjects[i].oracle->change_scores;
      CHECK(smaller[i] == (cs[1] < cs[0] ? 2 : 1));
    }
  }

  TEST_CASE("oracle ties go to group 1") {
    TrialDataset manual;
    SubjectRecord s;
    s.x = Eigen::Vector2d(0, 0);
    s.times = {0, 7};
    s.y = {1, 2};
    s.oracle = SubjectOracle{};
    s.oracle->change_scores = {-3.0, -3.0};
    manual.subjects.push_back(s);
    CHECK(oracle_decisions(manual) == std::vector<int>{1});
    CHECK(oracle_decisions(manual, Preference::smaller_ats) == std::vector<int>{1});
    manual.subjects[0].oracle->change_scores = {-3.0, -2.5};
    CHECK(oracle_decisions(manual) == std::vector<int>{2});
    manual.subjects[0].oracle.reset();
    CHECK_THROWS_AS(oracle_decisions(manual), DataError);
  }

  TEST_CASE("no moderation: a covariate rule is right about half the time") {
    SimScenario sc;
    sc.theta_degrees = 0.0;
    sc.n_per_group = 1000;
    sc.seed = 8;
    const TrialDataset data = simulate(sc);
    const auto oracle = oracle_decisions(data);
    int agree = 0;
    for (std::size_t i = 0; i < data.size(); ++i) agree += (data.subjects[i].x(0) > -2.0 ? 1 : 2) == oracle[i] ? 1 : 0;
    const double rate = agree / static_cast<double>(data.size());
    CHECK(rate > 0.45);
    CHECK(rate < 0.55);
  }

  TEST_CASE("MCAR deletes non-baseline visits at the requested rate") {
    SimScenario sc;
    sc.n_per_group = 500;
    sc.seed = 2;
    const TrialDataset full = simulate(sc);
    CHECK(same_dataset(apply_mcar(full, 0.0, 1), full));
    const TrialDataset m = apply_mcar(full, 0.4, 1);
    std::size_t eligible = 0;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto& s = m.subjects[i];
      CHECK(s.times.front() == 0.0);
      CHECK(s.x == full.subjects[i].x);
      CHECK(s.group == full.subjects[i].group);
      eligible += 7;
      kept += s.times.size() - 1;
    }
    const double missing = 1.0 - static_cast<double>(kept) / static_cast<double>(eligible);
    CHECK(missing >= 0.37);
    CHECK(missing <= 0.43);
    CHECK(same_dataset(apply_mcar(full, 0.4, 1), m));
    CHECK_THROWS_AS(apply_mcar(full, 1.0, 1), ConfigError);
  }

  TEST_CASE("dropout uses exact quotas and keeps prefixes") {
    SimScenario sc;
    sc.n_per_group = 100;
    sc.seed = 3;
    const TrialDataset full = simulate(sc);
    CHECK(same_dataset(apply_dropout(full, {1, 0, 0, 0, 0}, 5), full));
    const TrialDataset d = apply_dropout(full, {0.5, 0.3, 0.1, 0.05, 0.05}, 5);
    for (int k = 1; k <= 2; ++k) {
      std::array<int, 5> counts{};
      for (const auto& s : d.subjects) {
        if (s.group != k) continue;
        const std::size_t lost = 8 - s.times.size();
        REQUIRE(lost <= 4);
        counts[lost] += 1;
        for (std::size_t j = 0; j < s.times.size(); ++j) CHECK(s.times[j] == static_cast<double>(j));
      }
      CHECK(counts == std::array<int, 5>{50, 30, 10, 5, 5});
    }
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.subjects[i].x == full.subjects[i].x);
    CHECK_THROWS_AS(apply_dropout(full, {0.5, 0.5, 0.1, 0, 0}, 5), ConfigError);
  }

  TEST_CASE("noiseless regeneration: true-alpha fits recover the generating coefficients") {
    SimScenario sc;
    sc.noiseless = true;
    sc.n_per_group = 500;
    sc.seed = 6;
    const TrialDataset data = simulate(sc);
    const SignatureEstimate e = estimate_fixed(data, true_alpha(2), ModelForm::linear_index);
    const auto betas = quadratic_betas();
    const auto [g1, g2] = gamma_pair(5.0);
    CHECK((e.fits[0].beta() - betas[0]).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((e.fits[1].beta() - betas[1]).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((e.fits[0].gamma() - g1).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((e.fits[1].gamma() - g2).cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("scenario validation") {
    SimScenario sc;
    sc.p = 3;
    CHECK_THROWS_AS(sc.validate(), ConfigError);
    sc.p = 2;
    sc.n_per_group = 0;
    CHECK_THROWS_AS(sc.validate(), ConfigError);
    CHECK_THROWS_AS(MissingnessSpec::mcar(1.0).validate(), ConfigError);
    CHECK_THROWS_AS(MissingnessSpec::mcar(-0.1).validate(), ConfigError);
    CHECK_NOTHROW(MissingnessSpec::default_dropout().validate());
  }
}
