#include "itr/trial_sim.hpp"

#include "itr/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>

namespace itr {

namespace {

constexpr std::uint32_t kSubjectStream = 0x5u;
constexpr std::uint32_t kMcarStream = 0x3Cu;
constexpr std::uint32_t kDropoutStream = 0xD0u;

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Eigen::VectorXd standard_normals(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

// Lower factor L with L L^T = S; S may be only semidefinite.
Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& S) {
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Eigen::Vector3d quadratic_row(double t) { return {1.0, t, t * t}; }

struct ArmModel {
  // Mean of arm k (0-based) at (t, u).
  std::function<double(int, double, double)> mean;
  std::array<Eigen::Matrix3d, 2> D;
};

TrialDataset generate(const SimScenario& sc, const ArmModel& model) {
  sc.validate();
  const int p = sc.p;
  const Eigen::VectorXd mu = covariate_mean(p);
  const Eigen::MatrixXd Lx = covariance_factor(covariate_covariance(p));
  const std::array<Eigen::MatrixXd, 2> Lb{covariance_factor(model.D[0]), covariance_factor(model.D[1])};
  const Eigen::VectorXd alpha = true_alpha(p);
  const double sd = std::sqrt(sc.sigma2);
  const std::size_t m = sc.times.size();

  TrialDataset data;
  data.schedule = sc.times;
  const int n = 2 * sc.n_per_group;
  data.subjects.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng = stream(sc.seed, kSubjectStream, static_cast<std::uint64_t>(i));
    SubjectRecord s;
    s.id = std::to_string(i + 1);
    s.group = i < sc.n_per_group ? 1 : 2;
    s.x = mu + Lx * standard_normals(p, rng);
    const double u = alpha.dot(s.x);

    std::array<Eigen::Vector3d, 2> b{Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()};
    const Eigen::VectorXd z1 = standard_normals(3, rng);
    const Eigen::VectorXd z2 = standard_normals(3, rng);
    if (!sc.noiseless) {
      b[0] = Lb[0] * z1;
      b[1] = Lb[1] * (sc.shared_random_effects ? z1 : z2);
    }
    const Eigen::VectorXd eps = standard_normals(static_cast<Eigen::Index>(m), rng);

    SubjectOracle oracle;
    for (int k = 0; k < 2; ++k) {
      auto& traj = oracle.trajectories[static_cast<std::size_t>(k)];
      traj.resize(m);
      for (std::size_t j = 0; j < m; ++j) {
        const double t = sc.times[j];
        traj[j] = model.mean(k, t, u) + quadratic_row(t).dot(b[static_cast<std::size_t>(k)]);
      }
      oracle.change_scores[static_cast<std::size_t>(k)] = traj.back() - traj.front();
    }
    oracle.decision = oracle.change_scores[1] > oracle.change_scores[0] ? 2 : 1;

    const auto& own = oracle.trajectories[static_cast<std::size_t>(s.group - 1)];
    s.times = sc.times;
    s.y.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      s.y[j] = own[j] + (sc.noiseless ? 0.0 : sd * eps(static_cast<Eigen::Index>(j)));
    }
    s.oracle = std::move(oracle);
    data.subjects.push_back(std::move(s));
  }
  return apply_missingness(data, sc.missingness, sc.seed);
}

}  // namespace

MissingnessSpec MissingnessSpec::mcar(double rate) {
  MissingnessSpec s;
  s.kind = Kind::mcar;
  s.rate = rate;
  s.validate();
  return s;
}

MissingnessSpec MissingnessSpec::dropout(const std::array<double, 5>& proportions) {
  MissingnessSpec s;
  s.kind = Kind::dropout;
  s.proportions = proportions;
  s.validate();
  return s;
}

MissingnessSpec MissingnessSpec::default_dropout() { return dropout({0.5, 0.3, 0.1, 0.05, 0.05}); }

void MissingnessSpec::validate() const {
  if (kind == Kind::mcar && !(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("MCAR rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (kind == Kind::dropout) {
    double total = 0.0;
    for (double q : proportions) {
      if (!(q >= 0.0)) throw ConfigError("dropout proportions must be non-negative");
      total += q;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("dropout proportions must sum to 1");
  }
}

void SimScenario::validate() const {
  if (p < 2 || p % 2 != 0) throw ConfigError("p must be an even integer >= 2, got " + std::to_string(p));
  if (n_per_group < 1) throw ConfigError("n_per_group must be positive");
  if (kind == Kind::quadratic && !(theta_degrees >= 0.0)) throw ConfigError("theta must be non-negative");
  if (times.size() < 2) throw ConfigError("at least two assessment times are required");
  for (std::size_t j = 1; j < times.size(); ++j) {
    if (!(times[j] > times[j - 1])) throw ConfigError("assessment times must be strictly increasing");
  }
  if (!(sigma2 >= 0.0)) throw ConfigError("sigma2 must be non-negative");
  missingness.validate();
}

Eigen::VectorXd covariate_mean(int p) {
  if (p < 2 || p % 2 != 0) throw ConfigError("covariate mean pattern needs an even p >= 2, got " + std::to_string(p));
  Eigen::VectorXd mu(p);
  for (int i = 0; i < p; ++i) mu(i) = i < p / 2 ? -static_cast<double>(p - i) : static_cast<double>(p - i);
  return mu;
}

Eigen::MatrixXd covariate_covariance(int p) {
  Eigen::MatrixXd S(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) S(i, j) = std::pow(0.5, std::abs(i - j));
  }
  return S;
}

Eigen::MatrixXd sample_covariates(int n, int p, std::mt19937_64& rng) {
  const Eigen::VectorXd mu = covariate_mean(p);
  const Eigen::MatrixXd L = covariance_factor(covariate_covariance(p));
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i) X.row(i) = (mu + L * standard_normals(p, rng)).transpose();
  return X;
}

Eigen::VectorXd true_alpha(int p) {
  if (p < 2) throw ConfigError("p must be at least 2");
  Eigen::VectorXd a(p);
  std::iota(a.data(), a.data() + p, 1.0);
  return a.normalized();
}

std::pair<Eigen::Vector3d, Eigen::Vector3d> gamma_pair(double theta_degrees) {
  if (!(theta_degrees >= 0.0)) throw DomainError("theta must be non-negative");
  const double th = theta_degrees * std::numbers::pi / 180.0;
  return {Eigen::Vector3d(0.0, std::cos(th), std::sin(th)), Eigen::Vector3d(0.0, std::cos(th), -std::sin(th))};
}

std::array<Eigen::Vector3d, 2> quadratic_betas() {
  return {Eigen::Vector3d(20.0, 3.0, -0.5), Eigen::Vector3d(20.0, 2.3, -0.4)};
}

std::array<Eigen::Matrix3d, 2> quadratic_random_covariances() {
  Eigen::Matrix3d D1;
  D1 << 0.5, -0.1, -0.01, -0.1, 0.5, -0.01, -0.01, -0.01, 0.01;
  Eigen::Matrix3d D2 = D1;
  D2(0, 1) = D2(1, 0) = -0.12;
  return {D1, D2};
}

double nonquadratic_mean(int k, double t, double u) {
  const double pi = std::numbers::pi;
  const double common = 10.0 * std::cos(pi * t / 5.0);
  if (k == 1) return common - std::sin(pi * t / 2.0) + std::sin(pi * t * u / 10.0);
  if (k == 2) return common + std::sin(pi * t / 14.0) - std::sin(pi * t * u / 10.0);
  throw DomainError("arm must be 1 or 2");
}

TrialDataset simulate_quadratic(const SimScenario& scenario) {
  if (scenario.kind != SimScenario::Kind::quadratic) throw ConfigError("simulate_quadratic needs a quadratic scenario");
  const auto betas = quadratic_betas();
  const auto [g1, g2] = gamma_pair(scenario.theta_degrees);
  const std::array<Eigen::Vector3d, 2> gammas{g1, g2};
  ArmModel model;
  model.D = quadratic_random_covariances();
  model.mean = [betas, gammas](int k, double t, double u) {
    const auto kk = static_cast<std::size_t>(k);
    return quadratic_row(t).dot(betas[kk] + u * gammas[kk]);
  };
  return generate(scenario, model);
}

TrialDataset simulate_nonquadratic(const SimScenario& scenario) {
  if (scenario.kind != SimScenario::Kind::nonquadratic) {
    throw ConfigError("simulate_nonquadratic needs a non-quadratic scenario");
  }
  ArmModel model;
  const Eigen::Matrix3d D = quadratic_random_covariances()[0];
  model.D = {D, D};
  model.mean = [](int k, double t, double u) { return nonquadratic_mean(k + 1, t, u); };
  return generate(scenario, model);
}

TrialDataset simulate(const SimScenario& scenario) {
  return scenario.kind == SimScenario::Kind::quadratic ? simulate_quadratic(scenario) : simulate_nonquadratic(scenario);
}

TrialDataset apply_mcar(const TrialDataset& data, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("MCAR rate must lie in [0, 1)");
  TrialDataset out = data;
  if (rate == 0.0) return out;
  const double baseline = data.endpoints().first;
  for (std::size_t i = 0; i < out.subjects.size(); ++i) {
    auto& s = out.subjects[i];
    std::mt19937_64 rng = stream(seed, kMcarStream, i);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> times;
    std::vector<double> y;
    for (std::size_t j = 0; j < s.times.size(); ++j) {
      // One draw per visit keeps the stream aligned regardless of outcome.
      const bool drop = unif(rng) < rate;
      if (s.times[j] == baseline || !drop) {
        times.push_back(s.times[j]);
        y.push_back(s.y[j]);
      }
    }
    s.times = std::move(times);
    s.y = std::move(y);
  }
  return out;
}

TrialDataset apply_dropout(const TrialDataset& data, const std::array<double, 5>& proportions, std::uint64_t seed) {
  MissingnessSpec::dropout(proportions);
  TrialDataset out = data;
  std::vector<double> schedule = data.schedule;
  if (schedule.empty()) {
    for (const auto& s : data.subjects) schedule.insert(schedule.end(), s.times.begin(), s.times.end());
    std::sort(schedule.begin(), schedule.end());
    schedule.erase(std::unique(schedule.begin(), schedule.end()), schedule.end());
  }
  if (schedule.size() < 6) throw DataError("dropout of up to four visits needs at least six scheduled visits");

  for (int k = 1; k <= 2; ++k) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < out.subjects.size(); ++i) {
      if (out.subjects[i].group == k) members.push_back(i);
    }
    const auto n = static_cast<double>(members.size());
    std::mt19937_64 rng = stream(seed, kDropoutStream, static_cast<std::uint64_t>(k));

    std::vector<int> pattern(members.size(), 0);
    const bool exact = std::all_of(proportions.begin(), proportions.end(), [n](double q) {
      const double c = n * q;
      return std::abs(c - std::round(c)) < 1e-9;
    });
    if (exact) {
      std::size_t pos = 0;
      for (int j = 0; j < 5; ++j) {
        const auto count = static_cast<std::size_t>(std::llround(n * proportions[static_cast<std::size_t>(j)]));
        for (std::size_t c = 0; c < count; ++c) pattern[pos++] = j;
      }
      std::shuffle(pattern.begin(), pattern.end(), rng);
    } else {
      std::discrete_distribution<int> draw(proportions.begin(), proportions.end());
      for (auto& j : pattern) j = draw(rng);
    }

    for (std::size_t c = 0; c < members.size(); ++c) {
      if (pattern[c] == 0) continue;
      auto& s = out.subjects[members[c]];
      const double cutoff = schedule[schedule.size() - static_cast<std::size_t>(pattern[c])];
      std::size_t keep = 0;
      while (keep < s.times.size() && s.times[keep] < cutoff) ++keep;
      s.times.resize(keep);
      s.y.resize(keep);
    }
  }
  return out;
}

TrialDataset apply_missingness(const TrialDataset& data, const MissingnessSpec& spec, std::uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case MissingnessSpec::Kind::none:
      return data;
    case MissingnessSpec::Kind::mcar:
      return apply_mcar(data, spec.rate, seed);
    case MissingnessSpec::Kind::dropout:
      return apply_dropout(data, spec.proportions, seed);
  }
  return data;
}

std::vector<int> oracle_decisions(const TrialDataset& data, Preference prefer) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data.subjects) {
    if (!s.oracle) throw DataError("subject " + s.id + " has no potential outcomes");
    const double c1 = s.oracle->change_scores[0];
    const double c2 = s.oracle->change_scores[1];
    out.push_back((prefer == Preference::larger_ats ? c2 > c1 : c2 < c1) ? 2 : 1);
  }
  return out;
}

}  // namespace itr
