#include "itr/signature.hpp"

#include "itr/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace itr {

std::string to_string(Method method) {
  switch (method) {
    case Method::npats: return "npats";
    case Method::pats: return "pats";
    case Method::mle: return "mle";
    case Method::fixed: return "fixed";
  }
  return "unknown";
}

Method method_from_string(std::string_view name) {
  if (name == "npats") return Method::npats;
  if (name == "pats") return Method::pats;
  if (name == "mle") return Method::mle;
  if (name == "fixed") return Method::fixed;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected npats, pats, mle or fixed)");
}

CovariateMoments CovariateMoments::from_sample(const Eigen::MatrixXd& x) {
  if (x.rows() == 0) throw EmptyInputError("CovariateMoments needs at least one row");
  CovariateMoments m;
  m.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - m.mean.transpose();
  m.covariance = centered.transpose() * centered / static_cast<double>(x.rows());
  return m;
}

Eigen::VectorXd normalize_signature(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw DomainError("cannot normalize a zero or non-finite signature");
  Eigen::VectorXd out = v / norm;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (out(i) != 0.0) {
      if (out(i) < 0.0) out = -out;
      break;
    }
  }
  return out;
}

Eigen::VectorXd chord_slope(const BasisSpec& time_spec, double t1, double tm) {
  if (!(tm > t1)) throw DomainError("average tangent slope needs tm > t1 (degenerate interval)");
  return (evaluate_basis(time_spec, tm) - evaluate_basis(time_spec, t1)) / (tm - t1);
}

double ats_parametric(const Eigen::VectorXd& beta, const Eigen::VectorXd& gamma, const BasisSpec& time_spec, double u,
                      double t1, double tm) {
  const Eigen::VectorXd slope = chord_slope(time_spec, t1, tm);
  if (beta.size() != slope.size() || gamma.size() != slope.size()) {
    throw DimensionError("ats_parametric: beta/Gamma dimension does not match the time basis");
  }
  return slope.dot(beta + u * gamma);
}

double ats_nonparametric(const Eigen::VectorXd& eta, const BasisSpec& time_spec, const BasisSpec& index_spec, double u,
                         double t1, double tm) {
  const Eigen::VectorXd slope = chord_slope(time_spec, t1, tm);
  const Eigen::VectorXd a = evaluate_basis(index_spec, u);
  if (eta.size() != slope.size() * a.size()) {
    throw DimensionError("ats_nonparametric: eta dimension does not match the tensor basis");
  }
  // eta is time-major: eta(r * d2 + c) multiplies g_r * a_c.
  const Eigen::Map<const Eigen::MatrixXd> H(eta.data(), a.size(), slope.size());
  return slope.dot(H.transpose() * a);
}

namespace {

// Weights w with ATS_1(u) - ATS_2(u) = w^T a(u).
Eigen::VectorXd contrast_weights(const Eigen::VectorXd& eta1, const Eigen::VectorXd& eta2,
                                 const Eigen::VectorXd& slope, Eigen::Index d2) {
  const Eigen::VectorXd diff = eta1 - eta2;
  const Eigen::Map<const Eigen::MatrixXd> H(diff.data(), d2, slope.size());
  return H * slope;
}

}  // namespace

double npats_objective(const Eigen::VectorXd& eta1, const Eigen::VectorXd& eta2, const Eigen::VectorXd& alpha,
                       const Eigen::MatrixXd& covariates, const BasisSpec& time_spec, const BasisSpec& index_spec,
                       double t1, double tm) {
  if (covariates.rows() == 0) throw EmptyInputError("npats_objective needs at least one subject");
  if (covariates.cols() != alpha.size()) throw DimensionError("npats_objective: covariates and alpha differ in size");
  const Eigen::VectorXd slope = chord_slope(time_spec, t1, tm);
  const Eigen::Index d2 = index_spec.dimension();
  if (eta1.size() != slope.size() * d2 || eta2.size() != eta1.size()) {
    throw DimensionError("npats_objective: eta dimension does not match the tensor basis");
  }
  const Eigen::VectorXd w = contrast_weights(eta1, eta2, slope, d2);
  const Eigen::VectorXd a_dir = normalize_signature(alpha);
  const Eigen::VectorXd u = covariates * a_dir;
  double total = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double c = w.dot(evaluate_basis(index_spec, u(i)));
    total += c * c;
  }
  return total / static_cast<double>(u.size());
}

PatsCoefficients pats_coefficients(const Eigen::VectorXd& beta1, const Eigen::VectorXd& beta2,
                                   const Eigen::VectorXd& gamma1, const Eigen::VectorXd& gamma2,
                                   const BasisSpec& time_spec, double t1, double tm) {
  const Eigen::VectorXd slope = chord_slope(time_spec, t1, tm);
  if (beta1.size() != slope.size() || beta2.size() != slope.size() || gamma1.size() != slope.size() ||
      gamma2.size() != slope.size()) {
    throw DimensionError("pats_coefficients: coefficient dimension does not match the time basis");
  }
  const double db = slope.dot(beta1 - beta2);
  const double dg = slope.dot(gamma1 - gamma2);
  return {db * db, 2.0 * db * dg, dg * dg};
}

double pats_criterion(const Eigen::VectorXd& beta1, const Eigen::VectorXd& beta2, const Eigen::VectorXd& gamma1,
                      const Eigen::VectorXd& gamma2, const CovariateMoments& moments, const Eigen::VectorXd& alpha,
                      const BasisSpec& time_spec, double t1, double tm) {
  if (moments.mean.size() != alpha.size()) throw DimensionError("pats_criterion: moments and alpha differ in size");
  const PatsCoefficients c = pats_coefficients(beta1, beta2, gamma1, gamma2, time_spec, t1, tm);
  const Eigen::VectorXd a = normalize_signature(alpha);
  const double mean_u = moments.mean.dot(a);
  const double second_u = mean_u * mean_u + a.dot(moments.covariance * a);
  return c.c1 + c.c2 * mean_u + c.c3 * second_u;
}

LikelihoodComponents mle_components(const std::array<GroupFit, 2>& fits,
                                    const std::array<std::span<const SubjectRecord>, 2>& records,
                                    const Eigen::VectorXd& alpha, const ModelSpecs& specs) {
  if (specs.form != ModelForm::linear_index) throw DomainError("mle_components requires the linear-index model");
  const Eigen::Index p = alpha.size();
  LikelihoodComponents out;
  out.L1 = Eigen::RowVectorXd::Zero(p);
  out.L2 = Eigen::MatrixXd::Zero(p, p);
  constexpr double kLog2Pi = 1.8378770664093454836;
  for (std::size_t k = 0; k < 2; ++k) {
    const GroupFit& fit = fits[k];
    const CovarianceProfile profile(records[k], specs.time, specs.random, fit.D, fit.sigma2);
    const Eigen::VectorXd beta = fit.beta();
    const Eigen::VectorXd gamma = fit.gamma();
    for (std::size_t i = 0; i < records[k].size(); ++i) {
      if (profile.visits(i) == 0) continue;
      const Eigen::VectorXd& x = records[k][i].x;
      if (x.size() != p) throw DimensionError("mle_components: covariate dimension mismatch");
      const Eigen::MatrixXd& A = profile.gram(i);
      const Eigen::VectorXd& w = profile.cross(i);
      const double linear = gamma.dot(w - A * beta);
      const double quadratic = gamma.dot(A * gamma);
      out.L1 += linear * x.transpose();
      out.L2 -= 0.5 * quadratic * (x * x.transpose());
      const double r2 = profile.quadratic(i) - 2.0 * beta.dot(w) + beta.dot(A * beta);
      out.a += -0.5 * (static_cast<double>(profile.visits(i)) * kLog2Pi + profile.log_det(i) + r2);
    }
  }
  out.L2 = (0.5 * (out.L2 + out.L2.transpose())).eval();
  return out;
}

Eigen::VectorXd initial_signature(const TrialDataset& data) {
  const Eigen::Index p = data.covariate_dimension();
  if (p == 0) throw DataError("initial_signature: dataset has no covariates");
  Eigen::MatrixXd coefs = Eigen::MatrixXd::Zero(2, p);
  for (int k = 1; k <= 2; ++k) {
    std::vector<double> slopes;
    std::vector<const Eigen::VectorXd*> xs;
    for (const auto& s : data.subjects) {
      if (s.group != k || s.visits() < 2) continue;
      const Eigen::Index m = static_cast<Eigen::Index>(s.visits());
      Eigen::MatrixXd T(m, 2);
      for (Eigen::Index j = 0; j < m; ++j) T.row(j) << 1.0, s.times[static_cast<std::size_t>(j)];
      const Eigen::Map<const Eigen::VectorXd> y(s.y.data(), m);
      slopes.push_back(T.colPivHouseholderQr().solve(y)(1));
      xs.push_back(&s.x);
    }
    if (slopes.empty()) continue;
    const Eigen::Index n = static_cast<Eigen::Index>(slopes.size());
    Eigen::MatrixXd design(n, p + 1);
    Eigen::VectorXd response(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      design(i, 0) = 1.0;
      design.row(i).tail(p) = xs[static_cast<std::size_t>(i)]->transpose();
      response(i) = slopes[static_cast<std::size_t>(i)];
    }
    coefs.row(k - 1) = design.colPivHouseholderQr().solve(response).tail(p).transpose();
  }
  if (!(coefs.norm() > 0.0) || !coefs.allFinite()) return normalize_signature(Eigen::VectorXd::Ones(p));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(coefs, Eigen::ComputeThinV);
  return normalize_signature(svd.matrixV().col(0));
}

namespace {

constexpr int kDefaultOuterNpats = 100;
constexpr int kDefaultOuterPats = 400;
constexpr int kDefaultOuterMle = 50;

struct Groups {
  std::vector<SubjectRecord> records[2];
  Eigen::MatrixXd pooled_x;
  Eigen::MatrixXd group_x[2];

  explicit Groups(const TrialDataset& data) {
    for (int k = 1; k <= 2; ++k) {
      records[k - 1] = data.group(k);
      if (records[k - 1].empty()) throw DataError("estimation needs subjects in both groups; group " +
                                                   std::to_string(k) + " is empty");
      const Eigen::Index p = data.covariate_dimension();
      group_x[k - 1].resize(static_cast<Eigen::Index>(records[k - 1].size()), p);
      for (std::size_t i = 0; i < records[k - 1].size(); ++i) {
        group_x[k - 1].row(static_cast<Eigen::Index>(i)) = records[k - 1][i].x.transpose();
      }
    }
    pooled_x.resize(group_x[0].rows() + group_x[1].rows(), group_x[0].cols());
    pooled_x << group_x[0], group_x[1];
  }

  std::span<const SubjectRecord> span(std::size_t k) const { return records[k]; }
};

std::pair<double, double> resolve_endpoints(const TrialDataset& data, const EstimationOptions& options) {
  const auto [t1, tm] = options.endpoints ? *options.endpoints : data.endpoints();
  if (!(tm > t1)) throw DomainError("study endpoints must satisfy t1 < tm");
  return {t1, tm};
}

NelderMeadOptions alpha_search_options(const EstimationOptions& options, Eigen::Index p) {
  NelderMeadOptions nm = options.nelder_mead;
  if (nm.max_evals <= 0) nm.max_evals = 400 + 200 * static_cast<int>(p);
  return nm;
}

std::array<GroupFit, 2> fit_pair(const Groups& groups, const Eigen::VectorXd& alpha, const ModelSpecs& specs,
                                 const FitOptions& base, const std::array<GroupFit, 2>* previous) {
  std::array<GroupFit, 2> fits;
  for (std::size_t k = 0; k < 2; ++k) {
    FitOptions opts = base;
    if (previous != nullptr) opts.warm_start = std::make_pair((*previous)[k].D, (*previous)[k].sigma2);
    fits[k] = fit_group_unchecked(groups.span(k), alpha, specs, opts);
  }
  return fits;
}

// One candidate-evaluation of an alternating criterion: given covariance
// profiles held at the current variance components, score alpha with the
// fixed effects re-estimated by GLS.
using ProfiledCriterion =
    std::function<double(const Eigen::VectorXd& alpha, const std::array<CovarianceProfile, 2>& profiles)>;

struct AlternatingRun {
  Eigen::VectorXd alpha;
  std::array<GroupFit, 2> fits;
  ModelSpecs specs;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;
  double final_objective = -INFINITY;
};

// Alternates variance-component fits with Nelder-Mead updates of alpha
// until successive alphas have |cosine| >= tolerance.
AlternatingRun run_alternating(const Groups& groups, const Eigen::VectorXd& start,
                               const std::function<ModelSpecs(const Eigen::VectorXd&)>& specs_at,
                               const ProfiledCriterion& criterion, int max_outer, const EstimationOptions& options) {
  AlternatingRun run;
  run.alpha = normalize_signature(start);
  run.specs = specs_at(run.alpha);
  run.fits = fit_pair(groups, run.alpha, run.specs, options.fit, nullptr);
  const NelderMeadOptions nm = alpha_search_options(options, run.alpha.size());

  auto profiles_for = [&](const AlternatingRun& r) {
    return std::array<CovarianceProfile, 2>{
        CovarianceProfile(groups.span(0), r.specs.time, r.specs.random, r.fits[0].D, r.fits[0].sigma2),
        CovarianceProfile(groups.span(1), r.specs.time, r.specs.random, r.fits[1].D, r.fits[1].sigma2)};
  };

  for (int l = 1; l <= max_outer; ++l) {
    const auto profiles = profiles_for(run);
    auto objective = [&](const Eigen::VectorXd& v) -> double {
      if (!(v.norm() > 1e-12)) return -INFINITY;
      try {
        return criterion(normalize_signature(v), profiles);
      } catch (const RankDeficiencyError&) {
        return -INFINITY;
      }
    };
    const NelderMeadResult step = nelder_mead(objective, run.alpha, nm);
    const Eigen::VectorXd next = normalize_signature(step.x);
    const double cosine = std::abs(next.dot(run.alpha));
    run.trace.push_back(step.value);
    run.iterations = l;
    const std::array<GroupFit, 2> previous = run.fits;
    const ModelSpecs previous_specs = run.specs;
    run.alpha = next;
    run.specs = specs_at(run.alpha);
    const bool same_shape = run.specs.coefficient_count() == previous_specs.coefficient_count();
    run.fits = fit_pair(groups, run.alpha, run.specs, options.fit, same_shape ? &previous : nullptr);
    if (cosine >= options.cosine_tolerance) {
      run.converged = true;
      break;
    }
  }
  run.final_objective = criterion(run.alpha, profiles_for(run));
  return run;
}

std::vector<Eigen::VectorXd> start_points(const TrialDataset& data, const EstimationOptions& options) {
  std::vector<Eigen::VectorXd> starts;
  starts.push_back(options.initial_alpha ? normalize_signature(*options.initial_alpha) : initial_signature(data));
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  const Eigen::Index p = data.covariate_dimension();
  for (int r = 0; r < options.restarts; ++r) {
    Eigen::VectorXd v(p);
    do {
      for (Eigen::Index i = 0; i < p; ++i) v(i) = normal(rng);
    } while (!(v.norm() > 1e-8));
    starts.push_back(normalize_signature(v));
  }
  return starts;
}

SignatureEstimate best_of(const TrialDataset& data, const Groups& groups, Method method,
                          const std::function<ModelSpecs(const Eigen::VectorXd&)>& specs_at,
                          const ProfiledCriterion& criterion, int max_outer, const EstimationOptions& options,
                          double t1, double tm) {
  std::optional<AlternatingRun> best;
  for (const auto& start : start_points(data, options)) {
    AlternatingRun run = run_alternating(groups, start, specs_at, criterion, max_outer, options);
    if (!best || run.final_objective > best->final_objective) best = std::move(run);
  }
  SignatureEstimate out;
  out.signature.alpha = best->alpha;
  out.signature.method = method;
  out.signature.iterations = best->iterations;
  out.signature.converged = best->converged;
  out.signature.objective_trace = std::move(best->trace);
  out.fits = best->fits;
  out.specs = best->specs;
  out.t1 = t1;
  out.tm = tm;
  return out;
}

std::vector<Eigen::VectorXd> index_rows(const ModelSpecs& specs, const Eigen::MatrixXd& x, const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd u = x * alpha;
  std::vector<Eigen::VectorXd> rows;
  rows.reserve(static_cast<std::size_t>(u.size()));
  for (Eigen::Index i = 0; i < u.size(); ++i) rows.push_back(specs.index_row(u(i)));
  return rows;
}

}  // namespace

SignatureEstimate estimate_npats(const TrialDataset& data, const EstimationOptions& options) {
  const Groups groups(data);
  const auto [t1, tm] = resolve_endpoints(data, options);
  ModelSpecs base;
  base.form = ModelForm::tensor;
  base.time = options.time_basis ? *options.time_basis : BasisSpec::cubic_bspline({0.5 * (t1 + tm)}, t1, tm);
  base.random = options.random_basis;

  auto specs_at = [&](const Eigen::VectorXd& alpha) {
    ModelSpecs s = base;
    if (options.index_basis) {
      s.index = *options.index_basis;
    } else {
      const Eigen::VectorXd u = groups.pooled_x * alpha;
      s.index = index_spline_for(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())));
    }
    return s;
  };

  const Eigen::VectorXd slope = chord_slope(base.time, t1, tm);
  ProfiledCriterion criterion = [&](const Eigen::VectorXd& alpha, const std::array<CovarianceProfile, 2>& profiles) {
    const ModelSpecs s = specs_at(alpha);
    const Eigen::VectorXd eta1 = profiles[0].coefficients(ModelForm::tensor, index_rows(s, groups.group_x[0], alpha));
    const Eigen::VectorXd eta2 = profiles[1].coefficients(ModelForm::tensor, index_rows(s, groups.group_x[1], alpha));
    const Eigen::VectorXd w = contrast_weights(eta1, eta2, slope, s.index.dimension());
    auto mean_square = [&](const Eigen::MatrixXd& x) {
      const Eigen::VectorXd u = x * alpha;
      double total = 0.0;
      for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double c = w.dot(evaluate_basis(s.index, u(i)));
        total += c * c;
      }
      return total / static_cast<double>(u.size());
    };
    if (options.pooled_index_distribution) return mean_square(groups.pooled_x);
    return 0.5 * (mean_square(groups.group_x[0]) + mean_square(groups.group_x[1]));
  };

  const int max_outer = options.max_outer_iterations > 0 ? options.max_outer_iterations : kDefaultOuterNpats;
  return best_of(data, groups, Method::npats, specs_at, criterion, max_outer, options, t1, tm);
}

SignatureEstimate estimate_pats(const TrialDataset& data, const EstimationOptions& options) {
  const Groups groups(data);
  const auto [t1, tm] = resolve_endpoints(data, options);
  ModelSpecs specs;
  specs.form = ModelForm::linear_index;
  specs.time = options.time_basis ? *options.time_basis : BasisSpec::polynomial(2);
  specs.random = options.random_basis;
  const CovariateMoments moments = CovariateMoments::from_sample(groups.pooled_x);
  const Eigen::Index d1 = specs.time.dimension();

  auto specs_at = [&](const Eigen::VectorXd&) { return specs; };
  ProfiledCriterion criterion = [&](const Eigen::VectorXd& alpha, const std::array<CovarianceProfile, 2>& profiles) {
    const Eigen::VectorXd c1 = profiles[0].coefficients(ModelForm::linear_index, index_rows(specs, groups.group_x[0], alpha));
    const Eigen::VectorXd c2 = profiles[1].coefficients(ModelForm::linear_index, index_rows(specs, groups.group_x[1], alpha));
    return pats_criterion(c1.head(d1), c2.head(d1), c1.tail(d1), c2.tail(d1), moments, alpha, specs.time, t1, tm);
  };

  const int max_outer = options.max_outer_iterations > 0 ? options.max_outer_iterations : kDefaultOuterPats;
  return best_of(data, groups, Method::pats, specs_at, criterion, max_outer, options, t1, tm);
}

SignatureEstimate estimate_mle(const TrialDataset& data, const EstimationOptions& options) {
  const Groups groups(data);
  const auto [t1, tm] = resolve_endpoints(data, options);
  ModelSpecs specs;
  specs.form = ModelForm::linear_index;
  specs.time = options.time_basis ? *options.time_basis : BasisSpec::polynomial(2);
  specs.random = options.random_basis;
  const int max_outer = options.max_outer_iterations > 0 ? options.max_outer_iterations : kDefaultOuterMle;
  const std::array<std::span<const SubjectRecord>, 2> spans{groups.span(0), groups.span(1)};

  SignatureEstimate out;
  out.specs = specs;
  out.t1 = t1;
  out.tm = tm;
  Biosignature& sig = out.signature;
  sig.method = Method::mle;
  sig.converged = false;
  sig.alpha = options.initial_alpha ? normalize_signature(*options.initial_alpha) : initial_signature(data);
  out.fits = fit_pair(groups, sig.alpha, specs, options.fit, nullptr);
  sig.objective_trace.push_back(out.fits[0].loglik + out.fits[1].loglik);

  // Log-likelihood at fixed variance components with (beta, Gamma)
  // re-estimated by GLS; invariant to the scale and sign of alpha.
  auto profiled = [&](const std::array<CovarianceProfile, 2>& profiles, const Eigen::VectorXd& alpha) {
    double ll = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      const auto rows = index_rows(specs, groups.group_x[k], alpha);
      ll += profiles[k].log_likelihood(ModelForm::linear_index, rows,
                                       profiles[k].coefficients(ModelForm::linear_index, rows));
    }
    return ll;
  };

  for (int l = 1; l <= max_outer; ++l) {
    sig.iterations = l;
    const LikelihoodComponents comps = mle_components(out.fits, spans, sig.alpha, specs);
    const Eigen::VectorXd rhs = -0.5 * comps.L1.transpose();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(comps.L2);
    const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
    Eigen::VectorXd target;
    if (ldlt.info() != Eigen::Success || !(d.maxCoeff() > 0.0) || d.minCoeff() <= 1e-12 * d.maxCoeff()) {
      const double ridge = 1e-8 * std::max(std::abs(comps.L2.trace()), 1e-300);
      target = (comps.L2 - ridge * Eigen::MatrixXd::Identity(comps.L2.rows(), comps.L2.cols())).ldlt().solve(rhs);
      sig.warnings.push_back("iteration " + std::to_string(l) + ": L2 is singular, ridge-regularized solve used");
    } else {
      target = ldlt.solve(rhs);
    }
    if (!target.allFinite() || !(target.norm() > 0.0)) {
      sig.warnings.push_back("iteration " + std::to_string(l) + ": stationary point undefined, stopping");
      break;
    }
    if (comps.evaluate(-target) > comps.evaluate(target)) target = -target;

    const std::array<CovarianceProfile, 2> profiles{
        CovarianceProfile(spans[0], specs.time, specs.random, out.fits[0].D, out.fits[0].sigma2),
        CovarianceProfile(spans[1], specs.time, specs.random, out.fits[1].D, out.fits[1].sigma2)};
    const double current = profiled(profiles, sig.alpha);
    const double slack = 1e-10 * (1.0 + std::abs(current));

    std::optional<Eigen::VectorXd> accepted;
    double step = 1.0;
    for (int h = 0; h <= 10; ++h, step *= 0.5) {
      const Eigen::VectorXd candidate = sig.alpha + step * (target - sig.alpha);
      if (!(candidate.norm() > 1e-12)) continue;
      const Eigen::VectorXd unit = normalize_signature(candidate);
      if (profiled(profiles, unit) >= current - slack) {
        accepted = unit;
        break;
      }
    }
    if (!accepted) {
      // No ascent along the segment: alpha is already stationary.
      sig.converged = true;
      break;
    }
    const double cosine = std::abs(accepted->dot(sig.alpha));
    const std::array<GroupFit, 2> previous = out.fits;
    sig.alpha = *accepted;
    out.fits = fit_pair(groups, sig.alpha, specs, options.fit, &previous);
    sig.objective_trace.push_back(out.fits[0].loglik + out.fits[1].loglik);
    if (cosine >= options.cosine_tolerance) {
      sig.converged = true;
      break;
    }
  }
  return out;
}

SignatureEstimate estimate_fixed(const TrialDataset& data, const Eigen::VectorXd& alpha, ModelForm form,
                                 const EstimationOptions& options) {
  const Groups groups(data);
  const auto [t1, tm] = resolve_endpoints(data, options);
  if (alpha.size() != data.covariate_dimension()) throw DimensionError("estimate_fixed: alpha has the wrong dimension");
  SignatureEstimate out;
  out.t1 = t1;
  out.tm = tm;
  out.signature.alpha = normalize_signature(alpha);
  out.signature.method = Method::fixed;
  out.specs.form = form;
  out.specs.random = options.random_basis;
  if (form == ModelForm::tensor) {
    out.specs.time = options.time_basis ? *options.time_basis : BasisSpec::cubic_bspline({0.5 * (t1 + tm)}, t1, tm);
    if (options.index_basis) {
      out.specs.index = *options.index_basis;
    } else {
      const Eigen::VectorXd u = groups.pooled_x * out.signature.alpha;
      out.specs.index = index_spline_for(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())));
    }
  } else {
    out.specs.time = options.time_basis ? *options.time_basis : BasisSpec::polynomial(2);
  }
  out.fits = fit_pair(groups, out.signature.alpha, out.specs, options.fit, nullptr);
  return out;
}

SignatureEstimate estimate(const TrialDataset& data, Method method, const EstimationOptions& options) {
  switch (method) {
    case Method::npats: return estimate_npats(data, options);
    case Method::pats: return estimate_pats(data, options);
    case Method::mle: return estimate_mle(data, options);
    case Method::fixed:
      if (!options.initial_alpha) throw ConfigError("method 'fixed' needs an alpha (initial_alpha)");
      return estimate_fixed(data, *options.initial_alpha, ModelForm::linear_index, options);
  }
  throw ConfigError("unknown method");
}

}  // namespace itr
