#include "itr/mixed_model.hpp"

#include "itr/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

namespace itr {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

const char* form_name(ModelForm form) { return form == ModelForm::tensor ? "tensor" : "linear-index"; }

// Solves the symmetric normal equations, rejecting (near-)singular systems.
Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const std::string& what) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  const Eigen::VectorXd diag = ldlt.vectorD();
  const double largest = diag.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(largest > 0.0) || diag.minCoeff() <= 1e-13 * largest) {
    throw RankDeficiencyError("singular normal equations for " + what);
  }
  return ldlt.solve(b);
}

void check_alpha(std::span<const SubjectRecord> records, const Eigen::VectorXd& alpha) {
  for (const auto& r : records) {
    if (r.x.size() != alpha.size()) {
      throw DimensionError("subject " + r.id + ": covariate dimension " + std::to_string(r.x.size()) +
                           " does not match alpha dimension " + std::to_string(alpha.size()));
    }
  }
}

// Packs the lower triangle of a q x q matrix column by column.
Eigen::VectorXd pack_lower(const Eigen::MatrixXd& L) {
  const Eigen::Index q = L.rows();
  Eigen::VectorXd theta(q * (q + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < q; ++c) {
    for (Eigen::Index r = c; r < q; ++r) theta(k++) = L(r, c);
  }
  return theta;
}

Eigen::MatrixXd unpack_lower(const Eigen::VectorXd& theta, Eigen::Index q) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(q, q);
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < q; ++c) {
    for (Eigen::Index r = c; r < q; ++r) L(r, c) = theta(k++);
  }
  return L;
}

// Subjects sharing a visit pattern share G and Z, so with the time-major
// design X_i = G ⊗ a_i^T every term of the profiled likelihood factors into
// a pattern matrix times a sum over the pattern's subjects.
struct VisitPattern {
  double count = 0.0;
  double visits = 0.0;
  Eigen::MatrixXd ztz;  // Z^T Z
  Eigen::MatrixXd ztg;  // Z^T G
  Eigen::MatrixXd gtg;  // G^T G
  Eigen::MatrixXd saa;  // sum a a^T
  Eigen::MatrixXd rzy;  // sum Z^T y a^T
  Eigen::MatrixXd rgy;  // sum G^T y a^T
  Eigen::MatrixXd qzy;  // sum Z^T y y^T Z
  double yty = 0.0;
};

struct GroupCrossProducts {
  Eigen::Index n_obs = 0;
  Eigen::Index q = 0;
  Eigen::Index d1 = 0;
  Eigen::Index d2 = 0;
  ModelForm form = ModelForm::linear_index;
  std::vector<VisitPattern> patterns;
  Eigen::MatrixXd xtx;  // time-major
  Eigen::VectorXd xty;  // time-major
  double yty = 0.0;
  double initial_sigma2 = 1.0;
};

// Adds s * (M ⊗ S) to the time-major block matrix A.
void add_kron(Eigen::MatrixXd& A, const Eigen::MatrixXd& M, const Eigen::MatrixXd& S, double s) {
  const Eigen::Index d2 = S.rows();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    for (Eigen::Index r2 = 0; r2 < M.cols(); ++r2) A.block(r * d2, r2 * d2, d2, d2) += (s * M(r, r2)) * S;
  }
}

// Adds s * vec(R) with R a d1 x d2 matrix in time-major (row-major) order.
void add_vec(Eigen::VectorXd& b, const Eigen::MatrixXd& R, double s) {
  for (Eigen::Index r = 0; r < R.rows(); ++r) b.segment(r * R.cols(), R.cols()) += s * R.row(r).transpose();
}

// Maps a time-major coefficient vector to the layout of `form`.
Eigen::VectorXd to_form_layout(const Eigen::VectorXd& tm, ModelForm form, Eigen::Index d1, Eigen::Index d2) {
  if (form == ModelForm::tensor) return tm;
  Eigen::VectorXd out(tm.size());
  for (Eigen::Index r = 0; r < d1; ++r) {
    for (Eigen::Index c = 0; c < d2; ++c) out(c * d1 + r) = tm(r * d2 + c);
  }
  return out;
}

GroupCrossProducts cross_products(std::span<const SubjectRecord> records, const Eigen::VectorXd& alpha,
                                  const ModelSpecs& specs) {
  GroupCrossProducts cp;
  cp.form = specs.form;
  cp.q = specs.random.dimension();
  cp.d1 = specs.time.dimension();
  cp.d2 = specs.form == ModelForm::tensor ? specs.index.dimension() : 2;
  const Eigen::Index q = cp.q, d1 = cp.d1, d2 = cp.d2;

  std::map<std::vector<double>, std::size_t> lookup;
  double rss = 0.0;
  Eigen::Index rss_df = 0;
  double y_sum = 0.0;
  double y_sq = 0.0;

  for (const auto& r : records) {
    if (r.visits() == 0) continue;
    auto [it, inserted] = lookup.emplace(r.times, cp.patterns.size());
    if (inserted) {
      VisitPattern pat;
      const Eigen::MatrixXd G = time_design(specs.time, r.times);
      const Eigen::MatrixXd Z = time_design(specs.random, r.times);
      pat.visits = static_cast<double>(r.visits());
      pat.ztz = Z.transpose() * Z;
      pat.ztg = Z.transpose() * G;
      pat.gtg = G.transpose() * G;
      pat.saa = Eigen::MatrixXd::Zero(d2, d2);
      pat.rzy = Eigen::MatrixXd::Zero(q, d2);
      pat.rgy = Eigen::MatrixXd::Zero(d1, d2);
      pat.qzy = Eigen::MatrixXd::Zero(q, q);
      cp.patterns.push_back(std::move(pat));
    }
    VisitPattern& pat = cp.patterns[it->second];
    const Eigen::MatrixXd G = time_design(specs.time, r.times);
    const Eigen::MatrixXd Z = time_design(specs.random, r.times);
    const Eigen::VectorXd a = specs.index_row(alpha.dot(r.x));
    const Eigen::Map<const Eigen::VectorXd> y(r.y.data(), static_cast<Eigen::Index>(r.y.size()));
    const Eigen::VectorXd zy = Z.transpose() * y;
    pat.count += 1.0;
    pat.saa.noalias() += a * a.transpose();
    pat.rzy.noalias() += zy * a.transpose();
    pat.rgy.noalias() += (G.transpose() * y) * a.transpose();
    pat.qzy.noalias() += zy * zy.transpose();
    pat.yty += y.squaredNorm();

    cp.n_obs += y.size();
    y_sum += y.sum();
    y_sq += y.squaredNorm();
    if (y.size() > q) {
      const Eigen::VectorXd fitted = Z * Z.colPivHouseholderQr().solve(y);
      rss += (y - fitted).squaredNorm();
      rss_df += y.size() - q;
    }
  }

  const Eigen::Index P = d1 * d2;
  cp.xtx = Eigen::MatrixXd::Zero(P, P);
  cp.xty = Eigen::VectorXd::Zero(P);
  for (const auto& pat : cp.patterns) {
    add_kron(cp.xtx, pat.gtg, pat.saa, 1.0);
    add_vec(cp.xty, pat.rgy, 1.0);
    cp.yty += pat.yty;
  }
  if (rss_df > 0) {
    cp.initial_sigma2 = rss / static_cast<double>(rss_df);
  } else if (cp.n_obs > 1) {
    const double mean = y_sum / static_cast<double>(cp.n_obs);
    cp.initial_sigma2 = (y_sq - cp.n_obs * mean * mean) / static_cast<double>(cp.n_obs - 1);
  }
  return cp;
}

struct ProfiledPoint {
  double loglik = -INFINITY;
  Eigen::VectorXd coefficients;  // layout of the model form
  double sigma2 = 1.0;
};

// Log-likelihood maximized over fixed effects and sigma2 for a relative
// covariance factor Lambda (D = sigma2 * Lambda Lambda^T).
ProfiledPoint profiled_loglik(const GroupCrossProducts& cp, const Eigen::MatrixXd& lambda, double sigma2_floor) {
  const Eigen::Index q = cp.q;
  Eigen::MatrixXd A = cp.xtx;
  Eigen::VectorXd b = cp.xty;
  double c = cp.yty;
  double log_det = 0.0;
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(q, q);

  for (const auto& pat : cp.patterns) {
    const Eigen::MatrixXd T = lambda.transpose() * pat.ztz * lambda + identity;
    Eigen::LLT<Eigen::MatrixXd> llt(T);
    if (llt.info() != Eigen::Success) return {};
    double ld = 0.0;
    for (Eigen::Index k = 0; k < q; ++k) ld += 2.0 * std::log(llt.matrixLLT()(k, k));
    log_det += pat.count * ld;
    // W = Lambda T^{-1} Lambda^T, so Z^T Psi^{-1} Z-type corrections are Z^T Z W.
    const Eigen::MatrixXd W = lambda * llt.solve(lambda.transpose());
    const Eigen::MatrixXd K = pat.ztg.transpose() * W;  // d1 x q
    add_kron(A, K * pat.ztg, pat.saa, -1.0);
    add_vec(b, K * pat.rzy, -1.0);
    c -= (W.cwiseProduct(pat.qzy)).sum();
  }

  ProfiledPoint point;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success) return {};
  const Eigen::VectorXd coef = ldlt.solve(b);
  const double r2 = std::max(c - b.dot(coef), 0.0);
  const double n = static_cast<double>(cp.n_obs);
  point.sigma2 = std::max(r2 / n, sigma2_floor);
  point.loglik = -0.5 * (n * (kLog2Pi + std::log(point.sigma2)) + log_det + r2 / point.sigma2);
  if (!std::isfinite(point.loglik)) return {};
  point.coefficients = to_form_layout(coef, cp.form, cp.d1, cp.d2);
  return point;
}

struct QuasiNewtonResult {
  Eigen::VectorXd x;
  double value = -INFINITY;
  int iterations = 0;
  bool converged = false;
};

// BFGS ascent with central-difference gradients and Armijo backtracking.
// Converged once an accepted step improves f by at most tol * (1 + |f|),
// or when no ascent step can be found along the search direction.
QuasiNewtonResult quasi_newton_ascent(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                      double fx, int max_iterations, double tol) {
  const Eigen::Index n = x.size();
  auto gradient = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(v(i)));
      Eigen::VectorXd up = v;
      Eigen::VectorXd down = v;
      up(i) += h;
      down(i) -= h;
      g(i) = (f(up) - f(down)) / (2.0 * h);
    }
    return g;
  };

  QuasiNewtonResult out;
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd g = gradient(x);
  for (int it = 1; it <= max_iterations; ++it) {
    out.iterations = it;
    if (!g.allFinite()) break;
    Eigen::VectorXd d = H * g;
    if (!(d.dot(g) > 0.0)) {
      H.setIdentity();
      d = g;
    }
    const double slope = g.dot(d);
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd next;
    double f_next = -INFINITY;
    for (int k = 0; k < 40; ++k, step *= 0.5) {
      next = x + step * d;
      f_next = f(next);
      if (std::isfinite(f_next) && f_next >= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.converged = true;
      break;
    }
    const Eigen::VectorXd g_next = gradient(next);
    const Eigen::VectorXd s = next - x;
    // Ascent on f is descent on -f, whose gradient change is -(g_next - g).
    const Eigen::VectorXd y = g - g_next;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    const double improvement = f_next - fx;
    x = next;
    fx = f_next;
    g = g_next;
    if (improvement <= tol * (1.0 + std::abs(fx))) {
      out.converged = true;
      break;
    }
  }
  out.x = std::move(x);
  out.value = fx;
  return out;
}

}  // namespace

Eigen::Index ModelSpecs::coefficient_count() const {
  if (form == ModelForm::tensor) return time.dimension() * index.dimension();
  return 2 * time.dimension();
}

Eigen::VectorXd ModelSpecs::index_row(double u) const {
  if (form == ModelForm::tensor) return evaluate_basis(index, u);
  if (!std::isfinite(u)) throw DomainError("index value must be finite");
  return Eigen::Vector2d(1.0, u);
}

Eigen::MatrixXd ModelSpecs::fixed_design(const Eigen::MatrixXd& G, double u) const {
  if (form == ModelForm::tensor) return tensor_design(G, evaluate_basis(index, u));
  if (!std::isfinite(u)) throw DomainError("index value must be finite");
  Eigen::MatrixXd X(G.rows(), 2 * G.cols());
  X << G, u * G;
  return X;
}

Eigen::VectorXd GroupFit::beta() const {
  if (form != ModelForm::linear_index) throw DomainError("beta is only defined for the linear-index model");
  return coefficients.head(time_dimension);
}

Eigen::VectorXd GroupFit::gamma() const {
  if (form != ModelForm::linear_index) throw DomainError("Gamma is only defined for the linear-index model");
  return coefficients.tail(time_dimension);
}

Eigen::MatrixXd marginal_covariance(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& D, double sigma2) {
  if (D.rows() != D.cols() || Z.cols() != D.rows()) {
    throw DimensionError("marginal_covariance: Z is " + std::to_string(Z.rows()) + "x" + std::to_string(Z.cols()) +
                         " but D is " + std::to_string(D.rows()) + "x" + std::to_string(D.cols()));
  }
  if (!(sigma2 > 0.0)) throw DomainError("marginal_covariance: sigma2 must be positive");
  Eigen::MatrixXd V = Z * D * Z.transpose();
  V = (0.5 * (V + V.transpose())).eval();
  V.diagonal().array() += sigma2;
  return V;
}

Eigen::VectorXd gls_fixed_effects(std::span<const Eigen::MatrixXd> X, std::span<const Eigen::VectorXd> y,
                                  std::span<const Eigen::MatrixXd> V) {
  if (X.empty()) throw EmptyInputError("gls_fixed_effects needs at least one block");
  if (X.size() != y.size() || X.size() != V.size()) {
    throw DimensionError("gls_fixed_effects: X, y and V must have the same number of blocks");
  }
  const Eigen::Index P = X.front().cols();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(P, P);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(P);
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (X[i].cols() != P || X[i].rows() != y[i].size() || V[i].rows() != y[i].size() || V[i].cols() != y[i].size()) {
      throw DimensionError("gls_fixed_effects: block " + std::to_string(i) + " is not conformable");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(V[i]);
    if (llt.info() != Eigen::Success) {
      throw DomainError("gls_fixed_effects: covariance block " + std::to_string(i) + " is not positive definite");
    }
    const Eigen::MatrixXd WX = llt.solve(X[i]);
    A.noalias() += X[i].transpose() * WX;
    b.noalias() += WX.transpose() * y[i];
  }
  return solve_normal_equations(A, b, "the stacked " + std::to_string(P) + "-column GLS design");
}

GroupFit fit_group_unchecked(std::span<const SubjectRecord> records, const Eigen::VectorXd& alpha,
                             const ModelSpecs& specs, const FitOptions& options) {
  check_alpha(records, alpha);
  const Eigen::Index P = specs.coefficient_count();
  const Eigen::Index q = specs.random.dimension();
  const Eigen::Index n_variance = q * (q + 1) / 2 + 1;

  std::size_t informative = 0;
  for (const auto& r : records) informative += r.visits() >= 2 ? 1 : 0;
  if (informative < static_cast<std::size_t>(q + 1)) {
    throw UnderIdentifiedError("fit_group: need at least " + std::to_string(q + 1) +
                               " subjects with two or more visits, got " + std::to_string(informative));
  }

  const GroupCrossProducts cp = cross_products(records, alpha, specs);
  if (cp.n_obs < P + n_variance) {
    throw UnderIdentifiedError("fit_group: " + std::to_string(cp.n_obs) + " observations for " +
                               std::to_string(P + n_variance) + " parameters");
  }
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cp.xtx);
    qr.setThreshold(1e-12);
    if (qr.rank() < P) {
      throw RankDeficiencyError(std::string("fit_group: ") + form_name(specs.form) + " fixed design with " +
                                std::to_string(P) + " columns has rank " + std::to_string(qr.rank()) + " over " +
                                std::to_string(records.size()) + " subjects");
    }
  }

  Eigen::MatrixXd lambda0;
  if (options.warm_start) {
    const auto& [D0, s0] = *options.warm_start;
    if (D0.rows() != q || D0.cols() != q) throw DimensionError("fit_group: warm-start D has the wrong shape");
    const double s = std::max(s0, options.sigma2_floor);
    const Eigen::MatrixXd rel = 0.5 * (D0 + D0.transpose()) / s;
    // Any square root F of rel gives a lower-triangular factor R^T through
    // the QR decomposition F^T = Q R.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(rel);
    const Eigen::MatrixXd F = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(F.transpose());
    lambda0 = qr.matrixQR().triangularView<Eigen::Upper>().toDenseMatrix().transpose();
  } else {
    // A near-zero residual variance makes the default start very large;
    // shrunken copies of it are tried as well.
    const double s0 = std::max(cp.initial_sigma2, options.sigma2_floor);
    const Eigen::MatrixXd start = std::sqrt(0.1 / s0) * Eigen::MatrixXd::Identity(q, q);
    double start_ll = -INFINITY;
    for (double shrink : {1.0, 1e-1, 1e-2, 1e-3}) {
      const double ll = profiled_loglik(cp, shrink * start, options.sigma2_floor).loglik;
      if (ll > start_ll) {
        start_ll = ll;
        lambda0 = shrink * start;
      }
    }
    if (lambda0.size() == 0) lambda0 = start;
  }

  const Eigen::VectorXd theta0 = pack_lower(lambda0);
  const double theta_max = std::max(theta0.cwiseAbs().maxCoeff(), 0.05);
  const Eigen::VectorXd scale = theta0.cwiseAbs().cwiseMax(0.1 * theta_max);

  auto objective = [&](const Eigen::VectorXd& phi) {
    return profiled_loglik(cp, unpack_lower(phi.cwiseProduct(scale), q), options.sigma2_floor).loglik;
  };

  Eigen::VectorXd phi = theta0.cwiseQuotient(scale);
  double best = objective(phi);
  if (!std::isfinite(best)) throw DomainError("fit_group: log-likelihood is not finite at the starting point");

  // A coarse simplex search gets into the basin; quasi-Newton steps finish.
  NelderMeadOptions nm;
  nm.max_iterations = std::max(1, (3 * options.max_iterations) / 5);
  nm.max_evals = 1 << 30;
  nm.simplex_scale = 0.2;
  nm.f_tolerance = 1e-6;
  nm.x_tolerance = 1e-4;
  const NelderMeadResult coarse = nelder_mead(objective, phi, nm);
  int iterations = coarse.iterations;
  if (coarse.value >= best) {
    phi = coarse.x;
    best = coarse.value;
  }
  const QuasiNewtonResult fine = quasi_newton_ascent(objective, phi, best, options.max_iterations - iterations,
                                                     options.tolerance);
  iterations += fine.iterations;
  phi = fine.x;
  best = fine.value;
  const bool converged = fine.converged;

  const Eigen::MatrixXd lambda = unpack_lower(phi.cwiseProduct(scale), q);
  const ProfiledPoint point = profiled_loglik(cp, lambda, options.sigma2_floor);
  GroupFit fit;
  fit.form = specs.form;
  fit.time_dimension = specs.time.dimension();
  fit.coefficients = point.coefficients;
  fit.sigma2 = point.sigma2;
  fit.D = point.sigma2 * lambda * lambda.transpose();
  fit.D = (0.5 * (fit.D + fit.D.transpose())).eval();
  fit.loglik = point.loglik;
  fit.iterations = iterations;
  fit.converged = converged;
  return fit;
}

GroupFit fit_group(std::span<const SubjectRecord> records, const Eigen::VectorXd& alpha, const ModelSpecs& specs,
                   const FitOptions& options) {
  GroupFit fit = fit_group_unchecked(records, alpha, specs, options);
  if (!fit.converged) {
    throw ConvergenceError("fit_group: variance components did not converge within " +
                               std::to_string(options.max_iterations) + " iterations",
                           std::move(fit));
  }
  return fit;
}

double log_likelihood(const GroupFit& fit, std::span<const SubjectRecord> records, const Eigen::VectorXd& alpha,
                      const ModelSpecs& specs) {
  check_alpha(records, alpha);
  if (fit.coefficients.size() != specs.coefficient_count()) {
    throw DimensionError("log_likelihood: fit has " + std::to_string(fit.coefficients.size()) +
                         " coefficients, specs imply " + std::to_string(specs.coefficient_count()));
  }
  double ll = 0.0;
  for (const auto& r : records) {
    if (r.visits() == 0) continue;
    const Eigen::MatrixXd G = time_design(specs.time, r.times);
    const Eigen::MatrixXd Z = time_design(specs.random, r.times);
    const Eigen::MatrixXd X = specs.fixed_design(G, alpha.dot(r.x));
    const Eigen::Map<const Eigen::VectorXd> y(r.y.data(), static_cast<Eigen::Index>(r.y.size()));
    const Eigen::VectorXd resid = y - X * fit.coefficients;
    Eigen::LLT<Eigen::MatrixXd> llt(marginal_covariance(Z, fit.D, fit.sigma2));
    if (llt.info() != Eigen::Success) throw DomainError("log_likelihood: marginal covariance is not positive definite");
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    ll += -0.5 * (static_cast<double>(y.size()) * kLog2Pi + log_det + resid.dot(llt.solve(resid)));
  }
  return ll;
}

CovarianceProfile::CovarianceProfile(std::span<const SubjectRecord> records, const BasisSpec& time,
                                     const BasisSpec& random, const Eigen::MatrixXd& D, double sigma2) {
  const Eigen::Index d1 = time.dimension();
  struct Factor {
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::MatrixXd WG;
    double log_det = 0.0;
  };
  std::map<std::vector<double>, std::size_t> lookup;
  std::vector<Factor> factors;

  pattern_.reserve(records.size());
  for (const auto& r : records) {
    const Eigen::Index m = static_cast<Eigen::Index>(r.visits());
    auto [it, inserted] = lookup.emplace(r.times, factors.size());
    if (inserted) {
      Factor f;
      if (m > 0) {
        const Eigen::MatrixXd G = time_design(time, r.times);
        const Eigen::MatrixXd Z = time_design(random, r.times);
        f.llt.compute(marginal_covariance(Z, D, sigma2));
        if (f.llt.info() != Eigen::Success) {
          throw DomainError("CovarianceProfile: marginal covariance is not positive definite");
        }
        f.WG = f.llt.solve(G);
        f.log_det = 2.0 * f.llt.matrixLLT().diagonal().array().log().sum();
        gram_.push_back(G.transpose() * f.WG);
      } else {
        gram_.push_back(Eigen::MatrixXd::Zero(d1, d1));
      }
      factors.push_back(std::move(f));
    }
    const std::size_t k = it->second;
    pattern_.push_back(k);
    visits_.push_back(static_cast<std::size_t>(m));
    if (m == 0) {
      cross_.push_back(Eigen::VectorXd::Zero(d1));
      quad_.push_back(0.0);
      log_det_.push_back(0.0);
      continue;
    }
    const Eigen::Map<const Eigen::VectorXd> y(r.y.data(), m);
    cross_.push_back(factors[k].WG.transpose() * y);
    quad_.push_back(y.dot(factors[k].llt.solve(y)));
    log_det_.push_back(factors[k].log_det);
  }
}

Eigen::VectorXd CovarianceProfile::coefficients(ModelForm form, std::span<const Eigen::VectorXd> index_rows) const {
  if (index_rows.size() != pattern_.size()) throw DimensionError("CovarianceProfile: one index row per subject required");
  if (pattern_.empty()) throw EmptyInputError("CovarianceProfile: no subjects");
  const Eigen::Index d1 = gram_.front().rows();
  const Eigen::Index d2 = index_rows.front().size();
  // Time-major accumulation: sum_i gram_i ⊗ a_i a_i^T and vec(sum_i w_i a_i^T).
  std::vector<Eigen::MatrixXd> saa(gram_.size(), Eigen::MatrixXd::Zero(d2, d2));
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(d1, d2);
  for (std::size_t i = 0; i < pattern_.size(); ++i) {
    const Eigen::VectorXd& a = index_rows[i];
    if (a.size() != d2) throw DimensionError("CovarianceProfile: index rows differ in length");
    if (visits_[i] == 0) continue;
    saa[pattern_[i]].noalias() += a * a.transpose();
    R.noalias() += cross_[i] * a.transpose();
  }
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d1 * d2, d1 * d2);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d1 * d2);
  for (std::size_t k = 0; k < gram_.size(); ++k) add_kron(A, gram_[k], saa[k], 1.0);
  add_vec(b, R, 1.0);
  const Eigen::VectorXd coef = solve_normal_equations(A, b, std::string(form_name(form)) + " design at fixed covariance");
  return to_form_layout(coef, form, d1, d2);
}

double CovarianceProfile::log_likelihood(ModelForm form, std::span<const Eigen::VectorXd> index_rows,
                                         const Eigen::VectorXd& coefficients) const {
  if (index_rows.size() != pattern_.size()) throw DimensionError("CovarianceProfile: one index row per subject required");
  if (pattern_.empty()) return 0.0;
  const Eigen::Index d1 = gram_.front().rows();
  const Eigen::Index d2 = index_rows.front().size();
  if (coefficients.size() != d1 * d2) throw DimensionError("CovarianceProfile: coefficient length mismatch");
  // C(r, c) multiplies g_r(t) a_c(u); the subject mean is G C a.
  Eigen::MatrixXd C(d1, d2);
  for (Eigen::Index r = 0; r < d1; ++r) {
    for (Eigen::Index c = 0; c < d2; ++c) {
      C(r, c) = form == ModelForm::tensor ? coefficients(r * d2 + c) : coefficients(c * d1 + r);
    }
  }
  double ll = 0.0;
  for (std::size_t i = 0; i < pattern_.size(); ++i) {
    if (visits_[i] == 0) continue;
    const Eigen::VectorXd h = C * index_rows[i];
    const double r2 = quad_[i] - 2.0 * h.dot(cross_[i]) + h.dot(gram_[pattern_[i]] * h);
    ll += -0.5 * (static_cast<double>(visits_[i]) * kLog2Pi + log_det_[i] + r2);
  }
  return ll;
}

}  // namespace itr
