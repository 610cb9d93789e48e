#include "opflab/ipm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace opflab {

namespace {

constexpr double kClip = 1e10;
constexpr double kScaleMax = 100.0;
constexpr double kSigmaSafeguard = 1e10;
constexpr double kArmijo = 1e-4;
constexpr double kMaxRegularization = 1e40;
constexpr double kMaxConstraintRegularization = 1e-2;

struct BoundMask {
  std::vector<char> lower, upper, fixed;
  int sides = 0;
  int free_count = 0;

  explicit BoundMask(const NlpProblem& p) {
    const int n = p.n();
    lower.assign(n, 0);
    upper.assign(n, 0);
    fixed.assign(n, 0);
    for (int i = 0; i < n; ++i) {
      const double l = p.lower()[i], u = p.upper()[i];
      if (finite_lower(l) && finite_upper(u) && l == u) {
        fixed[i] = 1;
        continue;
      }
      ++free_count;
      lower[i] = finite_lower(l);
      upper[i] = finite_upper(u);
      sides += lower[i] + upper[i];
    }
  }
};

double inf_norm(const Vec& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

struct Scaling {
  double dual = 1.0;
  double compl_ = 1.0;
};

Scaling multiplier_scaling(const IpmState& s, const BoundMask& mask, int m) {
  const double zsum = s.z_l.lpNorm<1>() + s.z_u.lpNorm<1>();
  const double lsum = s.lambda.size() ? s.lambda.lpNorm<1>() : 0.0;
  Scaling sc;
  const int count = m + mask.sides;
  if (count > 0) sc.dual = std::max(kScaleMax, (lsum + zsum) / count) / kScaleMax;
  if (mask.sides > 0) sc.compl_ = std::max(kScaleMax, zsum / mask.sides) / kScaleMax;
  return sc;
}

struct Errors {
  double stationarity = 0.0;
  double primal = 0.0;
  double compl_mu = 0.0;
  double compl_zero = 0.0;
};

Errors evaluate_errors(const IpmState& s, const NlpProblem& p, const BoundMask& mask, const Vec& grad,
                       const Vec& h, const SparseMat& jac, bool skip_fixed) {
  Errors e;
  Vec stat = grad - s.z_l + s.z_u;
  if (s.lambda.size()) stat += jac.transpose() * s.lambda;
  for (int i = 0; i < p.n(); ++i) {
    if (skip_fixed && mask.fixed[i]) continue;
    e.stationarity = std::max(e.stationarity, std::abs(stat[i]));
    if (mask.lower[i]) {
      const double prod = (s.x[i] - p.lower()[i]) * s.z_l[i];
      e.compl_zero = std::max(e.compl_zero, std::abs(prod));
      e.compl_mu = std::max(e.compl_mu, std::abs(prod - s.mu));
    }
    if (mask.upper[i]) {
      const double prod = (p.upper()[i] - s.x[i]) * s.z_u[i];
      e.compl_zero = std::max(e.compl_zero, std::abs(prod));
      e.compl_mu = std::max(e.compl_mu, std::abs(prod - s.mu));
    }
  }
  e.primal = inf_norm(h);
  return e;
}

double combine(const Errors& e, const Scaling& sc, bool at_zero) {
  return std::max({e.stationarity / sc.dual, e.primal,
                   (at_zero ? e.compl_zero : e.compl_mu) / sc.compl_});
}

// Bound multipliers of fixed variables absorb their stationarity residual.
void settle_fixed_multipliers(IpmState& s, const BoundMask& mask, const Vec& grad, const SparseMat& jac) {
  Vec r = grad;
  if (s.lambda.size()) r += jac.transpose() * s.lambda;
  for (size_t i = 0; i < mask.fixed.size(); ++i) {
    if (!mask.fixed[i]) continue;
    s.z_l[i] = std::max(r[i], 0.0);
    s.z_u[i] = std::max(-r[i], 0.0);
  }
}

double barrier_merit(const NlpProblem& p, const BoundMask& mask, const Vec& x, double mu, double rho,
                     double f, const Vec& h) {
  double phi = f + rho * h.lpNorm<1>();
  for (int i = 0; i < p.n(); ++i) {
    if (mask.lower[i]) phi -= mu * std::log(x[i] - p.lower()[i]);
    if (mask.upper[i]) phi -= mu * std::log(p.upper()[i] - x[i]);
  }
  return phi;
}

}  // namespace

void IpmOptions::validate() const {
  if (!(tol > 0)) throw std::invalid_argument("tol must be positive");
  if (max_iter < 0) throw std::invalid_argument("max_iter must be non-negative");
  if (!(mu_init > 0)) throw std::invalid_argument("mu_init must be positive");
  if (!(mu_linear_factor > 0 && mu_linear_factor < 1))
    throw std::invalid_argument("mu_linear_factor must lie in (0, 1)");
  if (!(mu_superlinear_power > 1)) throw std::invalid_argument("mu_superlinear_power must exceed 1");
  if (!(fraction_to_boundary > 0 && fraction_to_boundary < 1))
    throw std::invalid_argument("fraction_to_boundary must lie in (0, 1)");
  if (!(bound_push > 0 && bound_push < 0.5) || !(warm_bound_push > 0 && warm_bound_push < 0.5))
    throw std::invalid_argument("bound push must lie in (0, 0.5)");
  if (!(inertia_delta_0 > 0)) throw std::invalid_argument("inertia_delta_0 must be positive");
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::step_failure: return "step_failure";
  }
  return "unknown";
}

IpmState default_start(const NlpProblem& p, double mu_init) {
  const int n = p.n();
  BoundMask mask(p);
  IpmState s;
  s.x.resize(n);
  s.lambda = Vec::Zero(p.m());
  s.z_l = Vec::Zero(n);
  s.z_u = Vec::Zero(n);
  s.mu = mu_init;
  for (int i = 0; i < n; ++i) {
    const double l = std::max(p.lower()[i], -kClip);
    const double u = std::min(p.upper()[i], kClip);
    s.x[i] = mask.fixed[i] ? p.lower()[i] : 0.5 * (l + u);
    if (mask.lower[i]) s.z_l[i] = 1.0;
    if (mask.upper[i]) s.z_u[i] = 1.0;
  }
  return s;
}

IpmState apply_bound_push(const IpmState& state, const NlpProblem& p, double push) {
  if (!(push > 0 && push < 0.5)) throw std::invalid_argument("bound push must lie in (0, 0.5)");
  BoundMask mask(p);
  IpmState s = state;
  for (int i = 0; i < p.n(); ++i) {
    const double l = p.lower()[i], u = p.upper()[i];
    if (mask.fixed[i]) {
      s.x[i] = l;
      continue;
    }
    const bool two_sided = mask.lower[i] && mask.upper[i];
    if (mask.lower[i]) {
      double margin = push * std::max(1.0, std::abs(l));
      if (two_sided) margin = std::min(margin, push * (u - l));
      double floor = l + margin;
      if (floor <= l) floor = std::nextafter(l, std::numeric_limits<double>::infinity());
      if (s.x[i] < floor) s.x[i] = floor;
      s.z_l[i] = std::max(s.z_l[i], push);
    } else {
      s.z_l[i] = 0.0;
    }
    if (mask.upper[i]) {
      double margin = push * std::max(1.0, std::abs(u));
      if (two_sided) margin = std::min(margin, push * (u - l));
      double ceil = u - margin;
      if (ceil >= u) ceil = std::nextafter(u, -std::numeric_limits<double>::infinity());
      if (s.x[i] > ceil) s.x[i] = ceil;
      s.z_u[i] = std::max(s.z_u[i], push);
    } else {
      s.z_u[i] = 0.0;
    }
  }
  return s;
}

KktResidual kkt_residual(const IpmState& s, const NlpProblem& p) {
  BoundMask mask(p);
  Vec grad = p.gradient(s.x);
  Vec h = p.constraints(s.x);
  SparseMat jac = p.jacobian(s.x);
  Errors e = evaluate_errors(s, p, mask, grad, h, jac, false);
  return {e.stationarity, e.primal, e.compl_mu, e.compl_zero};
}

double scaled_kkt_error(const IpmState& s, const NlpProblem& p, double mu) {
  BoundMask mask(p);
  IpmState t = s;
  t.mu = mu;
  Vec grad = p.gradient(s.x);
  SparseMat jac = p.jacobian(s.x);
  settle_fixed_multipliers(t, mask, grad, jac);
  Errors e = evaluate_errors(t, p, mask, grad, p.constraints(s.x), jac, true);
  return combine(e, multiplier_scaling(t, mask, p.m()), mu == 0.0);
}

Centrality centrality(const IpmState& s, const NlpProblem& p) {
  BoundMask mask(p);
  Centrality c;
  c.lower_products = Vec::Zero(p.n());
  c.upper_products = Vec::Zero(p.n());
  double total = 0.0;
  for (int i = 0; i < p.n(); ++i) {
    if (mask.lower[i]) c.lower_products[i] = (s.x[i] - p.lower()[i]) * s.z_l[i];
    if (mask.upper[i]) c.upper_products[i] = (p.upper()[i] - s.x[i]) * s.z_u[i];
    total += c.lower_products[i] + c.upper_products[i];
  }
  c.mu_bar = mask.sides > 0 ? total / mask.sides : 0.0;
  return c;
}

double min_slack(const Vec& x, const NlpProblem& p) {
  BoundMask mask(p);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < p.n(); ++i) {
    if (mask.lower[i]) best = std::min(best, x[i] - p.lower()[i]);
    if (mask.upper[i]) best = std::min(best, p.upper()[i] - x[i]);
  }
  return best;
}

SolveResult solve(const NlpProblem& p, const IpmState& start, const IpmOptions& opts) {
  opts.validate();
  const int n = p.n();
  const int m = p.m();
  const Vec& lo = p.lower();
  const Vec& up = p.upper();
  BoundMask mask(p);

  if (start.x.size() != n || start.lambda.size() != m || start.z_l.size() != n ||
      start.z_u.size() != n)
    throw std::invalid_argument("start state dimensions do not match the problem");
  if (!(start.mu > 0)) throw std::invalid_argument("start mu must be positive");

  IpmState s = start;
  for (int i = 0; i < n; ++i) {
    if (mask.fixed[i]) {
      s.x[i] = lo[i];
      continue;
    }
    if ((mask.lower[i] && !(s.x[i] > lo[i])) || (mask.upper[i] && !(s.x[i] < up[i])))
      throw std::invalid_argument("start point is not strictly interior at component " +
                                  std::to_string(i));
    if ((mask.lower[i] && !(s.z_l[i] > 0)) || (mask.upper[i] && !(s.z_u[i] > 0)))
      throw std::invalid_argument("start bound multipliers must be positive at component " +
                                  std::to_string(i));
    if (!mask.lower[i]) s.z_l[i] = 0.0;
    if (!mask.upper[i]) s.z_u[i] = 0.0;
  }

  // Compressed index of free variables inside the KKT matrix.
  std::vector<int> free_pos(n, -1);
  std::vector<int> free_idx;
  for (int i = 0; i < n; ++i)
    if (!mask.fixed[i]) {
      free_pos[i] = static_cast<int>(free_idx.size());
      free_idx.push_back(i);
    }
  const int nf = static_cast<int>(free_idx.size());
  const int dim = nf + m;
  auto kkt = make_kkt_solver(opts.linear_solver, dim);

  const double mu_min = opts.tol / 10.0;
  const double tau = opts.fraction_to_boundary;
  double rho = 0.0;
  double delta_last = 0.0;

  SolveResult result;
  int iter = 0;
  double alpha_primal = 0.0, alpha_dual = 0.0, delta_used = 0.0;

  while (true) {
    const double f = p.objective(s.x);
    const Vec grad = p.gradient(s.x);
    const Vec h = p.constraints(s.x);
    const SparseMat jac = p.jacobian(s.x);
    settle_fixed_multipliers(s, mask, grad, jac);

    const Errors err = evaluate_errors(s, p, mask, grad, h, jac, true);
    const Scaling sc = multiplier_scaling(s, mask, m);
    const double e0 = combine(err, sc, true);

    if (opts.keep_log)
      result.log.push_back({iter, s.mu, f, err.primal, err.stationarity, err.compl_zero, alpha_primal,
                            alpha_dual, delta_used, min_slack(s.x, p)});
    if (!std::isfinite(e0)) {
      result.status = SolveStatus::step_failure;
      break;
    }
    if (e0 <= opts.tol) {
      result.status = SolveStatus::converged;
      break;
    }
    if (iter >= opts.max_iter) {
      result.status = SolveStatus::max_iter;
      break;
    }

    // Monotone barrier update while the subproblem is solved to c * mu.
    while (s.mu > mu_min) {
      IpmState probe = s;
      Errors e_mu = evaluate_errors(probe, p, mask, grad, h, jac, true);
      if (combine(e_mu, sc, false) > opts.barrier_tol_factor * s.mu) break;
      const double next = std::max(mu_min, std::min(opts.mu_linear_factor * s.mu,
                                                    std::pow(s.mu, opts.mu_superlinear_power)));
      if (next >= s.mu) break;
      s.mu = next;
    }
    const double mu = s.mu;

    // Barrier gradient and primal-dual Hessian of the barrier term.
    Vec grad_phi = grad;
    Vec sigma = Vec::Zero(n);
    for (int i = 0; i < n; ++i) {
      if (mask.lower[i]) {
        const double sl = s.x[i] - lo[i];
        grad_phi[i] -= mu / sl;
        sigma[i] += s.z_l[i] / sl;
      }
      if (mask.upper[i]) {
        const double su = up[i] - s.x[i];
        grad_phi[i] += mu / su;
        sigma[i] += s.z_u[i] / su;
      }
    }
    Vec rhs(dim);
    {
      Vec r_x = grad_phi;
      if (m) r_x += jac.transpose() * s.lambda;
      for (int k = 0; k < nf; ++k) rhs[k] = -r_x[free_idx[k]];
      rhs.tail(m) = -h;
    }

    const SparseMat hess = p.hessian(s.x, s.lambda);
    // Lower triangle of [W + Sigma + dw I, J^T; J, -dc I] restricted to free variables.
    auto assemble = [&](double dw, double dc) {
      std::vector<Eigen::Triplet<double>> trips;
      trips.reserve(hess.nonZeros() + jac.nonZeros() + dim);
      for (int c = 0; c < hess.outerSize(); ++c)
        for (SparseMat::InnerIterator it(hess, c); it; ++it) {
          const int r = free_pos[it.row()], cc = free_pos[it.col()];
          if (r >= 0 && cc >= 0 && r >= cc) trips.emplace_back(r, cc, it.value());
        }
      for (int k = 0; k < nf; ++k) trips.emplace_back(k, k, sigma[free_idx[k]] + dw);
      for (int c = 0; c < jac.outerSize(); ++c)
        for (SparseMat::InnerIterator it(jac, c); it; ++it) {
          const int cc = free_pos[it.col()];
          if (cc >= 0) trips.emplace_back(nf + static_cast<int>(it.row()), cc, it.value());
        }
      for (int r = 0; r < m; ++r) trips.emplace_back(nf + r, nf + r, -dc);
      SparseMat k(dim, dim);
      k.setFromTriplets(trips.begin(), trips.end());
      return k;
    };

    double delta_w = 0.0;
    double delta_c = (kkt->needs_static_regularization() && m > 0) ? 1e-8 * std::pow(mu, 0.25) : 0.0;
    SparseMat kmat;
    auto factor_with_inertia = [&](double first_delta) -> bool {
      delta_w = first_delta;
      while (true) {
        kmat = assemble(delta_w, delta_c);
        const bool ok = kkt->factor(kmat);
        const Inertia in = kkt->inertia();
        if (ok && in.positive == nf && in.negative == m && in.zero == 0) return true;
        if (in.zero > 0 && m > 0 && delta_c < kMaxConstraintRegularization) {
          // Rank-deficient Jacobian: regularize the constraint block first.
          delta_c = delta_c == 0.0 ? 1e-8 * std::pow(mu, 0.25) : delta_c * 100.0;
          continue;
        }
        if (delta_w == 0.0)
          delta_w = delta_last == 0.0 ? opts.inertia_delta_0
                                      : std::max(opts.inertia_delta_0 * 1e-4, delta_last / 3.0);
        else
          delta_w *= 10.0;
        if (delta_w > kMaxRegularization) return false;
      }
    };

    bool accepted = false;
    double trial_delta = 0.0;
    Vec dx_full(n), dlambda(m), dzl(n), dzu(n);
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      if (!factor_with_inertia(trial_delta)) break;
      if (delta_w > 0.0) delta_last = delta_w;

      Vec sol = kkt->solve(rhs);
      sol += kkt->solve(rhs - kmat.selfadjointView<Eigen::Lower>() * sol);
      if (!sol.allFinite()) {
        trial_delta = std::max(opts.inertia_delta_0, delta_w * 10.0);
        continue;
      }
      dx_full.setZero();
      for (int k = 0; k < nf; ++k) dx_full[free_idx[k]] = sol[k];
      dlambda = sol.tail(m);

      dzl.setZero();
      dzu.setZero();
      double alpha_max = 1.0, alpha_z = 1.0;
      for (int i = 0; i < n; ++i) {
        if (mask.lower[i]) {
          const double sl = s.x[i] - lo[i];
          dzl[i] = mu / sl - s.z_l[i] - s.z_l[i] / sl * dx_full[i];
          if (dx_full[i] < 0) alpha_max = std::min(alpha_max, -tau * sl / dx_full[i]);
          if (dzl[i] < 0) alpha_z = std::min(alpha_z, -tau * s.z_l[i] / dzl[i]);
        }
        if (mask.upper[i]) {
          const double su = up[i] - s.x[i];
          dzu[i] = mu / su - s.z_u[i] + s.z_u[i] / su * dx_full[i];
          if (dx_full[i] > 0) alpha_max = std::min(alpha_max, tau * su / dx_full[i]);
          if (dzu[i] < 0) alpha_z = std::min(alpha_z, -tau * s.z_u[i] / dzu[i]);
        }
      }

      // l1 exact-penalty barrier merit.
      const Vec jdx = m ? Vec(jac * dx_full) : Vec();
      const double gdx = grad_phi.dot(dx_full);
      // Exact-penalty weight must dominate the multipliers of the trial point.
      if (m) rho = std::max(rho, 1.1 * (s.lambda + dlambda).lpNorm<Eigen::Infinity>() + 1e-6);
      // Raise it further if the step would not be a descent direction.
      const double h1 = h.lpNorm<1>();
      if (h1 > 0.0) {
        const double curv = dx_full.dot(hess.selfadjointView<Eigen::Lower>() * dx_full) +
                            dx_full.dot(sigma.cwiseProduct(dx_full));
        const double required = (gdx + 0.5 * std::max(0.0, curv)) / (0.9 * h1);
        if (required > rho) rho = required + 1.0;
      }
      double slope = gdx;
      for (int r = 0; r < m; ++r)
        slope += rho * (h[r] > 0 ? jdx[r] : h[r] < 0 ? -jdx[r] : std::abs(jdx[r]));
      const double phi0 = barrier_merit(p, mask, s.x, mu, rho, f, h);

      double step_norm = 0.0;
      for (int i = 0; i < n; ++i)
        step_norm = std::max(step_norm, std::abs(dx_full[i]) / (1.0 + std::abs(s.x[i])));
      const bool tiny = step_norm < 10.0 * std::numeric_limits<double>::epsilon();

      double alpha = alpha_max;
      while (alpha > 1e-16) {
        const Vec trial = s.x + alpha * dx_full;
        if (tiny) {
          accepted = true;
          break;
        }
        const double phi = barrier_merit(p, mask, trial, mu, rho, p.objective(trial), p.constraints(trial));
        const double bound = slope < 0 ? phi0 + kArmijo * alpha * slope : phi0;
        if (std::isfinite(phi) && phi <= bound + 10.0 * std::numeric_limits<double>::epsilon() * std::abs(phi0)) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (accepted) {
        s.x += alpha * dx_full;
        s.lambda += alpha * dlambda;
        s.z_l += alpha_z * dzl;
        s.z_u += alpha_z * dzu;
        alpha_primal = alpha;
        alpha_dual = alpha_z;
        delta_used = delta_w;
      } else {
        trial_delta = std::max(opts.inertia_delta_0, delta_w * 10.0);
      }
    }
    if (!accepted) {
      result.status = SolveStatus::step_failure;
      break;
    }

    // Keep multipliers within a bounded ratio of the primal-dual central path.
    for (int i = 0; i < n; ++i) {
      if (mask.lower[i]) {
        const double sl = s.x[i] - lo[i];
        s.z_l[i] = std::clamp(s.z_l[i], s.mu / (kSigmaSafeguard * sl), kSigmaSafeguard * s.mu / sl);
      }
      if (mask.upper[i]) {
        const double su = up[i] - s.x[i];
        s.z_u[i] = std::clamp(s.z_u[i], s.mu / (kSigmaSafeguard * su), kSigmaSafeguard * s.mu / su);
      }
    }
    ++iter;
  }

  result.iterations = iter;
  result.state = s;
  result.objective = p.objective(s.x);
  return result;
}

}  // namespace opflab
