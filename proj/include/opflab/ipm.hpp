#pragma once

#include <string>
#include <vector>

#include "opflab/kkt.hpp"
#include "opflab/nlp.hpp"

namespace opflab {

// Primal-dual interior-point state. z_l / z_u are zero on absent bounds.
struct IpmState {
  Vec x;
  Vec lambda;
  Vec z_l;
  Vec z_u;
  double mu = 0.1;
};

struct IpmOptions {
  double tol = 1e-6;
  int max_iter = 200;
  double mu_init = 0.1;
  double mu_linear_factor = 0.2;     // kappa
  double mu_superlinear_power = 1.5;  // theta
  double barrier_tol_factor = 10.0;  // subproblem solved when E_mu <= factor * mu
  double bound_push = 1e-2;
  double warm_bound_push = 1e-20;
  double fraction_to_boundary = 0.995;
  double inertia_delta_0 = 1e-4;
  KktBackend linear_solver = KktBackend::automatic;
  bool keep_log = true;

  // Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

enum class SolveStatus { converged, max_iter, step_failure };

std::string to_string(SolveStatus s);

struct IterationLog {
  int iter = 0;
  double mu = 0.0;
  double objective = 0.0;
  double primal_inf = 0.0;
  double dual_inf = 0.0;
  double compl_inf = 0.0;
  double alpha_primal = 0.0;
  double alpha_dual = 0.0;
  double regularization = 0.0;
  double min_slack = 0.0;  // smallest distance to a present bound
};

struct SolveResult {
  SolveStatus status = SolveStatus::max_iter;
  int iterations = 0;  // accepted Newton steps
  IpmState state;
  double objective = 0.0;
  std::vector<IterationLog> log;

  bool converged() const { return status == SolveStatus::converged; }
};

// x0 = (l+u)/2 with absent bounds clipped to +-1e10 first; lambda = 0;
// z = 1 on present bounds; mu = mu_init.
IpmState default_start(const NlpProblem& p, double mu_init = 0.1);

// Moves x at least min(push*max(1,|bound|), push*(u-l)) inside each present
// bound; floors z on present bounds at `push`. Interior values are untouched.
IpmState apply_bound_push(const IpmState& state, const NlpProblem& p, double push);

struct KktResidual {
  double stationarity = 0.0;  // ||grad f + J^T lambda - z_l + z_u||_inf
  double primal = 0.0;        // ||h||_inf
  double compl_mu = 0.0;      // ||(x-l) z_l - mu||_inf and upper side
  double compl_zero = 0.0;    // same at mu = 0
};

KktResidual kkt_residual(const IpmState& s, const NlpProblem& p);

// max(stat/s_d, primal, compl/s_c) with the usual multiplier-size scaling.
double scaled_kkt_error(const IpmState& s, const NlpProblem& p, double mu);

struct Centrality {
  double mu_bar = 0.0;
  Vec lower_products;  // (x-l) z_l, zero on absent bounds
  Vec upper_products;
};

Centrality centrality(const IpmState& s, const NlpProblem& p);

// Smallest distance to a present bound over non-fixed components.
double min_slack(const Vec& x, const NlpProblem& p);

SolveResult solve(const NlpProblem& p, const IpmState& start, const IpmOptions& opts = {});

}  // namespace opflab
