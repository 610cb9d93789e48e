#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "opflab/ipm.hpp"
#include "opflab/labels.hpp"
#include "opflab/predictor.hpp"

namespace opflab {

enum class StrategyKind {
  midpoint,
  flat,
  oracle_primal,             // x*, cold duals, cold push
  oracle_primal_cold_duals,  // x*, cold duals, warm push
  oracle_pd,                 // x* plus lambda*, z*, mu* by level, warm push
  predicted,                 // full predicted state, warm push
  predicted_primal,          // predicted x only, cold duals, cold push
  blend,
  projected,
  retracted,
  selective,
  hybrid,
};

enum class OracleLevel { lambda, lambda_z, lambda_z_mu };

// Bit flags for selective starts.
enum VarGroup : unsigned { group_va = 1, group_vm = 2, group_pg = 4, group_qg = 8, group_all = 15 };

struct WarmStartSpec {
  StrategyKind kind = StrategyKind::midpoint;
  OracleLevel level = OracleLevel::lambda_z_mu;
  double alpha = 0.0;         // blend
  double epsilon = 0.02;      // projected
  double mu_target = 0.5;     // retracted
  unsigned groups = group_all;  // selective
  double screen_margin = 0.02;  // hybrid
  std::shared_ptr<const WarmStartSpec> inner;  // hybrid

  // Throws std::invalid_argument when a parameter is out of range.
  void validate() const;
  bool needs_label() const;
  bool needs_prediction() const;

  // Canonical text form, e.g. "oracle_pd(lambda_z_mu)", "blend(0.5)",
  // "selective(va+vm)", "hybrid(0.02,midpoint)".
  std::string name() const;
  static WarmStartSpec parse(const std::string& text);
};

class MissingInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct WarmStartInputs {
  const DualLabel* label = nullptr;
  const Prediction* prediction = nullptr;
};

// Builds the initial state on `p`. Hybrid specs must be expanded with
// prepare_start, which also screens the problem.
IpmState build_warm_start(const WarmStartSpec& spec, const OpfProblem& p, const WarmStartInputs& in,
                          const IpmOptions& opts);

Vec blend(const Vec& x_hat, const Vec& x_mid, double alpha);

// Clamps components with finite two-sided bounds into
// [l + eps (u-l), u - eps (u-l)]; other components pass through.
Vec project_interior(const Vec& x_hat, const Vec& l, const Vec& u, double eps);

// Moves each finite two-sided component whose slack product falls below
// mu_target times the midpoint product toward the midpoint, by the smallest
// bisected blend that restores the product.
Vec retract(const Vec& x_hat, const Vec& l, const Vec& u, double mu_target, const Vec& x_mid);

struct ScreenResult {
  std::shared_ptr<OpfProblem> problem;
  double removed_fraction = 0.0;  // widened Vm bound sides over 2 n_bus
  double margin = 0.0;
};

inline constexpr double kScreenWidened = 1e10;

// Widens every Vm bound whose predicted slack exceeds the margin to +-1e10.
ScreenResult screen_constraints(const OpfProblem& p, const Vec& x_pred, double vm_margin);

// Component mask over x for the given variable groups.
std::vector<char> selective_mask(const OpfVariables& vars, unsigned groups, int n);

struct PreparedStart {
  std::shared_ptr<const OpfProblem> problem;  // screened problem for hybrid, else the input
  IpmState state;
  double mu_ratio = 1.0;  // centrality of the start (before bound push) over the midpoint's
  double removed_fraction = 0.0;
};

PreparedStart prepare_start(const WarmStartSpec& spec, std::shared_ptr<const OpfProblem> p,
                            const WarmStartInputs& in, const IpmOptions& opts);

}  // namespace opflab
