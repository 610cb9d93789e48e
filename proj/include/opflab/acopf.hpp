#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "opflab/casefile.hpp"
#include "opflab/nlp.hpp"

namespace opflab {

struct Slice {
  int offset = 0;
  int size = 0;
  int begin() const { return offset; }
  int end() const { return offset + size; }
  bool contains(int i) const { return i >= offset && i < end(); }
};

// x = (Va[n_bus], Vm[n_bus], Pg[n_gen], Qg[n_gen], s[n_flow]).
struct OpfVariables {
  int n_bus = 0;
  int n_gen = 0;
  int n_flow = 0;
  Slice va, vm, pg, qg, flow;
  int n = 0;
  int slack_angle = 0;  // position of the slack-bus angle in x

  static OpfVariables make(int n_bus, int n_gen, int n_flow, int slack_bus);
};

enum class FlowMode { omit, slack };
enum class FlowEnds { from, both };

struct FlowLimits {
  FlowMode mode = FlowMode::omit;
  FlowEnds ends = FlowEnds::from;
  std::vector<double> s_max;  // per branch, p.u.; 0 means unmonitored

  static FlowLimits omit() { return {}; }
  // Monitors every in-service branch with a nonzero rating.
  static FlowLimits slack(const NetworkModel& net, FlowEnds ends = FlowEnds::from);
};

struct MonitoredEnd {
  int branch = 0;
  bool from_end = true;
  double s_max = 0.0;
};

class InfeasibleBoxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// AC-OPF in polar voltage coordinates.
//
// Equalities: 2*n_bus power balances (P rows then Q rows), then one
// |S|^2 - s = 0 row per monitored branch end in slack mode.
class OpfProblem : public NlpProblem {
 public:
  OpfProblem(std::shared_ptr<const NetworkModel> net, LoadProfile loads, FlowLimits flow);

  double objective(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  Vec constraints(const Vec& x) const override;
  SparseMat jacobian(const Vec& x) const override;
  SparseMat hessian(const Vec& x, const Vec& lambda, double obj_factor = 1.0) const override;
  std::unique_ptr<NlpProblem> clone() const override;

  const NetworkModel& network() const { return *net_; }
  std::shared_ptr<const NetworkModel> network_ptr() const { return net_; }
  const LoadProfile& loads() const { return loads_; }
  const FlowLimits& flow_limits() const { return flow_; }
  const OpfVariables& vars() const { return vars_; }
  const std::vector<MonitoredEnd>& monitored() const { return monitored_; }

 private:
  std::shared_ptr<const NetworkModel> net_;
  LoadProfile loads_;
  FlowLimits flow_;
  OpfVariables vars_;
  std::vector<MonitoredEnd> monitored_;
};

OpfProblem assemble_nlp(std::shared_ptr<const NetworkModel> net, LoadProfile loads,
                        FlowLimits flow = FlowLimits::omit());

// Power balance residuals (P rows then Q rows) for x laid out as OpfVariables.
Vec eval_balance(const Vec& x, const NetworkModel& net, const LoadProfile& loads);

struct LineFlows {
  Vec from_sq;  // |S_ft|^2 per branch (0 for out-of-service)
  Vec to_sq;
};

LineFlows eval_line_flows(const Vec& x, const NetworkModel& net);

struct Derivatives {
  Vec grad;
  SparseMat jac;
  SparseMat hess;
};

Derivatives eval_derivatives(const NlpProblem& p, const Vec& x, const Vec& lambda);

}  // namespace opflab
