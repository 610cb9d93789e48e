#include "opflab/acopf.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace opflab {

namespace {

using Triplet = Eigen::Triplet<double>;
using Local = std::array<double, 4>;
using LocalHess = std::array<std::array<double, 4>, 4>;

// Quantities over the local variables (theta_i, theta_k, Vm_i, Vm_k).
struct PairTerm {
  double p = 0.0, q = 0.0;
  Local dp{}, dq{};
  LocalHess hp{}, hq{};
};

// Vm_i Vm_k conj(y) e^{j(theta_i - theta_k)} split into real (p) and imaginary (q).
PairTerm pair_term(double vi, double vk, double theta, std::complex<double> y, bool second) {
  const double g = y.real(), b = y.imag();
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double c = g * cs + b * sn;
  const double s = g * sn - b * cs;
  const double vv = vi * vk;
  PairTerm t;
  t.p = vv * c;
  t.q = vv * s;
  t.dp = {-vv * s, vv * s, vk * c, vi * c};
  t.dq = {vv * c, -vv * c, vk * s, vi * s};
  if (second) {
    t.hp[0][0] = -vv * c;
    t.hp[0][1] = vv * c;
    t.hp[1][1] = -vv * c;
    t.hp[0][2] = -vk * s;
    t.hp[0][3] = -vi * s;
    t.hp[1][2] = vk * s;
    t.hp[1][3] = vi * s;
    t.hp[2][3] = c;
    t.hq[0][0] = -vv * s;
    t.hq[0][1] = vv * s;
    t.hq[1][1] = -vv * s;
    t.hq[0][2] = vk * c;
    t.hq[0][3] = vi * c;
    t.hq[1][2] = -vk * c;
    t.hq[1][3] = -vi * c;
    t.hq[2][3] = s;
    for (int a = 0; a < 4; ++a)
      for (int b2 = 0; b2 < a; ++b2) {
        t.hp[a][b2] = t.hp[b2][a];
        t.hq[a][b2] = t.hq[b2][a];
      }
  }
  return t;
}

// Vm_i^2 conj(y): only depends on Vm_i (local index 2).
PairTerm diag_term(double vi, std::complex<double> y) {
  const double g = y.real(), b = y.imag();
  PairTerm t;
  t.p = vi * vi * g;
  t.q = -vi * vi * b;
  t.dp[2] = 2.0 * vi * g;
  t.dq[2] = -2.0 * vi * b;
  t.hp[2][2] = 2.0 * g;
  t.hq[2][2] = -2.0 * b;
  return t;
}

PairTerm add(const PairTerm& a, const PairTerm& b) {
  PairTerm t;
  t.p = a.p + b.p;
  t.q = a.q + b.q;
  for (int i = 0; i < 4; ++i) {
    t.dp[i] = a.dp[i] + b.dp[i];
    t.dq[i] = a.dq[i] + b.dq[i];
    for (int j = 0; j < 4; ++j) {
      t.hp[i][j] = a.hp[i][j] + b.hp[i][j];
      t.hq[i][j] = a.hq[i][j] + b.hq[i][j];
    }
  }
  return t;
}

// Complex power entering the branch at one end: V_i conj(y_ii V_i + y_ik V_k).
PairTerm end_flow(const Vec& x, const OpfVariables& v, int i, int k, std::complex<double> yii,
                  std::complex<double> yik, bool second) {
  const double vi = x[v.vm.offset + i], vk = x[v.vm.offset + k];
  const double theta = x[v.va.offset + i] - x[v.va.offset + k];
  return add(diag_term(vi, yii), pair_term(vi, vk, theta, yik, second));
}

std::array<int, 4> local_index(const OpfVariables& v, int i, int k) {
  return {v.va.offset + i, v.va.offset + k, v.vm.offset + i, v.vm.offset + k};
}

OpfVariables layout_for(const NetworkModel& net, int n_flow) {
  return OpfVariables::make(net.n_bus(), net.n_gen(), n_flow, net.slack_index);
}

}  // namespace

OpfVariables OpfVariables::make(int n_bus, int n_gen, int n_flow, int slack_bus) {
  OpfVariables v;
  v.n_bus = n_bus;
  v.n_gen = n_gen;
  v.n_flow = n_flow;
  v.va = {0, n_bus};
  v.vm = {n_bus, n_bus};
  v.pg = {2 * n_bus, n_gen};
  v.qg = {2 * n_bus + n_gen, n_gen};
  v.flow = {2 * n_bus + 2 * n_gen, n_flow};
  v.n = 2 * n_bus + 2 * n_gen + n_flow;
  v.slack_angle = v.va.offset + slack_bus;
  return v;
}

FlowLimits FlowLimits::slack(const NetworkModel& net, FlowEnds ends) {
  FlowLimits f;
  f.mode = FlowMode::slack;
  f.ends = ends;
  for (const auto& br : net.branches) f.s_max.push_back(br.in_service ? br.s_max : 0.0);
  return f;
}

OpfProblem::OpfProblem(std::shared_ptr<const NetworkModel> net, LoadProfile loads, FlowLimits flow)
    : net_(std::move(net)), loads_(std::move(loads)), flow_(std::move(flow)) {
  const NetworkModel& g = *net_;
  if (static_cast<int>(loads_.pd.size()) != g.n_bus() ||
      static_cast<int>(loads_.qd.size()) != g.n_bus())
    throw std::invalid_argument("load vector length does not match the bus count");

  if (flow_.mode == FlowMode::slack) {
    if (static_cast<int>(flow_.s_max.size()) != g.n_branch())
      throw std::invalid_argument("flow limit vector length does not match the branch count");
    for (int k = 0; k < g.n_branch(); ++k) {
      if (!g.branches[k].in_service || flow_.s_max[k] <= 0.0) continue;
      monitored_.push_back({k, true, flow_.s_max[k]});
      if (flow_.ends == FlowEnds::both) monitored_.push_back({k, false, flow_.s_max[k]});
    }
  }
  vars_ = layout_for(g, static_cast<int>(monitored_.size()));
  m_ = 2 * g.n_bus() + vars_.n_flow;

  constexpr double inf = std::numeric_limits<double>::infinity();
  lower_ = Vec::Constant(vars_.n, -inf);
  upper_ = Vec::Constant(vars_.n, inf);
  lower_[vars_.slack_angle] = 0.0;
  upper_[vars_.slack_angle] = 0.0;
  for (int i = 0; i < g.n_bus(); ++i) {
    lower_[vars_.vm.offset + i] = g.buses[i].vm_min;
    upper_[vars_.vm.offset + i] = g.buses[i].vm_max;
  }
  for (int j = 0; j < g.n_gen(); ++j) {
    lower_[vars_.pg.offset + j] = g.gens[j].pg_min;
    upper_[vars_.pg.offset + j] = g.gens[j].pg_max;
    lower_[vars_.qg.offset + j] = g.gens[j].qg_min;
    upper_[vars_.qg.offset + j] = g.gens[j].qg_max;
  }
  for (int f = 0; f < vars_.n_flow; ++f) {
    lower_[vars_.flow.offset + f] = 0.0;
    upper_[vars_.flow.offset + f] = monitored_[f].s_max * monitored_[f].s_max;
  }
  for (int i = 0; i < vars_.n; ++i)
    if (lower_[i] > upper_[i])
      throw InfeasibleBoxError("infeasible bounds on variable " + std::to_string(i) + ": [" +
                               std::to_string(lower_[i]) + ", " + std::to_string(upper_[i]) + "]");
}

std::unique_ptr<NlpProblem> OpfProblem::clone() const { return std::make_unique<OpfProblem>(*this); }

double OpfProblem::objective(const Vec& x) const {
  double f = 0.0;
  for (int j = 0; j < vars_.n_gen; ++j) {
    const auto& g = net_->gens[j];
    const double p = x[vars_.pg.offset + j];
    f += g.c2 * p * p + g.c1 * p + g.c0;
  }
  return f;
}

Vec OpfProblem::gradient(const Vec& x) const {
  Vec grad = Vec::Zero(vars_.n);
  for (int j = 0; j < vars_.n_gen; ++j) {
    const auto& g = net_->gens[j];
    grad[vars_.pg.offset + j] = 2.0 * g.c2 * x[vars_.pg.offset + j] + g.c1;
  }
  return grad;
}

Vec OpfProblem::constraints(const Vec& x) const {
  Vec h(m_);
  h.head(2 * vars_.n_bus) = eval_balance(x, *net_, loads_);
  for (int f = 0; f < vars_.n_flow; ++f) {
    const auto& me = monitored_[f];
    const auto& br = net_->branches[me.branch];
    PairTerm t = me.from_end ? end_flow(x, vars_, br.from, br.to, br.y.yff, br.y.yft, false)
                             : end_flow(x, vars_, br.to, br.from, br.y.ytt, br.y.ytf, false);
    h[2 * vars_.n_bus + f] = t.p * t.p + t.q * t.q - x[vars_.flow.offset + f];
  }
  return h;
}

SparseMat OpfProblem::jacobian(const Vec& x) const {
  const NetworkModel& g = *net_;
  const int nb = vars_.n_bus;
  std::vector<Triplet> trips;
  trips.reserve(4 * g.ybus.nonZeros() + 2 * vars_.n_gen + 5 * vars_.n_flow);

  for (int k = 0; k < g.ybus.outerSize(); ++k) {
    for (ComplexSparse::InnerIterator it(g.ybus, k); it; ++it) {
      const int i = static_cast<int>(it.row());
      if (i == k) {
        PairTerm t = diag_term(x[vars_.vm.offset + i], it.value());
        trips.emplace_back(i, vars_.vm.offset + i, t.dp[2]);
        trips.emplace_back(nb + i, vars_.vm.offset + i, t.dq[2]);
        // angle column of the diagonal carries no term, but keeps the pattern square
        trips.emplace_back(i, vars_.va.offset + i, 0.0);
        trips.emplace_back(nb + i, vars_.va.offset + i, 0.0);
        continue;
      }
      const double theta = x[vars_.va.offset + i] - x[vars_.va.offset + k];
      PairTerm t = pair_term(x[vars_.vm.offset + i], x[vars_.vm.offset + k], theta, it.value(), false);
      auto idx = local_index(vars_, i, k);
      for (int a = 0; a < 4; ++a) {
        trips.emplace_back(i, idx[a], t.dp[a]);
        trips.emplace_back(nb + i, idx[a], t.dq[a]);
      }
    }
  }
  for (int j = 0; j < vars_.n_gen; ++j) {
    const int bus = g.gens[j].bus;
    trips.emplace_back(bus, vars_.pg.offset + j, -1.0);
    trips.emplace_back(nb + bus, vars_.qg.offset + j, -1.0);
  }
  for (int f = 0; f < vars_.n_flow; ++f) {
    const auto& me = monitored_[f];
    const auto& br = g.branches[me.branch];
    const int i = me.from_end ? br.from : br.to;
    const int k = me.from_end ? br.to : br.from;
    PairTerm t = me.from_end ? end_flow(x, vars_, i, k, br.y.yff, br.y.yft, false)
                             : end_flow(x, vars_, i, k, br.y.ytt, br.y.ytf, false);
    auto idx = local_index(vars_, i, k);
    const int row = 2 * nb + f;
    for (int a = 0; a < 4; ++a) trips.emplace_back(row, idx[a], 2.0 * (t.p * t.dp[a] + t.q * t.dq[a]));
    trips.emplace_back(row, vars_.flow.offset + f, -1.0);
  }

  SparseMat jac(m_, vars_.n);
  jac.setFromTriplets(trips.begin(), trips.end());
  jac.makeCompressed();
  return jac;
}

SparseMat OpfProblem::hessian(const Vec& x, const Vec& lambda, double obj_factor) const {
  const NetworkModel& g = *net_;
  const int nb = vars_.n_bus;
  std::vector<Triplet> trips;
  trips.reserve(16 * g.ybus.nonZeros() + vars_.n_gen + 16 * vars_.n_flow);

  auto scatter = [&](const std::array<int, 4>& idx, const LocalHess& h, double w) {
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) trips.emplace_back(idx[a], idx[b], w * h[a][b]);
  };

  for (int k = 0; k < g.ybus.outerSize(); ++k) {
    for (ComplexSparse::InnerIterator it(g.ybus, k); it; ++it) {
      const int i = static_cast<int>(it.row());
      const double lp = lambda[i], lq = lambda[nb + i];
      if (i == k) {
        PairTerm t = diag_term(x[vars_.vm.offset + i], it.value());
        trips.emplace_back(vars_.vm.offset + i, vars_.vm.offset + i, lp * t.hp[2][2] + lq * t.hq[2][2]);
        continue;
      }
      const double theta = x[vars_.va.offset + i] - x[vars_.va.offset + k];
      PairTerm t = pair_term(x[vars_.vm.offset + i], x[vars_.vm.offset + k], theta, it.value(), true);
      LocalHess h{};
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) h[a][b] = lp * t.hp[a][b] + lq * t.hq[a][b];
      scatter(local_index(vars_, i, k), h, 1.0);
    }
  }
  for (int j = 0; j < vars_.n_gen; ++j)
    trips.emplace_back(vars_.pg.offset + j, vars_.pg.offset + j, obj_factor * 2.0 * g.gens[j].c2);

  for (int f = 0; f < vars_.n_flow; ++f) {
    const auto& me = monitored_[f];
    const auto& br = g.branches[me.branch];
    const int i = me.from_end ? br.from : br.to;
    const int k = me.from_end ? br.to : br.from;
    PairTerm t = me.from_end ? end_flow(x, vars_, i, k, br.y.yff, br.y.yft, true)
                             : end_flow(x, vars_, i, k, br.y.ytt, br.y.ytf, true);
    LocalHess h{};
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        h[a][b] = 2.0 * (t.dp[a] * t.dp[b] + t.dq[a] * t.dq[b] + t.p * t.hp[a][b] + t.q * t.hq[a][b]);
    scatter(local_index(vars_, i, k), h, lambda[2 * nb + f]);
  }

  SparseMat hess(vars_.n, vars_.n);
  hess.setFromTriplets(trips.begin(), trips.end());
  hess.makeCompressed();
  return hess;
}

OpfProblem assemble_nlp(std::shared_ptr<const NetworkModel> net, LoadProfile loads, FlowLimits flow) {
  return OpfProblem(std::move(net), std::move(loads), std::move(flow));
}

Vec eval_balance(const Vec& x, const NetworkModel& net, const LoadProfile& loads) {
  const int nb = net.n_bus();
  const OpfVariables v = layout_for(net, 0);
  Vec h = Vec::Zero(2 * nb);
  for (int k = 0; k < net.ybus.outerSize(); ++k) {
    for (ComplexSparse::InnerIterator it(net.ybus, k); it; ++it) {
      const int i = static_cast<int>(it.row());
      PairTerm t = i == k ? diag_term(x[v.vm.offset + i], it.value())
                          : pair_term(x[v.vm.offset + i], x[v.vm.offset + k],
                                      x[v.va.offset + i] - x[v.va.offset + k], it.value(), false);
      h[i] += t.p;
      h[nb + i] += t.q;
    }
  }
  for (int j = 0; j < net.n_gen(); ++j) {
    const int bus = net.gens[j].bus;
    h[bus] -= x[v.pg.offset + j];
    h[nb + bus] -= x[v.qg.offset + j];
  }
  for (int i = 0; i < nb; ++i) {
    h[i] += loads.pd[i];
    h[nb + i] += loads.qd[i];
  }
  return h;
}

LineFlows eval_line_flows(const Vec& x, const NetworkModel& net) {
  const OpfVariables v = layout_for(net, 0);
  LineFlows out{Vec::Zero(net.n_branch()), Vec::Zero(net.n_branch())};
  for (int k = 0; k < net.n_branch(); ++k) {
    const auto& br = net.branches[k];
    if (!br.in_service) continue;
    PairTerm f = end_flow(x, v, br.from, br.to, br.y.yff, br.y.yft, false);
    PairTerm t = end_flow(x, v, br.to, br.from, br.y.ytt, br.y.ytf, false);
    out.from_sq[k] = f.p * f.p + f.q * f.q;
    out.to_sq[k] = t.p * t.p + t.q * t.q;
  }
  return out;
}

Derivatives eval_derivatives(const NlpProblem& p, const Vec& x, const Vec& lambda) {
  return {p.gradient(x), p.jacobian(x), p.hessian(x, lambda)};
}

}  // namespace opflab
