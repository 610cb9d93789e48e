#include "opflab/powerflow.hpp"

#include <complex>
#include <vector>

#include <Eigen/SparseLU>

namespace opflab {

namespace {

using Complex = std::complex<double>;
using CVec = Eigen::VectorXcd;

struct BusSets {
  std::vector<int> pvpq;  // angle unknowns
  std::vector<int> pq;    // magnitude unknowns
  Vec p_spec;             // net specified injection per bus
  Vec q_spec;
  Vec vm_set;             // voltage setpoint per bus (NaN where free)
};

BusSets classify(const NetworkModel& net, const LoadProfile& loads) {
  const int nb = net.n_bus();
  BusSets s;
  s.p_spec = -Eigen::Map<const Vec>(loads.pd.data(), nb);
  s.q_spec = -Eigen::Map<const Vec>(loads.qd.data(), nb);
  s.vm_set = Vec::Constant(nb, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> has_gen(nb, 0);
  for (const auto& g : net.gens) {
    s.p_spec[g.bus] += g.pg0;
    s.q_spec[g.bus] += g.qg0;
    if (!has_gen[g.bus]) s.vm_set[g.bus] = g.vg;
    has_gen[g.bus] = 1;
  }
  for (int i = 0; i < nb; ++i) {
    const BusType t = net.buses[i].type;
    if (t == BusType::pv && !has_gen[i])
      throw std::invalid_argument("PV bus " + std::to_string(net.buses[i].id) + " has no generator");
    if (t == BusType::slack && !has_gen[i]) s.vm_set[i] = net.buses[i].vm0;
    if (t != BusType::slack) s.pvpq.push_back(i);
    if (t == BusType::pq) s.pq.push_back(i);
  }
  return s;
}

}  // namespace

SparseMat dc_bprime(const NetworkModel& net) {
  std::vector<Eigen::Triplet<double>> trips;
  for (const auto& br : net.branches) {
    if (!br.in_service) continue;
    const double b = 1.0 / (br.x * br.tap);
    trips.emplace_back(br.from, br.from, b);
    trips.emplace_back(br.to, br.to, b);
    trips.emplace_back(br.from, br.to, -b);
    trips.emplace_back(br.to, br.from, -b);
  }
  SparseMat bp(net.n_bus(), net.n_bus());
  bp.setFromTriplets(trips.begin(), trips.end());
  return bp;
}

Vec dc_injections(const NetworkModel& net, const LoadProfile& loads) {
  const int nb = net.n_bus();
  Vec p = Vec::Zero(nb);
  for (int i = 0; i < nb; ++i) p[i] = -loads.pd[i] - net.buses[i].gs;
  for (const auto& g : net.gens) p[g.bus] += g.pg0;
  // phase shifters act as fixed injections
  for (const auto& br : net.branches) {
    if (!br.in_service || br.shift == 0.0) continue;
    const double pf = -br.shift / (br.x * br.tap);
    p[br.from] += pf;
    p[br.to] -= pf;
  }
  return p;
}

Vec dc_angles(const NetworkModel& net, const LoadProfile& loads) {
  if (!is_connected(net)) throw SingularNetworkError("B' is singular: the network is islanded");
  const int nb = net.n_bus();
  const int slack = net.slack_index;
  SparseMat bp = dc_bprime(net);
  Vec p = dc_injections(net, loads);

  std::vector<int> keep;
  std::vector<int> pos(nb, -1);
  for (int i = 0; i < nb; ++i)
    if (i != slack) {
      pos[i] = static_cast<int>(keep.size());
      keep.push_back(i);
    }
  std::vector<Eigen::Triplet<double>> trips;
  for (int k = 0; k < bp.outerSize(); ++k)
    for (SparseMat::InnerIterator it(bp, k); it; ++it)
      if (pos[it.row()] >= 0 && pos[it.col()] >= 0)
        trips.emplace_back(pos[it.row()], pos[it.col()], it.value());
  const int nr = static_cast<int>(keep.size());
  SparseMat reduced(nr, nr);
  reduced.setFromTriplets(trips.begin(), trips.end());
  Vec rhs(nr);
  for (int r = 0; r < nr; ++r) rhs[r] = p[keep[r]];

  Eigen::SparseLU<SparseMat> lu;
  lu.compute(reduced);
  if (lu.info() != Eigen::Success) throw SingularNetworkError("B' factorization failed");
  Vec theta_r = lu.solve(rhs);
  Vec theta = Vec::Zero(nb);
  for (int r = 0; r < nr; ++r) theta[keep[r]] = theta_r[r];
  return theta;
}

PfResult solve_pf(const NetworkModel& net, const LoadProfile& loads, const PfInit& init,
                  const PfOptions& opts) {
  const int nb = net.n_bus();
  BusSets sets = classify(net, loads);

  Vec vm = Vec::Ones(nb);
  Vec va = Vec::Zero(nb);
  switch (init.kind) {
    case PfInitKind::flat:
      break;
    case PfInitKind::dc:
      va = dc_angles(net, loads);
      break;
    case PfInitKind::custom:
      if (init.vm.size() != nb || init.va.size() != nb)
        throw std::invalid_argument("custom power flow start has the wrong length");
      vm = init.vm;
      va = init.va;
      break;
  }
  for (int i = 0; i < nb; ++i)
    if (!std::isnan(sets.vm_set[i])) vm[i] = sets.vm_set[i];
  if (init.kind != PfInitKind::custom) va[net.slack_index] = 0.0;

  const int npvpq = static_cast<int>(sets.pvpq.size());
  const int npq = static_cast<int>(sets.pq.size());
  std::vector<int> col_va(nb, -1), col_vm(nb, -1);
  for (int r = 0; r < npvpq; ++r) col_va[sets.pvpq[r]] = r;
  for (int r = 0; r < npq; ++r) col_vm[sets.pq[r]] = npvpq + r;

  auto voltages = [&] {
    CVec v(nb);
    for (int i = 0; i < nb; ++i) v[i] = std::polar(vm[i], va[i]);
    return v;
  };
  auto mismatch = [&](const CVec& s) {
    Vec f(npvpq + npq);
    for (int r = 0; r < npvpq; ++r) f[r] = s[sets.pvpq[r]].real() - sets.p_spec[sets.pvpq[r]];
    for (int r = 0; r < npq; ++r) f[npvpq + r] = s[sets.pq[r]].imag() - sets.q_spec[sets.pq[r]];
    return f;
  };

  PfResult res;
  Eigen::SparseLU<SparseMat> lu;
  while (true) {
    CVec v = voltages();
    CVec ibus = net.ybus * v;
    CVec s = v.cwiseProduct(ibus.conjugate());
    Vec f = mismatch(s);
    res.mismatch = f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0;
    if (res.mismatch <= opts.tol) {
      res.converged = true;
      break;
    }
    if (res.iterations >= opts.max_iter) break;

    // dS/dVa and dS/dVm, element by element over the admittance pattern.
    std::vector<Eigen::Triplet<double>> trips;
    auto put = [&](int bus_row, int k, Complex ds_dva, Complex ds_dvm) {
      const int rp = col_va[bus_row];  // P rows share the angle ordering
      const int rq = col_vm[bus_row] >= 0 ? col_vm[bus_row] : -1;
      if (rp >= 0) {
        if (col_va[k] >= 0) trips.emplace_back(rp, col_va[k], ds_dva.real());
        if (col_vm[k] >= 0) trips.emplace_back(rp, col_vm[k], ds_dvm.real());
      }
      if (rq >= 0) {
        if (col_va[k] >= 0) trips.emplace_back(rq, col_va[k], ds_dva.imag());
        if (col_vm[k] >= 0) trips.emplace_back(rq, col_vm[k], ds_dvm.imag());
      }
    };
    const Complex j(0.0, 1.0);
    for (int k = 0; k < net.ybus.outerSize(); ++k) {
      const Complex vn_k = v[k] / vm[k];
      for (ComplexSparse::InnerIterator it(net.ybus, k); it; ++it) {
        const int i = static_cast<int>(it.row());
        const Complex y = it.value();
        Complex dva = -j * v[i] * std::conj(y * v[k]);
        Complex dvm = v[i] * std::conj(y * vn_k);
        if (i == k) {
          dva += j * v[i] * std::conj(ibus[i]);
          dvm += std::conj(ibus[i]) * vn_k;
        }
        put(i, k, dva, dvm);
      }
    }
    SparseMat jac(npvpq + npq, npvpq + npq);
    jac.setFromTriplets(trips.begin(), trips.end());
    lu.compute(jac);
    if (lu.info() != Eigen::Success) break;
    Vec dx = lu.solve(-f);
    ++res.iterations;
    for (int r = 0; r < npvpq; ++r) va[sets.pvpq[r]] += dx[r];
    for (int r = 0; r < npq; ++r) vm[sets.pq[r]] += dx[npvpq + r];
  }
  res.vm = vm;
  res.va = va;
  return res;
}

}  // namespace opflab
