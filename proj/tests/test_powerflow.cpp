#include <doctest.h>

#include <complex>

#include "opflab/labels.hpp"
#include "opflab/powerflow.hpp"
#include "support.hpp"

using namespace opflab;
using cplx = std::complex<double>;

namespace {

// Dense Newton-Raphson with a finite-difference Jacobian.
struct DenseNr {
  Vec vm, va;
  bool converged = false;
};

DenseNr dense_nr(const NetworkModel& net, const LoadProfile& loads) {
  const int nb = net.n_bus();
  Eigen::MatrixXcd Y(net.ybus);
  Vec p_spec(nb), q_spec(nb), vm = Vec::Ones(nb), va = Vec::Zero(nb);
  for (int i = 0; i < nb; ++i) {
    p_spec[i] = -loads.pd[i];
    q_spec[i] = -loads.qd[i];
  }
  std::vector<char> has_gen(nb, 0);
  for (const auto& g : net.gens) {
    p_spec[g.bus] += g.pg0;
    q_spec[g.bus] += g.qg0;
    if (!has_gen[g.bus]) vm[g.bus] = g.vg;
    has_gen[g.bus] = 1;
  }
  std::vector<int> ang, mag;
  for (int i = 0; i < nb; ++i) {
    if (net.buses[i].type != BusType::slack) ang.push_back(i);
    if (net.buses[i].type == BusType::pq) mag.push_back(i);
  }
  const int nu = static_cast<int>(ang.size() + mag.size());
  auto residual = [&](const Vec& vm_, const Vec& va_) {
    Eigen::VectorXcd V(nb);
    for (int i = 0; i < nb; ++i) V[i] = std::polar(vm_[i], va_[i]);
    Eigen::VectorXcd S = V.array() * (Y * V).conjugate().array();
    Vec r(nu);
    int k = 0;
    for (int i : ang) r[k++] = S[i].real() - p_spec[i];
    for (int i : mag) r[k++] = S[i].imag() - q_spec[i];
    return r;
  };
  auto apply = [&](Vec& vm_, Vec& va_, const Vec& d) {
    int k = 0;
    for (int i : ang) va_[i] += d[k++];
    for (int i : mag) vm_[i] += d[k++];
  };
  DenseNr out;
  for (int it = 0; it < 30; ++it) {
    Vec r = residual(vm, va);
    if (r.lpNorm<Eigen::Infinity>() < 1e-11) {
      out.converged = true;
      break;
    }
    Eigen::MatrixXd J(nu, nu);
    for (int c = 0; c < nu; ++c) {
      Vec e = Vec::Zero(nu);
      e[c] = 1e-7;
      Vec vp = vm, ap = va, vq = vm, aq = va;
      apply(vp, ap, e);
      apply(vq, aq, -e);
      J.col(c) = (residual(vp, ap) - residual(vq, aq)) / 2e-7;
    }
    apply(vm, va, J.fullPivLu().solve(-r));
  }
  out.vm = vm;
  out.va = va;
  return out;
}

}  // namespace

TEST_SUITE("powerflow") {

TEST_CASE("two-bus zero load converges at flat") {
  auto net = testing::two_bus(0.0, 0.1, 0.0);
  PfResult r = solve_pf(*net, nominal_loads(*net));
  CHECK(r.converged);
  CHECK(r.iterations <= 1);
  CHECK(r.vm[1] == doctest::Approx(1.0));
  CHECK(r.va[1] == doctest::Approx(0.0));
}

TEST_CASE("bundled cases against a dense NR oracle") {
  for (const char* name : {"case9", "case14", "case30"}) {
    CAPTURE(name);
    auto net = testing::load(name);
    PfResult r = solve_pf(*net, nominal_loads(*net));
    REQUIRE(r.converged);
    CHECK(r.iterations <= 10);
    CHECK(r.mismatch <= 1e-8);
    DenseNr o = dense_nr(*net, nominal_loads(*net));
    REQUIRE(o.converged);
    CHECK((r.vm - o.vm).lpNorm<Eigen::Infinity>() <= 1e-7);
    CHECK((r.va - o.va).lpNorm<Eigen::Infinity>() <= 1e-7);
  }
}

TEST_CASE("solution satisfies the OPF balance at PQ buses") {
  auto net = testing::load("case14");
  auto loads = nominal_loads(*net);
  PfResult r = solve_pf(*net, loads);
  REQUIRE(r.converged);
  auto p = assemble_nlp(net, loads);
  const auto& v = p.vars();
  Vec x = Vec::Zero(p.n());
  x.segment(v.va.offset, v.n_bus) = r.va;
  x.segment(v.vm.offset, v.n_bus) = r.vm;
  for (int j = 0; j < v.n_gen; ++j) x[v.pg.offset + j] = net->gens[j].pg0;
  Vec h = eval_balance(x, *net, loads);
  for (int i = 0; i < v.n_bus; ++i)
    if (net->buses[i].type == BusType::pq) {
      CHECK(std::abs(h[i]) <= 1e-8);
      bool gen_here = false;
      for (const auto& g : net->gens) gen_here |= g.bus == i;
      if (!gen_here) CHECK(std::abs(h[v.n_bus + i]) <= 1e-8);
    }
}

TEST_CASE("dc initialization never costs iterations") {
  for (const char* name : {"case9", "case14", "case30"}) {
    CAPTURE(name);
    auto net = testing::load(name);
    for (const auto& inst : generate_instances(*net, 20, 3)) {
      auto loads = instance_loads(*net, inst.factors);
      PfResult flat = solve_pf(*net, loads, PfInit::flat());
      PfResult dc = solve_pf(*net, loads, PfInit::dc());
      REQUIRE(flat.converged);
      REQUIRE(dc.converged);
      CHECK(dc.iterations <= flat.iterations);
    }
  }
}

TEST_CASE("exact solution is a fixed point") {
  for (const char* name : {"case9", "case14", "case30"}) {
    auto net = testing::load(name);
    PfResult r = solve_pf(*net, nominal_loads(*net));
    PfResult again = solve_pf(*net, nominal_loads(*net), PfInit::custom(r.vm, r.va));
    CHECK(again.converged);
    CHECK(again.iterations <= 1);
  }
}

TEST_CASE("dc angles") {
  SUBCASE("zero loads") {
    auto net = testing::two_bus(0.0, 0.1, 0.0);
    CHECK(dc_angles(*net, nominal_loads(*net)).lpNorm<Eigen::Infinity>() == 0.0);
  }
  SUBCASE("two-bus transfer") {
    auto net = testing::two_bus(0.0, 0.1, 0.0, 100.0);
    Vec th = dc_angles(*net, nominal_loads(*net));
    CHECK(th[0] == 0.0);
    CHECK(th[0] - th[1] == doctest::Approx(0.1).epsilon(1e-12));
  }
  SUBCASE("linear-solve residual") {
    for (const char* name : {"case9", "case14", "case30"}) {
      auto net = testing::load(name);
      auto loads = nominal_loads(*net);
      Vec th = dc_angles(*net, loads);
      Vec r = dc_bprime(*net) * th - dc_injections(*net, loads);
      // the slack row absorbs the imbalance
      r[net->slack_index] = 0.0;
      CHECK(r.lpNorm<Eigen::Infinity>() <= 1e-10);
      CHECK(th[net->slack_index] == 0.0);
    }
  }
  SUBCASE("islanded network") {
    RawCase raw = parse_case(testing::two_bus_text(0.0, 0.1, 0.0));
    raw.branches[0].in_service = false;
    NetworkModel net = build_network(raw);
    CHECK_THROWS_AS(dc_angles(net, nominal_loads(net)), SingularNetworkError);
  }
}

}  // TEST_SUITE
