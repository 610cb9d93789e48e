#include <doctest.h>

#include <fstream>
#include <random>

#include <json.hpp>

#include "opflab/ipm.hpp"
#include "support.hpp"

using namespace opflab;

namespace {

// min 0.5 |x - c|^2  s.t.  A x = b,  l <= x <= u.
class QpProblem : public NlpProblem {
 public:
  QpProblem(Vec c, Eigen::MatrixXd a, Vec b, Vec l, Vec u, double scale = 1.0)
      : NlpProblem(std::move(l), std::move(u), static_cast<int>(a.rows())),
        c_(std::move(c)), a_(std::move(a)), b_(std::move(b)), scale_(scale) {}

  double objective(const Vec& x) const override { return 0.5 * scale_ * (x - c_).squaredNorm(); }
  Vec gradient(const Vec& x) const override { return scale_ * (x - c_); }
  Vec constraints(const Vec& x) const override { return a_ * x - b_; }
  SparseMat jacobian(const Vec&) const override { return a_.sparseView(0.0, 0.0); }
  SparseMat hessian(const Vec&, const Vec&, double obj_factor) const override {
    SparseMat h(n(), n());
    for (int i = 0; i < n(); ++i) h.insert(i, i) = obj_factor * scale_;
    return h;
  }
  std::unique_ptr<NlpProblem> clone() const override { return std::make_unique<QpProblem>(*this); }

 private:
  Vec c_;
  Eigen::MatrixXd a_;
  Vec b_;
  double scale_;
};

QpProblem box_qp(Vec c, Vec l, Vec u, double scale = 1.0) {
  return QpProblem(std::move(c), Eigen::MatrixXd(0, l.size()), Vec(0), std::move(l), std::move(u), scale);
}

double reference_objective(const std::string& name) {
  std::ifstream in(testing::data_dir() / "fixtures" / "reference_objectives.json");
  return nlohmann::json::parse(in).at("cases").at(name).at("objective").get<double>();
}

void check_log_invariants(const SolveResult& r) {
  double mu = std::numeric_limits<double>::infinity();
  for (const auto& l : r.log) {
    CHECK(l.min_slack > 0.0);
    CHECK(l.mu <= mu);
    mu = l.mu;
  }
}

}  // namespace

TEST_SUITE("ipm") {

TEST_CASE("default start") {
  Vec l(3), u(3);
  l << 0.94, -kInfBound * 10, 0.0;
  u << 1.06, kInfBound * 10, 2.0;
  auto p = box_qp(Vec::Zero(3), l, u);
  IpmState s = default_start(p);
  CHECK(s.x[0] == doctest::Approx(1.0));
  CHECK(s.x[1] == 0.0);
  CHECK(s.x[2] == 1.0);
  CHECK(s.z_l[1] == 0.0);
  CHECK(s.z_u[1] == 0.0);
  CHECK(s.z_l[0] == 1.0);
  CHECK(s.z_u[2] == 1.0);
  CHECK(s.mu == 0.1);
  CHECK(s.lambda.size() == 0);
}

TEST_CASE("one-sided bound uses the clipped midpoint") {
  Vec l(1), u(1);
  l << 0.0;
  u << std::numeric_limits<double>::infinity();
  auto p = box_qp(Vec::Zero(1), l, u);
  CHECK(default_start(p).x[0] == 5e9);
}

TEST_CASE("centrality") {
  Vec l(1), u(1);
  l << 0.0;
  u << 2.0;
  auto p = box_qp(Vec::Zero(1), l, u);
  IpmState s = default_start(p);
  Centrality c = centrality(s, p);
  CHECK(c.mu_bar == 1.0);
  CHECK(c.lower_products[0] == 1.0);
  s.x[0] = 1e-9;
  CHECK(centrality(s, p).lower_products[0] == doctest::Approx(1e-9));
}

TEST_CASE("bound push") {
  Vec l(3), u(3);
  l << 0.0, 0.0, -5.0;
  u << 1.0, 1.0, 5.0;
  auto p = box_qp(Vec::Zero(3), l, u);
  IpmState s = default_start(p);
  s.x << 0.0, 0.5, -5.0;
  IpmState a = apply_bound_push(s, p, 1e-2);
  CHECK(a.x[0] == 1e-2);
  CHECK(a.x[1] == 0.5);
  CHECK(a.x[2] == doctest::Approx(-5.0 + 5e-2));
  IpmState w = apply_bound_push(s, p, 1e-20);
  CHECK(w.x[0] == 1e-20);
  CHECK(w.x[2] > -5.0);
  CHECK(w.x[2] - (-5.0) <= 1e-15);

  IpmState mid = default_start(p);
  for (double push : {1e-20, 1e-2, 0.25, 0.49}) CHECK(apply_bound_push(mid, p, push).x == mid.x);

  s.z_l.setZero();
  CHECK(apply_bound_push(s, p, 1e-2).z_l.minCoeff() == 1e-2);
  CHECK_THROWS(apply_bound_push(s, p, 0.0));
  CHECK_THROWS(apply_bound_push(s, p, 0.5));
}

TEST_CASE("kkt residual") {
  Vec l = Vec::Zero(4), u = Vec::Constant(4, 3.0);
  auto p = box_qp(Vec::Zero(4), l, u, 0.0);
  KktResidual r = kkt_residual(default_start(p), p);
  CHECK(r.stationarity == 0.0);
  CHECK(r.primal == 0.0);
  CHECK(r.compl_zero == 1.5);
  CHECK(r.compl_mu == doctest::Approx(1.4));

  SUBCASE("linear in lambda") {
    Eigen::MatrixXd a(2, 4);
    a << 1, 2, -3, 0.5, 0, 1, 1, -4;
    Vec b(2);
    b << 1, 2;
    QpProblem q(Vec::Ones(4), a, b, l, u);
    IpmState s = default_start(q);
    const double base = kkt_residual(s, q).stationarity;
    for (int i = 0; i < 2; ++i) {
      IpmState t = s;
      t.lambda[i] += 0.3;
      CHECK(std::abs(kkt_residual(t, q).stationarity - base) <= a.row(i).cwiseAbs().maxCoeff() * 0.3 + 1e-15);
    }
  }
}

TEST_CASE("box QP") {
  Vec c(3), l(3), u(3);
  c << 2.0, -1.0, 0.3;
  l << 0.0, 0.0, 0.0;
  u << 1.0, 1.0, 1.0;
  auto p = box_qp(c, l, u);
  IpmOptions o;
  SolveResult r = solve(p, default_start(p), o);
  REQUIRE(r.converged());
  CHECK(r.state.x[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.state.x[1] == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(r.state.x[2] == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(r.state.z_u[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(r.state.z_l[1] == doctest::Approx(1.0).epsilon(1e-4));
  check_log_invariants(r);
  CHECK(scaled_kkt_error(r.state, p, 0.0) <= o.tol);
}

TEST_CASE("equality QP with a known solution") {
  std::mt19937_64 rng(8);
  const int n = 6;
  Eigen::MatrixXd a(2, n);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = testing::uniform(rng, -1, 1);
  Vec c(n), b(2);
  for (int i = 0; i < n; ++i) c[i] = testing::uniform(rng, -1, 1);
  b << 0.2, -0.1;
  // minimizer of 0.5|x-c|^2 on Ax=b
  Eigen::MatrixXd aat = a * a.transpose();
  Vec nu = aat.ldlt().solve(a * c - b);
  Vec xs = c - a.transpose() * nu;
  QpProblem p(c, a, b, Vec::Constant(n, -10.0), Vec::Constant(n, 10.0));
  SolveResult r = solve(p, default_start(p));
  REQUIRE(r.converged());
  CHECK((r.state.x - xs).lpNorm<Eigen::Infinity>() <= 1e-5);
  // stationarity sign: x - c + A^T lambda = 0
  CHECK((r.state.lambda - nu).lpNorm<Eigen::Infinity>() <= 1e-4);
  check_log_invariants(r);
}

TEST_CASE("start must be strictly interior") {
  Vec l = Vec::Zero(1), u = Vec::Ones(1);
  auto p = box_qp(Vec::Zero(1), l, u);
  IpmState s = default_start(p);
  s.x[0] = 0.0;
  CHECK_THROWS_AS(solve(p, s), std::invalid_argument);
  s.x[0] = 0.5;
  s.z_l[0] = 0.0;
  CHECK_THROWS_AS(solve(p, s), std::invalid_argument);
}

TEST_CASE("options validation") {
  IpmOptions o;
  CHECK_NOTHROW(o.validate());
  o.mu_linear_factor = 1.0;
  CHECK_THROWS(o.validate());
  o = {};
  o.mu_superlinear_power = 1.0;
  CHECK_THROWS(o.validate());
  o = {};
  o.fraction_to_boundary = 1.0;
  CHECK_THROWS(o.validate());
}

TEST_CASE("cold solves of the bundled cases") {
  for (const char* name : {"case9", "case14", "case30"}) {
    CAPTURE(name);
    auto net = testing::load(name);
    auto p = assemble_nlp(net, nominal_loads(*net));
    IpmOptions o;
    SolveResult r = solve(p, default_start(p), o);
    REQUIRE(r.converged());
    CHECK(testing::rel_err(r.objective, reference_objective(name)) <= 1e-4);
    check_log_invariants(r);
    KktResidual k = kkt_residual(r.state, p);
    CHECK(k.compl_zero <= 10 * o.tol);
    CHECK(k.primal <= o.tol);
    CHECK(r.state.z_l.minCoeff() >= 0.0);
    CHECK(r.state.z_u.minCoeff() >= 0.0);
    CHECK(scaled_kkt_error(r.state, p, 0.0) <= o.tol);
  }
}

TEST_CASE("sparse backend agrees with the dense one") {
  auto net = testing::load("case14");
  auto p = assemble_nlp(net, nominal_loads(*net));
  IpmOptions o;
  o.linear_solver = KktBackend::sparse;
  SolveResult r = solve(p, default_start(p), o);
  REQUIRE(r.converged());
  CHECK(testing::rel_err(r.objective, reference_objective("case14")) <= 1e-6);
}

TEST_CASE("determinism") {
  auto net = testing::load("case30");
  auto p = assemble_nlp(net, nominal_loads(*net));
  SolveResult a = solve(p, default_start(p));
  SolveResult b = solve(p, default_start(p));
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].objective == b.log[i].objective);
    CHECK(a.log[i].mu == b.log[i].mu);
    CHECK(a.log[i].alpha_primal == b.log[i].alpha_primal);
  }
  CHECK(a.state.x == b.state.x);
}

TEST_CASE("full oracle state restarts quickly") {
  auto net = testing::load("case9");
  auto p = assemble_nlp(net, nominal_loads(*net));
  IpmOptions o;
  SolveResult cold = solve(p, default_start(p), o);
  REQUIRE(cold.converged());
  IpmState warm = apply_bound_push(cold.state, p, o.warm_bound_push);
  SolveResult r = solve(p, warm, o);
  CHECK(r.converged());
  CHECK(r.iterations <= cold.iterations / 4);
}

TEST_CASE("midpoint maximizes the minimum slack") {
  std::mt19937_64 rng(99);
  for (const char* name : {"case9", "case14", "case30"}) {
    auto net = testing::load(name);
    auto p = assemble_nlp(net, nominal_loads(*net));
    const double mid = min_slack(default_start(p).x, p);
    for (int t = 0; t < 1000; ++t) {
      Vec x(p.n());
      for (int i = 0; i < p.n(); ++i) {
        const double l = p.lower()[i], u = p.upper()[i];
        x[i] = (finite_lower(l) && finite_upper(u)) ? (l == u ? l : testing::uniform(rng, l, u))
                                                     : testing::uniform(rng, -1, 1);
      }
      CHECK(min_slack(x, p) <= mid);
    }
  }
}

}  // TEST_SUITE
