#include <doctest.h>

#include <fstream>
#include <numeric>
#include <sstream>

#include "opflab/bench.hpp"
#include "support.hpp"

using namespace opflab;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  std::shared_ptr<const NetworkModel> net = testing::load("case9");
  Dataset ds = build_dataset(net, {30, 0, 6}, 5, ExtractOptions{});
  PredictorModel model = fit(*net, ds.train, compute_norm_stats(ds.train), PredictorConfig{});
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("opflab_bench_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("config parsing") {
  BenchConfig c = BenchConfig::parse(
      "# comment line\n"
      "case = case14   # trailing comment\n"
      "seed = 99\n"
      "train = 20\n"
      "test = 4\n"
      "tol = 1e-4\n"
      "strategies = blend(0.5), hybrid(0.02,midpoint), selective(va+vm)\n"
      "predictor = ridge(0.01)\n"
      "screen_grid = 0.01, 0.05\n"
      "linear_solver = sparse\n");
  CHECK(c.case_id == "case14");
  CHECK(c.seed == 99);
  CHECK(c.sizes.train == 20);
  CHECK(c.sizes.val == 50);
  CHECK(c.sizes.test == 4);
  CHECK(c.extract.ipm.tol == 1e-4);
  REQUIRE(c.strategies.size() == 3);
  CHECK(c.strategies[1].name() == "hybrid(0.02,midpoint)");
  CHECK(c.predictor.backend == PredictorBackend::ridge);
  CHECK(c.grids.screen == std::vector<double>{0.01, 0.05});
  CHECK(c.extract.ipm.linear_solver == KktBackend::sparse);

  BenchConfig again = BenchConfig::parse(c.to_text());
  CHECK(again.to_text() == c.to_text());

  CHECK_THROWS(BenchConfig::parse("colour = blue\n"));
  CHECK_THROWS(BenchConfig::parse("just some words\n"));
  CHECK_THROWS(BenchConfig::parse("tol = fast\n"));
  CHECK_THROWS(BenchConfig::parse("strategies = blend(2)\n"));
}

TEST_CASE("baseline and ceiling are always present") {
  BenchConfig c;
  CHECK(c.effective_strategies().size() == 2);
  c.strategies = {WarmStartSpec::parse("predicted"), WarmStartSpec::parse("midpoint"),
                  WarmStartSpec::parse("oracle_pd(lambda_z_mu)"), WarmStartSpec::parse("predicted")};
  auto eff = c.effective_strategies();
  REQUIRE(eff.size() == 3);
  CHECK(eff[0].name() == "midpoint");
  CHECK(eff[1].name() == "predicted");
  CHECK(eff[2].name() == "oracle_pd(lambda_z_mu)");
}

TEST_CASE("reduction arithmetic") {
  CHECK(reduction(22.6, 3.3) == doctest::Approx(0.854).epsilon(1e-3));
  CHECK(reduction(10.0, 10.0) == 0.0);
  CHECK(reduction(0.0, 3.0) == 0.0);
}

TEST_CASE("single baseline row") {
  auto& f = fixture();
  auto rows = evaluate_strategies({WarmStartSpec::parse("midpoint")}, f.net, f.ds, nullptr, ExtractOptions{});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].reduction == 0.0);
  CHECK(rows[0].convergence_rate == 1.0);
  for (size_t i = 0; i < f.ds.test.size(); ++i) CHECK(rows[0].iterations[i] == f.ds.test[i].cold_iterations);
}

TEST_CASE("protocol report") {
  auto& f = fixture();
  BenchConfig c;
  c.strategies = {WarmStartSpec::parse("oracle_primal"), WarmStartSpec::parse("predicted")};
  BenchReport rep = run_protocol(c, f.net, f.ds, &f.model);
  REQUIRE(rep.rows.size() == 4);
  CHECK(rep.instances.size() == f.ds.test.size());
  CHECK(rep.predictor == "knn(5)");
  CHECK_FALSE(rep.prediction_metrics.empty());
  for (const auto& r : rep.rows) {
    CHECK(r.iterations.size() == rep.instances.size());
    const double sum = std::accumulate(r.iterations.begin(), r.iterations.end(), 0.0);
    CHECK(r.mean == sum / r.iterations.size());
    CHECK(r.reduction == reduction(rep.rows[0].mean, r.mean));
  }
  CHECK(rep.rows.back().mean < rep.rows.front().mean);

  const std::string md = report_markdown(rep);
  for (const char* col : {"Method", "Mean iters", "Median", "Reduction"}) CHECK(md.find(col) != std::string::npos);

  SUBCASE("emission is byte-stable") {
    const fs::path a = scratch("a"), b = scratch("b");
    auto files = emit_report(rep, a);
    emit_report(run_protocol(c, f.net, f.ds, &f.model), b);
    CHECK(files.size() == 3);
    for (const auto& p : files) CHECK(slurp(p) == slurp(b / p.filename()));
    fs::remove_all(a);
    fs::remove_all(b);
  }
  SUBCASE("single-row outputs") {
    BenchReport one = rep;
    one.rows.resize(1);
    one.prediction_metrics.clear();
    const fs::path dir = scratch("one");
    emit_report(one, dir);
    std::string csv = slurp(dir / "report.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
    CHECK(slurp(dir / "report.md").find("midpoint") != std::string::npos);
    CHECK(slurp(dir / "report.json").find("\"midpoint\"") != std::string::npos);
    fs::remove_all(dir);
  }
}

TEST_CASE("blend sweep endpoints") {
  auto& f = fixture();
  BenchConfig c;
  c.grids.blend = {0.5};
  SweepTable t = sweep(c, f.net, f.ds, f.model, SweepKind::blend);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows.front().parameter == 0.0);
  CHECK(t.rows.back().parameter == 1.0);
  CHECK(t.rows.front().row.iterations == t.cold.iterations);
  auto primal = evaluate_strategies({WarmStartSpec::parse("midpoint"), WarmStartSpec::parse("predicted_primal")},
                                    f.net, f.ds, &f.model, c.extract);
  CHECK(t.rows.back().row.iterations == primal[1].iterations);
  CHECK(sweep_markdown(t).find("Mean iters") != std::string::npos);
}

TEST_CASE("screening sweep removes fewer bounds as the margin grows") {
  auto& f = fixture();
  BenchConfig c;
  SweepTable t = sweep(c, f.net, f.ds, f.model, SweepKind::screening);
  REQUIRE(t.rows.size() == 4);
  for (size_t i = 1; i < t.rows.size(); ++i)
    CHECK(t.rows[i].row.removed_fraction <= t.rows[i - 1].row.removed_fraction);
  CHECK(parse_sweep_kind("retraction") == SweepKind::retraction);
  CHECK_THROWS(parse_sweep_kind("zigzag"));
  BenchConfig empty;
  empty.grids.retract.clear();
  CHECK_THROWS(sweep(empty, f.net, f.ds, f.model, SweepKind::retraction));
}

TEST_CASE("missing inputs give instructive errors") {
  BenchConfig c;
  c.out_dir = scratch("nothing").string();
  try {
    run_protocol(c);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("opflab extract") != std::string::npos);
  }
  auto& f = fixture();
  write_dataset(c.out_dir, f.ds);
  c.strategies = {WarmStartSpec::parse("predicted")};
  try {
    run_protocol(c);
    FAIL("expected an error");
  } catch (const MissingInputError& e) {
    CHECK(std::string(e.what()).find("opflab fit") != std::string::npos);
  }
  fs::remove_all(c.out_dir);
}

TEST_CASE("case resolution") {
  CHECK(resolve_case_path("case9") == testing::case_path("case9"));
  CHECK(resolve_case_path(testing::case_path("case14")) == testing::case_path("case14"));
  CHECK_THROWS(load_network("case99999"));
}

}  // TEST_SUITE
