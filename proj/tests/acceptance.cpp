// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "opflab/bench.hpp"
#include "opflab/powerflow.hpp"

using namespace opflab;
namespace fs = std::filesystem;

namespace {

constexpr double kJacobianTol = 1e-6;
constexpr double kHessianTol = 1e-5;
constexpr double kFdStep = 1e-6;
constexpr double kDerivativeSeconds = 10.0;
constexpr double kObjectiveRelTol = 1e-4;
constexpr double kOracleMinReduction = 0.5;
constexpr double kOracleSeconds = 120.0;
constexpr double kPrimalOnlyRatio = 0.9;
constexpr double kRetractionSlack = 1e-9;
constexpr double kScreenRemovedMin = 0.5;
constexpr int kPfMaxIterations = 10;
constexpr int kSlackSamples = 1000;
constexpr std::uint64_t kSeed = 7;
const std::vector<std::string> kCases = {"case9", "case14", "case30"};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

int failures = 0;

void report(int id, bool ok, const std::string& title, const std::string& detail) {
  std::printf("%s %2d %s: %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec random_interior(const NlpProblem& p, std::mt19937_64& rng) {
  Vec x(p.n());
  for (int i = 0; i < p.n(); ++i) {
    const double l = p.lower()[i], u = p.upper()[i];
    if (l == u) x[i] = l;
    else if (finite_lower(l) && finite_upper(u)) x[i] = uniform(rng, l + 0.05 * (u - l), u - 0.05 * (u - l));
    else x[i] = uniform(rng, -0.5, 0.5);
  }
  return x;
}

double max_rel(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  double e = 0.0;
  for (int i = 0; i < got.rows(); ++i)
    for (int j = 0; j < got.cols(); ++j) e = std::max(e, rel_err(got(i, j), want(i, j)));
  return e;
}

void derivatives() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double jerr = 0.0, herr = 0.0;
  for (const char* name : {"case9", "case14"}) {
    auto net = load_network(name);
    for (FlowMode mode : {FlowMode::omit, FlowMode::slack}) {
      FlowLimits fl = mode == FlowMode::slack ? FlowLimits::slack(*net, FlowEnds::both) : FlowLimits::omit();
      auto p = assemble_nlp(net, nominal_loads(*net), fl);
      for (int t = 0; t < 20; ++t) {
        const Vec x = random_interior(p, rng);
        Vec lambda(p.m());
        for (int i = 0; i < p.m(); ++i) lambda[i] = uniform(rng, -50.0, 50.0);
        Eigen::MatrixXd jfd(p.m(), p.n()), hfd(p.n(), p.n());
        for (int i = 0; i < p.n(); ++i) {
          Vec a = x, b = x;
          a[i] += kFdStep;
          b[i] -= kFdStep;
          jfd.col(i) = (p.constraints(a) - p.constraints(b)) / (2 * kFdStep);
          const Vec ga = p.gradient(a) + p.jacobian(a).transpose() * lambda;
          const Vec gb = p.gradient(b) + p.jacobian(b).transpose() * lambda;
          hfd.col(i) = (ga - gb) / (2 * kFdStep);
        }
        jerr = std::max(jerr, max_rel(Eigen::MatrixXd(p.jacobian(x)), jfd));
        herr = std::max(herr, max_rel(Eigen::MatrixXd(p.hessian(x, lambda)), hfd));
      }
    }
  }
  const double secs = seconds_since(t0);
  report(1, jerr <= kJacobianTol && herr <= kHessianTol && secs < kDerivativeSeconds, "derivative correctness",
         "max rel err jacobian " + fmt("%.2e", jerr) + " (<= 1e-6), hessian " + fmt("%.2e", herr) +
             " (<= 1e-5), " + fmt("%.2f", secs) + " s (< 10 s)");
}

double reference_objective(const std::string& name) {
  std::ifstream in(fs::path(OPFLAB_DATA_DIR) / "fixtures" / "reference_objectives.json");
  return nlohmann::json::parse(in).at("cases").at(name).at("objective").get<double>();
}

struct CaseRun {
  std::shared_ptr<const NetworkModel> net;
  Dataset ds;
  PredictorModel model;
  std::map<std::string, StrategyRow> rows;
  double oracle_seconds = 0.0;
  fs::path dir;
};

const StrategyRow& row(const CaseRun& c, const std::string& name) { return c.rows.at(name); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    if (!fs::exists(b / f) || slurp(a / f) != slurp(b / f)) {
      why = f.string() + " differs";
      return false;
    }
  why = std::to_string(files.size()) + " files identical";
  return !files.empty();
}

CaseRun run_case(const std::string& name, const fs::path& root) {
  CaseRun c;
  c.net = load_network(name);
  c.dir = root / "a";
  c.ds = build_dataset(c.net, SplitSizes{}, kSeed, ExtractOptions{});
  write_dataset(c.dir, c.ds);
  c.model = fit(*c.net, c.ds.train, compute_norm_stats(c.ds.train), PredictorConfig::parse("knn(5)"));

  const std::vector<std::string> oracle = {"midpoint", "oracle_pd(lambda)", "oracle_pd(lambda_z)",
                                           "oracle_pd(lambda_z_mu)"};
  const std::vector<std::string> others = {"midpoint", "oracle_primal", "oracle_primal_cold_duals", "predicted",
                                           "predicted_primal"};
  auto evaluate = [&](const std::vector<std::string>& names) {
    std::vector<WarmStartSpec> specs;
    for (const auto& n : names) specs.push_back(WarmStartSpec::parse(n));
    for (auto& r : evaluate_strategies(specs, c.net, c.ds, &c.model, ExtractOptions{})) c.rows[r.method] = r;
  };
  const auto t0 = Clock::now();
  evaluate(oracle);
  c.oracle_seconds = seconds_since(t0);
  evaluate(others);
  return c;
}

std::string mean_of(const CaseRun& c, const std::string& name) { return fmt("%.2f", row(c, name).mean); }

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "opflab_acceptance";
  fs::remove_all(root);
  const auto t_start = Clock::now();

  derivatives();

  std::map<std::string, CaseRun> runs;
  for (const auto& name : kCases) runs[name] = run_case(name, root / name);

  {
    bool ok = true;
    std::string detail;
    for (const auto& name : kCases) {
      const CaseRun& c = runs[name];
      auto p = assemble_nlp(c.net, nominal_loads(*c.net));
      SolveResult r = solve(p, default_start(p), IpmOptions{});
      const double err = rel_err(r.objective, reference_objective(name));
      const double rate = row(c, "midpoint").convergence_rate;
      ok &= r.converged() && err <= kObjectiveRelTol && rate == 1.0 && c.ds.test.size() == 50;
      detail += name + " converged " + fmt("%.0f%%", 100 * rate) + " of " + std::to_string(c.ds.test.size()) +
                ", objective rel err " + fmt("%.1e", err) + "; ";
    }
    report(2, ok, "cold-solve validity", detail + "tol 1e-6, reference rel tol 1e-4");
  }

  {
    bool ok = true;
    double secs = 0.0;
    std::string detail;
    for (const auto& name : kCases) {
      const CaseRun& c = runs[name];
      const double cold = row(c, "midpoint").mean;
      const double l = row(c, "oracle_pd(lambda)").mean, lz = row(c, "oracle_pd(lambda_z)").mean,
                   lzm = row(c, "oracle_pd(lambda_z_mu)").mean;
      const double red = reduction(cold, lzm);
      ok &= lzm <= lz && lz <= l && l < cold && red >= kOracleMinReduction;
      secs += c.oracle_seconds;
      detail += name + " lzm " + fmt("%.2f", lzm) + " <= lz " + fmt("%.2f", lz) + " <= l " + fmt("%.2f", l) +
                " < cold " + fmt("%.2f", cold) + " (reduction " + fmt("%.0f%%", 100 * red) + "); ";
    }
    ok &= secs < kOracleSeconds;
    report(3, ok, "oracle hierarchy", detail + fmt("%.1f s (< 120 s)", secs));
  }

  {
    bool ok = true;
    std::string detail;
    for (const auto& name : kCases) {
      const CaseRun& c = runs[name];
      const double cold = row(c, "midpoint").mean;
      const StrategyRow& primal = row(c, "oracle_primal");
      const StrategyRow& cd = row(c, "oracle_primal_cold_duals");
      const bool a = primal.mean >= kPrimalOnlyRatio * cold;
      const bool b = cd.mean > cold || cd.failures >= 1;
      ok &= a && b;
      detail += name + " primal/cold " + fmt("%.3f", primal.mean / cold) + " (>= 0.9), cold-duals " +
                fmt("%.2f", cd.mean) + " vs cold " + fmt("%.2f", cold) + " with " + std::to_string(cd.failures) +
                " failures; ";
    }
    report(4, ok, "primal-only failure", detail);
  }

  {
    bool ok = true;
    std::string detail;
    for (const auto& name : kCases) {
      const CaseRun& c = runs[name];
      BenchConfig cfg;
      cfg.case_id = name;
      cfg.grids.blend = {0.0, 1.0};
      SweepTable t = sweep(cfg, c.net, c.ds, c.model, SweepKind::blend);
      const auto& zero = t.rows.front();
      const auto& one = t.rows.back();
      const bool a = zero.parameter == 0.0 && zero.row.iterations == row(c, "midpoint").iterations;
      const bool b = one.parameter == 1.0 && one.row.iterations == row(c, "predicted_primal").iterations;
      ok &= a && b;
      detail += name + (a ? " alpha=0 matches cold" : " alpha=0 differs from cold") +
                (b ? ", alpha=1 matches prediction; " : ", alpha=1 differs from prediction; ");
    }
    report(5, ok, "blend endpoint identity", detail);
  }

  {
    bool ok = true;
    std::string detail;
    for (const auto& name : kCases) {
      const CaseRun& c = runs[name];
      BenchConfig cfg;
      cfg.case_id = name;
      SweepTable t = sweep(cfg, c.net, c.ds, c.model, SweepKind::screening);
      bool found = false;
      for (const auto& r : t.rows) {
        if (r.row.removed_fraction < kScreenRemovedMin) continue;
        found = true;
        ok &= r.row.mean >= t.cold.mean;
        detail += name + " margin " + fmt("%.3f", r.parameter) + " removed " +
                  fmt("%.0f%%", 100 * r.row.removed_fraction) + ", " + fmt("%.2f", r.row.mean) + " vs cold " +
                  fmt("%.2f", t.cold.mean) + "; ";
      }
      if (!found) detail += name + " no margin removed >= 50%; ";
      ok &= found;
    }
    report(6, ok, "screening degradation", detail);
  }

  {
    bool ok = true;
    int checked = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& name : kCases) {
      const CaseRun& c = runs[name];
      for (const auto& lab : c.ds.test) {
        auto p = instance_problem(c.net, lab.factors, c.ds.options);
        const Vec mid = default_start(*p).x;
        const Vec& l = p->lower();
        const Vec& u = p->upper();
        const Vec guess = predict(c.model, load_features(*c.net, lab.factors)).state.x;
        for (double target : {0.1, 0.5, 0.9}) {
          for (const Vec* x : {&guess, &lab.state.x}) {
            const Vec r = retract(*x, l, u, target, mid);
            for (int i = 0; i < p->n(); ++i) {
              if (!finite_lower(l[i]) || !finite_upper(u[i]) || !(l[i] < u[i])) continue;
              const double pm = (mid[i] - l[i]) * (u[i] - mid[i]);
              const double margin = (r[i] - l[i]) * (u[i] - r[i]) - (target * pm - kRetractionSlack);
              worst = std::min(worst, margin);
              ok &= margin >= 0.0;
              ++checked;
            }
          }
        }
      }
    }
    report(7, ok, "retraction contract",
           std::to_string(checked) + " components at targets 0.1/0.5/0.9, worst margin " + fmt("%.2e", worst) +
               " (>= 0)");
  }

  {
    const CaseRun& c = runs["case9"];
    const StrategyRow& pred = row(c, "predicted");
    const double cold = row(c, "midpoint").mean, lzm = row(c, "oracle_pd(lambda_z_mu)").mean;
    const bool ok = c.ds.train.size() == 500 && pred.convergence_rate == 1.0 && pred.mean < cold && pred.mean >= lzm;
    report(8, ok, "predictor value",
           "case9 knn(5) on " + std::to_string(c.ds.train.size()) + " labels: converged " +
               fmt("%.0f%%", 100 * pred.convergence_rate) + ", oracle " + fmt("%.2f", lzm) + " <= predicted " +
               fmt("%.2f", pred.mean) + " < cold " + fmt("%.2f", cold));
  }

  {
    bool ok = true;
    std::string detail;
    for (const auto& name : kCases) {
      const CaseRun& c = runs[name];
      size_t count = 0;
      try {
        Dataset back = read_dataset(c.dir, name, c.net, true);
        count = back.train.size() + back.val.size() + back.test.size();
      } catch (const std::exception& e) {
        ok = false;
        detail += name + " recheck failed: " + e.what() + "; ";
        continue;
      }
      const fs::path again = c.dir.parent_path() / "b";
      write_dataset(again, build_dataset(c.net, SplitSizes{}, kSeed, ExtractOptions{}));
      std::string why;
      const bool same = same_tree(c.dir, again, why);
      ok &= same && count == static_cast<size_t>(SplitSizes{}.total());
      detail += name + " " + std::to_string(count) + " labels rechecked, rerun " + why + "; ";
    }
    report(9, ok, "extraction integrity", detail);
  }

  {
    bool ok = true;
    int worst_flat = 0, instances = 0, dc_worse = 0, worst_exact = 0;
    for (const auto& name : kCases) {
      const CaseRun& c = runs[name];
      PfResult flat = solve_pf(*c.net, nominal_loads(*c.net), PfInit::flat());
      ok &= flat.converged;
      worst_flat = std::max(worst_flat, flat.iterations);
      PfResult exact = solve_pf(*c.net, nominal_loads(*c.net), PfInit::custom(flat.vm, flat.va));
      ok &= exact.converged;
      worst_exact = std::max(worst_exact, exact.iterations);
      for (const auto& lab : c.ds.test) {
        const LoadProfile loads = instance_loads(*c.net, lab.factors);
        PfResult f = solve_pf(*c.net, loads, PfInit::flat());
        PfResult d = solve_pf(*c.net, loads, PfInit::dc());
        ok &= f.converged && d.converged;
        dc_worse += d.iterations > f.iterations;
        ++instances;
      }
    }
    ok &= worst_flat <= kPfMaxIterations && dc_worse == 0 && worst_exact <= 1;
    report(10, ok, "power flow",
           "flat start at most " + std::to_string(worst_flat) + " iterations (<= 10), dc slower on " +
               std::to_string(dc_worse) + " of " + std::to_string(instances) +
               " instances, exact restart at most " + std::to_string(worst_exact) + " iteration(s)");
  }

  {
    bool ok = true;
    double closest = -std::numeric_limits<double>::infinity();
    std::mt19937_64 rng(99);
    for (const auto& name : kCases) {
      const CaseRun& c = runs[name];
      auto p = assemble_nlp(c.net, nominal_loads(*c.net));
      const double mid = min_slack(default_start(p).x, p);
      for (int t = 0; t < kSlackSamples; ++t) {
        Vec x(p.n());
        for (int i = 0; i < p.n(); ++i) {
          const double l = p.lower()[i], u = p.upper()[i];
          x[i] = (finite_lower(l) && finite_upper(u)) ? (l == u ? l : uniform(rng, l, u)) : uniform(rng, -1, 1);
        }
        const double s = min_slack(x, p);
        closest = std::max(closest, s - mid);
        ok &= s <= mid;
      }
    }
    report(11, ok, "midpoint min-slack maximality",
           std::to_string(kSlackSamples) + " samples per case, largest sample minus midpoint " +
               fmt("%.3e", closest) + " (<= 0)");
  }

  std::printf("total %.1f s, %d of 11 criteria failed\n", seconds_since(t_start), failures);
  fs::remove_all(root);
  return failures == 0 ? 0 : 1;
}
