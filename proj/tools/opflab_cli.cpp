#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "opflab/bench.hpp"
#include "opflab/powerflow.hpp"

using namespace opflab;

namespace {

struct Common {
  std::string case_id;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--case", c.case_id, "bundled case name (case9, case14, case30) or path to a .m file");
  cmd->add_option("--config", c.config_path, "key = value configuration file");
  cmd->add_option("--seed", c.seed, "instance generation seed");
  cmd->add_option("--out", c.out, "output root directory");
}

BenchConfig resolve(const Common& c) {
  BenchConfig cfg = c.config_path.empty() ? BenchConfig{} : BenchConfig::load(c.config_path);
  if (!c.case_id.empty()) cfg.case_id = c.case_id;
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path report_dir(const BenchConfig& cfg, const std::string& case_id) {
  return std::filesystem::path(cfg.out_dir) / "reports" / case_id;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AC-OPF interior-point warm-start laboratory"};
  app.require_subcommand(1);

  Common parse_c, solve_c, pf_c, extract_c, fit_c, bench_c, sweep_c;

  auto* parse_cmd = app.add_subcommand("parse", "parse and validate a case file");
  add_common(parse_cmd, parse_c);
  bool serialize = false;
  parse_cmd->add_flag("--serialize", serialize, "print the normalized case text");

  auto* solve_cmd = app.add_subcommand("solve", "solve the nominal-load AC-OPF");
  add_common(solve_cmd, solve_c);
  bool show_log = false;
  std::string start_name = "midpoint";
  solve_cmd->add_flag("--log", show_log, "print the per-iteration log");
  solve_cmd->add_option("--start", start_name, "midpoint or flat");

  auto* pf_cmd = app.add_subcommand("pf", "Newton-Raphson power flow at nominal loads");
  add_common(pf_cmd, pf_c);
  std::string pf_init = "flat";
  pf_cmd->add_option("--init", pf_init, "flat or dc")->check(CLI::IsMember({"flat", "dc"}));

  auto* extract_cmd = app.add_subcommand("extract", "generate instances and extract dual labels");
  add_common(extract_cmd, extract_c);
  std::optional<int> n_train, n_val, n_test;
  extract_cmd->add_option("--train", n_train, "training instances");
  extract_cmd->add_option("--val", n_val, "validation instances");
  extract_cmd->add_option("--test", n_test, "test instances");

  auto* fit_cmd = app.add_subcommand("fit", "fit the warm-start predictor on the training split");
  add_common(fit_cmd, fit_c);
  std::string predictor_text;
  fit_cmd->add_option("--predictor", predictor_text, "knn(<k>) or ridge(<lambda>)");

  auto* bench_cmd = app.add_subcommand("bench", "run the warm-start evaluation protocol");
  add_common(bench_cmd, bench_c);

  auto* sweep_cmd = app.add_subcommand("sweep", "run a blend, retraction or screening sweep");
  add_common(sweep_cmd, sweep_c);
  std::string sweep_kind = "blend";
  sweep_cmd->add_option("--kind", sweep_kind, "blend, retraction or screening")
      ->check(CLI::IsMember({"blend", "retraction", "screening"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*parse_cmd) {
      BenchConfig cfg = resolve(parse_c);
      RawCase raw = load_case_file(resolve_case_path(cfg.case_id));
      if (serialize) {
        std::cout << serialize_case(raw);
      } else {
        NetworkModel net = build_network(raw);
        std::printf("%s: %d buses, %d generators, %d branches (%d in service), ybus nnz %ld, baseMVA %g\n",
                    raw.name.c_str(), net.n_bus(), net.n_gen(), net.n_branch(), net.n_branch_in_service(),
                    static_cast<long>(net.ybus.nonZeros()), raw.base_mva);
      }
    } else if (*solve_cmd) {
      BenchConfig cfg = resolve(solve_c);
      auto net = load_network(cfg.case_id);
      auto p = assemble_nlp(net, nominal_loads(*net), make_flow_limits(*net, cfg.extract));
      WarmStartSpec spec = WarmStartSpec::parse(start_name);
      if (spec.needs_label() || spec.needs_prediction())
        throw std::invalid_argument("solve supports only midpoint and flat starts");
      IpmState start = build_warm_start(spec, p, {}, cfg.extract.ipm);
      SolveResult r = solve(p, start, cfg.extract.ipm);
      if (show_log)
        for (const auto& l : r.log)
          std::printf("%4d  mu %.3e  f %.8e  inf_pr %.3e  inf_du %.3e  compl %.3e  a_p %.3f  a_d %.3f  reg %.1e\n",
                      l.iter, l.mu, l.objective, l.primal_inf, l.dual_inf, l.compl_inf, l.alpha_primal,
                      l.alpha_dual, l.regularization);
      std::printf("%s: status %s, iterations %d, objective %.10g\n", net->name.c_str(), to_string(r.status).c_str(),
                  r.iterations, r.objective);
      return r.converged() ? 0 : 2;
    } else if (*pf_cmd) {
      BenchConfig cfg = resolve(pf_c);
      auto net = load_network(cfg.case_id);
      PfResult r = solve_pf(*net, nominal_loads(*net), pf_init == "dc" ? PfInit::dc() : PfInit::flat());
      std::printf("%s: %s after %d iterations, mismatch %.3e\n", net->name.c_str(),
                  r.converged ? "converged" : "not converged", r.iterations, r.mismatch);
      return r.converged ? 0 : 2;
    } else if (*extract_cmd) {
      BenchConfig cfg = resolve(extract_c);
      if (n_train) cfg.sizes.train = *n_train;
      if (n_val) cfg.sizes.val = *n_val;
      if (n_test) cfg.sizes.test = *n_test;
      auto net = load_network(cfg.case_id);
      Dataset ds = build_dataset(net, cfg.sizes, cfg.seed, cfg.extract);
      write_dataset(cfg.out_dir, ds);
      std::printf("%s: %zu/%zu/%zu labels (train/val/test), convergence rate %.4f, written to %s\n",
                  ds.case_id.c_str(), ds.train.size(), ds.val.size(), ds.test.size(), ds.convergence_rate(),
                  dataset_dir(cfg.out_dir, ds.case_id).string().c_str());
    } else if (*fit_cmd) {
      BenchConfig cfg = resolve(fit_c);
      if (!predictor_text.empty()) {
        const double w = cfg.predictor.nonbinding_weight;
        cfg.predictor = PredictorConfig::parse(predictor_text);
        cfg.predictor.nonbinding_weight = w;
      }
      auto net = load_network(cfg.case_id);
      Dataset ds = read_dataset(cfg.out_dir, net->name, net);
      const auto stats = norm_stats_from_json(read_all((dataset_dir(cfg.out_dir, net->name) / "norm_stats.json").string()));
      PredictorModel model = fit(*net, ds.train, stats, cfg.predictor);
      const auto path = model_path(cfg.out_dir, net->name);
      std::filesystem::create_directories(path.parent_path());
      std::ofstream(path, std::ios::binary) << model_to_json(model);
      std::printf("%s: fitted %s on %zu instances, written to %s\n", net->name.c_str(), model.config.name().c_str(),
                  ds.train.size(), path.string().c_str());
    } else if (*bench_cmd) {
      BenchConfig cfg = resolve(bench_c);
      BenchReport rep = run_protocol(cfg);
      const auto dir = report_dir(cfg, rep.case_id);
      emit_report(rep, dir);
      std::cout << report_markdown(rep);
      std::printf("\nreport written to %s\n", dir.string().c_str());
    } else if (*sweep_cmd) {
      BenchConfig cfg = resolve(sweep_c);
      auto net = load_network(cfg.case_id);
      Dataset ds = read_dataset(cfg.out_dir, net->name, net);
      const auto mp = model_path(cfg.out_dir, net->name);
      if (!std::filesystem::exists(mp))
        throw MissingInputError("no fitted predictor at " + mp.string() + "; run `opflab fit --case " +
                                cfg.case_id + " --out " + cfg.out_dir + "` first");
      PredictorModel model = model_from_json(read_all(mp.string()));
      SweepTable t = sweep(cfg, net, ds, model, parse_sweep_kind(sweep_kind));
      const auto dir = report_dir(cfg, net->name);
      emit_sweep(t, dir);
      std::cout << sweep_markdown(t);
      std::printf("\nsweep written to %s\n", dir.string().c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
