#include "opflab/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "opflab/parallel.hpp"

#ifndef OPFLAB_DEFAULT_DATA_DIR
#define OPFLAB_DEFAULT_DATA_DIR "data"
#endif

namespace opflab {

using ojson = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Splits on commas outside parentheses.
std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  for (const auto& item : out)
    if (item.empty()) throw std::invalid_argument("empty entry in list '" + s + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument("config key '" + key + "' expects a number, got '" + v + "'");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  size_t used = 0;
  long long i = 0;
  try {
    i = std::stoll(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument("config key '" + key + "' expects an integer, got '" + v + "'");
  return i;
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    out += (i ? ", " : "") + std::string(buf);
  }
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double median_of(std::vector<int> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ojson row_json(const StrategyRow& r) {
  return ojson{{"method", r.method},
               {"mean_iters", r.mean},
               {"median_iters", r.median},
               {"reduction", r.reduction},
               {"convergence_rate", r.convergence_rate},
               {"failures", r.failures},
               {"mu_ratio", r.mu_ratio},
               {"removed_fraction", r.removed_fraction},
               {"iterations", r.iterations},
               {"status", r.status}};
}

std::string pct(double fraction) { return fixed(100.0 * fraction, 1) + "%"; }

std::string markdown_row(const StrategyRow& r, bool baseline) {
  return "| " + r.method + " | " + fixed(r.mean, 2) + " | " + fixed(r.median, 1) + " | " +
         (baseline ? std::string("---") : pct(r.reduction)) + " | " + pct(r.convergence_rate) + " |\n";
}

std::string csv_row(const StrategyRow& r) {
  return "\"" + r.method + "\"," + fixed(r.mean, 4) + "," + fixed(r.median, 1) + "," + fixed(100.0 * r.reduction, 4) +
         "," + fixed(r.convergence_rate, 4) + "," + std::to_string(r.failures) + "," + fixed(r.mu_ratio, 6) + "," +
         fixed(r.removed_fraction, 4) + "\n";
}

const char* kCsvHeader = "method,mean_iters,median_iters,reduction_pct,convergence_rate,failures,mu_ratio,removed_fraction\n";

}  // namespace

std::string resolve_case_path(const std::string& case_or_path) {
  if (case_or_path.size() > 2 && case_or_path.substr(case_or_path.size() - 2) == ".m") return case_or_path;
  const char* env = std::getenv("OPFLAB_DATA_DIR");
  const std::filesystem::path base = env && *env ? env : OPFLAB_DEFAULT_DATA_DIR;
  const auto path = base / "cases" / (case_or_path + ".m");
  if (!std::filesystem::exists(path))
    throw std::invalid_argument("unknown case '" + case_or_path + "' (looked for " + path.string() + ")");
  return path.string();
}

std::shared_ptr<const NetworkModel> load_network(const std::string& case_or_path) {
  return std::make_shared<const NetworkModel>(build_network(load_case_file(resolve_case_path(case_or_path))));
}

std::vector<WarmStartSpec> BenchConfig::effective_strategies() const {
  std::vector<WarmStartSpec> out;
  std::set<std::string> seen;
  auto add = [&](const WarmStartSpec& s) {
    if (seen.insert(s.name()).second) out.push_back(s);
  };
  add(WarmStartSpec::parse("midpoint"));
  for (const auto& s : strategies) add(s);
  add(WarmStartSpec::parse("oracle_pd(lambda_z_mu)"));
  return out;
}

BenchConfig BenchConfig::parse(const std::string& text) {
  BenchConfig c;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto& ipm = c.extract.ipm;
    if (key == "case") c.case_id = value;
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "train") c.sizes.train = static_cast<int>(to_int(key, value));
    else if (key == "val") c.sizes.val = static_cast<int>(to_int(key, value));
    else if (key == "test") c.sizes.test = static_cast<int>(to_int(key, value));
    else if (key == "tol") ipm.tol = to_double(key, value);
    else if (key == "max_iter") ipm.max_iter = static_cast<int>(to_int(key, value));
    else if (key == "mu_init") ipm.mu_init = to_double(key, value);
    else if (key == "mu_linear_factor") ipm.mu_linear_factor = to_double(key, value);
    else if (key == "mu_superlinear_power") ipm.mu_superlinear_power = to_double(key, value);
    else if (key == "bound_push") ipm.bound_push = to_double(key, value);
    else if (key == "warm_bound_push") ipm.warm_bound_push = to_double(key, value);
    else if (key == "fraction_to_boundary") ipm.fraction_to_boundary = to_double(key, value);
    else if (key == "inertia_delta_0") ipm.inertia_delta_0 = to_double(key, value);
    else if (key == "linear_solver") ipm.linear_solver = parse_kkt_backend(value);
    else if (key == "flow_mode") {
      if (value == "omit") c.extract.flow_mode = FlowMode::omit;
      else if (value == "slack") c.extract.flow_mode = FlowMode::slack;
      else throw std::invalid_argument("flow_mode must be omit or slack");
    } else if (key == "flow_ends") {
      if (value == "from") c.extract.flow_ends = FlowEnds::from;
      else if (value == "both") c.extract.flow_ends = FlowEnds::both;
      else throw std::invalid_argument("flow_ends must be from or both");
    } else if (key == "threads") c.extract.threads = static_cast<int>(to_int(key, value));
    else if (key == "strategies") {
      c.strategies.clear();
      for (const auto& item : split_list(value)) c.strategies.push_back(WarmStartSpec::parse(item));
    } else if (key == "predictor") c.predictor = PredictorConfig::parse(value);
    else if (key == "nonbinding_weight") c.predictor.nonbinding_weight = to_double(key, value);
    else if (key == "blend_grid") c.grids.blend = to_doubles(key, value);
    else if (key == "retract_grid") c.grids.retract = to_doubles(key, value);
    else if (key == "screen_grid") c.grids.screen = to_doubles(key, value);
    else if (key == "out") c.out_dir = value;
    else throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  c.extract.ipm.validate();
  c.predictor.validate();
  return c;
}

BenchConfig BenchConfig::load(const std::string& path) { return parse(read_text(path)); }

std::string BenchConfig::to_text() const {
  std::ostringstream ss;
  const auto& ipm = extract.ipm;
  ss << "case = " << case_id << "\n"
     << "seed = " << seed << "\n"
     << "train = " << sizes.train << "\nval = " << sizes.val << "\ntest = " << sizes.test << "\n"
     << "tol = " << join_doubles({ipm.tol}) << "\n"
     << "max_iter = " << ipm.max_iter << "\n"
     << "mu_init = " << join_doubles({ipm.mu_init}) << "\n"
     << "mu_linear_factor = " << join_doubles({ipm.mu_linear_factor}) << "\n"
     << "mu_superlinear_power = " << join_doubles({ipm.mu_superlinear_power}) << "\n"
     << "bound_push = " << join_doubles({ipm.bound_push}) << "\n"
     << "warm_bound_push = " << join_doubles({ipm.warm_bound_push}) << "\n"
     << "fraction_to_boundary = " << join_doubles({ipm.fraction_to_boundary}) << "\n"
     << "inertia_delta_0 = " << join_doubles({ipm.inertia_delta_0}) << "\n"
     << "linear_solver = "
     << (ipm.linear_solver == KktBackend::dense    ? "dense"
         : ipm.linear_solver == KktBackend::sparse ? "sparse"
                                                   : "automatic")
     << "\n"
     << "threads = " << extract.threads << "\n"
     << "flow_mode = " << (extract.flow_mode == FlowMode::omit ? "omit" : "slack") << "\n"
     << "flow_ends = " << (extract.flow_ends == FlowEnds::from ? "from" : "both") << "\n"
     << "predictor = " << predictor.name() << "\n"
     << "nonbinding_weight = " << join_doubles({predictor.nonbinding_weight}) << "\n"
     << "strategies = ";
  for (size_t i = 0; i < strategies.size(); ++i) ss << (i ? ", " : "") << strategies[i].name();
  ss << "\nblend_grid = " << join_doubles(grids.blend) << "\n"
     << "retract_grid = " << join_doubles(grids.retract) << "\n"
     << "screen_grid = " << join_doubles(grids.screen) << "\n"
     << "out = " << out_dir << "\n";
  return ss.str();
}

double reduction(double cold_mean, double mean) { return cold_mean > 0 ? (cold_mean - mean) / cold_mean : 0.0; }

std::vector<StrategyRow> evaluate_strategies(const std::vector<WarmStartSpec>& specs,
                                             std::shared_ptr<const NetworkModel> net, const Dataset& ds,
                                             const PredictorModel* model, const ExtractOptions& opts) {
  const auto& test = ds.test;
  const int nt = static_cast<int>(test.size());
  const int ns = static_cast<int>(specs.size());
  bool need_pred = false;
  for (const auto& s : specs) need_pred |= s.needs_prediction();
  if (need_pred && !model) throw MissingInputError("a fitted predictor is required for the requested strategies");

  struct Cell {
    int iterations = 0;
    std::string status;
    double mu_ratio = 0.0;
    double removed = 0.0;
  };
  std::vector<std::vector<Cell>> cells(nt, std::vector<Cell>(ns));
  IpmOptions ipm = opts.ipm;
  ipm.keep_log = false;
  parallel_for(nt, opts.threads, [&](int i) {
    std::shared_ptr<const OpfProblem> p = instance_problem(net, test[i].factors, opts);
    std::optional<Prediction> pred;
    if (need_pred) pred = predict(*model, load_features(*net, test[i].factors));
    WarmStartInputs in{&test[i], pred ? &*pred : nullptr};
    for (int s = 0; s < ns; ++s) {
      PreparedStart ps = prepare_start(specs[s], p, in, ipm);
      SolveResult r = solve(*ps.problem, ps.state, ipm);
      Cell& c = cells[i][s];
      c.iterations = r.converged() ? r.iterations : ipm.max_iter;
      c.status = to_string(r.status);
      c.mu_ratio = ps.mu_ratio;
      c.removed = ps.removed_fraction;
    }
  });

  std::vector<StrategyRow> rows(ns);
  for (int s = 0; s < ns; ++s) {
    StrategyRow& r = rows[s];
    r.method = specs[s].name();
    double sum = 0.0, mu_sum = 0.0, removed_sum = 0.0;
    for (int i = 0; i < nt; ++i) {
      const Cell& c = cells[i][s];
      r.iterations.push_back(c.iterations);
      r.status.push_back(c.status);
      sum += c.iterations;
      mu_sum += c.mu_ratio;
      removed_sum += c.removed;
      r.failures += c.status != "converged";
    }
    r.mean = nt ? sum / nt : 0.0;
    r.median = median_of(r.iterations);
    r.convergence_rate = nt ? double(nt - r.failures) / nt : 0.0;
    r.mu_ratio = nt ? mu_sum / nt : 0.0;
    r.removed_fraction = nt ? removed_sum / nt : 0.0;
  }
  for (auto& r : rows) r.reduction = reduction(rows[0].mean, r.mean);
  return rows;
}

BenchReport run_protocol(const BenchConfig& config, std::shared_ptr<const NetworkModel> net, const Dataset& ds,
                         const PredictorModel* model) {
  BenchReport rep;
  rep.case_id = ds.case_id;
  rep.seed = ds.seed;
  rep.tol = config.extract.ipm.tol;
  rep.max_iter = config.extract.ipm.max_iter;
  for (const auto& l : ds.test) rep.instances.push_back(l.index);
  const auto specs = config.effective_strategies();
  rep.rows = evaluate_strategies(specs, net, ds, model, config.extract);

  if (model) {
    rep.predictor = model->config.name();
    std::map<std::string, MetricsSummary> acc;
    std::vector<std::string> order;
    std::map<std::string, int> defined;
    for (const auto& l : ds.test) {
      auto p = instance_problem(net, l.factors, config.extract);
      Prediction pred = predict(*model, load_features(*net, l.factors));
      for (const auto& g : eval_metrics(pred.state, l.state, *p)) {
        if (!acc.count(g.group)) {
          order.push_back(g.group);
          acc[g.group].group = g.group;
        }
        auto& a = acc[g.group];
        a.rmse += g.rmse;
        if (g.pearson_defined) {
          a.pearson += g.pearson;
          ++defined[g.group];
        } else {
          ++a.undefined;
        }
      }
    }
    const double nt = static_cast<double>(ds.test.size());
    for (const auto& name : order) {
      MetricsSummary m = acc[name];
      m.rmse /= nt;
      m.pearson = defined[name] ? m.pearson / defined[name] : std::nan("");
      rep.prediction_metrics.push_back(m);
    }
  }
  return rep;
}

std::filesystem::path model_path(const std::filesystem::path& out_dir, const std::string& case_id) {
  return out_dir / "models" / (case_id + ".json");
}

BenchReport run_protocol(const BenchConfig& config) {
  auto net = load_network(config.case_id);
  Dataset ds = read_dataset(config.out_dir, net->name, net);
  std::optional<PredictorModel> model;
  bool need_pred = false;
  for (const auto& s : config.effective_strategies()) need_pred |= s.needs_prediction();
  const auto mp = model_path(config.out_dir, net->name);
  if (std::filesystem::exists(mp)) model = model_from_json(read_text(mp));
  else if (need_pred)
    throw MissingInputError("no fitted predictor at " + mp.string() + "; run `opflab fit --case " + config.case_id +
                            " --out " + config.out_dir + "` first");
  return run_protocol(config, net, ds, model ? &*model : nullptr);
}

SweepKind parse_sweep_kind(const std::string& name) {
  if (name == "blend") return SweepKind::blend;
  if (name == "retraction") return SweepKind::retraction;
  if (name == "screening") return SweepKind::screening;
  throw std::invalid_argument("sweep kind must be blend, retraction or screening");
}

std::string to_string(SweepKind k) {
  switch (k) {
    case SweepKind::blend: return "blend";
    case SweepKind::retraction: return "retraction";
    case SweepKind::screening: return "screening";
  }
  return "?";
}

SweepTable sweep(const BenchConfig& config, std::shared_ptr<const NetworkModel> net, const Dataset& ds,
                 const PredictorModel& model, SweepKind kind) {
  std::vector<double> grid;
  switch (kind) {
    case SweepKind::blend:
      grid = config.grids.blend;
      grid.push_back(0.0);
      grid.push_back(1.0);
      break;
    case SweepKind::retraction: grid = config.grids.retract; break;
    case SweepKind::screening: grid = config.grids.screen; break;
  }
  if (grid.empty()) throw std::invalid_argument("sweep grid is empty");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  std::vector<WarmStartSpec> specs = {WarmStartSpec::parse("midpoint")};
  for (double g : grid) {
    WarmStartSpec s;
    if (kind == SweepKind::blend) {
      s.kind = StrategyKind::blend;
      s.alpha = g;
    } else if (kind == SweepKind::retraction) {
      s.kind = StrategyKind::retracted;
      s.mu_target = g;
    } else {
      s.kind = StrategyKind::hybrid;
      s.screen_margin = g;
      s.inner = std::make_shared<const WarmStartSpec>(WarmStartSpec::parse("midpoint"));
    }
    s.validate();
    specs.push_back(s);
  }
  auto rows = evaluate_strategies(specs, net, ds, &model, config.extract);
  SweepTable t;
  t.kind = kind;
  t.case_id = ds.case_id;
  t.cold = rows[0];
  for (size_t i = 0; i < grid.size(); ++i) t.rows.push_back({grid[i], rows[i + 1]});
  return t;
}

std::string report_csv(const BenchReport& r) {
  std::string out = kCsvHeader;
  for (const auto& row : r.rows) out += csv_row(row);
  return out;
}

std::string report_json(const BenchReport& r) {
  ojson j;
  j["case"] = r.case_id;
  j["seed"] = r.seed;
  j["tol"] = r.tol;
  j["max_iter"] = r.max_iter;
  j["instances"] = r.instances;
  j["predictor"] = r.predictor;
  ojson rows = ojson::array();
  for (const auto& row : r.rows) rows.push_back(row_json(row));
  j["strategies"] = rows;
  ojson metrics = ojson::array();
  for (const auto& m : r.prediction_metrics)
    metrics.push_back({{"group", m.group},
                       {"rmse", m.rmse},
                       {"pearson", std::isnan(m.pearson) ? ojson(nullptr) : ojson(m.pearson)},
                       {"pearson_undefined", m.undefined}});
  j["prediction_metrics"] = metrics;
  return j.dump(1) + "\n";
}

std::string report_markdown(const BenchReport& r) {
  std::string out = "## " + r.case_id + ": warm-start iterations (" + std::to_string(r.instances.size()) +
                    " test instances, tol " + fixed(r.tol, 8) + ")\n\n";
  out += "| Method | Mean iters | Median | Reduction | Converged |\n";
  out += "|---|---|---|---|---|\n";
  for (size_t i = 0; i < r.rows.size(); ++i) out += markdown_row(r.rows[i], i == 0);
  if (!r.prediction_metrics.empty()) {
    out += "\n### Prediction quality (" + r.predictor + ", raw space)\n\n";
    out += "| Group | RMSE | Pearson r |\n|---|---|---|\n";
    for (const auto& m : r.prediction_metrics)
      out += "| " + m.group + " | " + fixed(m.rmse, 6) + " | " + (std::isnan(m.pearson) ? std::string("n/a") : fixed(m.pearson, 4)) +
             " |\n";
  }
  return out;
}

std::string sweep_csv(const SweepTable& t) {
  std::string out = "parameter," + std::string(kCsvHeader);
  out += "cold," + csv_row(t.cold);
  for (const auto& row : t.rows) out += fixed(row.parameter, 6) + "," + csv_row(row.row);
  return out;
}

std::string sweep_json(const SweepTable& t) {
  ojson j;
  j["case"] = t.case_id;
  j["kind"] = to_string(t.kind);
  j["cold"] = row_json(t.cold);
  ojson rows = ojson::array();
  for (const auto& row : t.rows) {
    ojson r = row_json(row.row);
    r["parameter"] = row.parameter;
    rows.push_back(r);
  }
  j["rows"] = rows;
  return j.dump(1) + "\n";
}

std::string sweep_markdown(const SweepTable& t) {
  std::string out = "## " + t.case_id + ": " + to_string(t.kind) + " sweep\n\n";
  const bool screening = t.kind == SweepKind::screening;
  out += screening ? "| Margin | Removed | Mean iters | Median | Reduction | Converged |\n|---|---|---|---|---|---|\n"
                   : "| Parameter | Mean iters | Median | Reduction | Converged |\n|---|---|---|---|---|\n";
  out += screening ? "| cold | 0.0% | " : "| cold | ";
  out += fixed(t.cold.mean, 2) + " | " + fixed(t.cold.median, 1) + " | --- | " + pct(t.cold.convergence_rate) + " |\n";
  for (const auto& row : t.rows) {
    out += "| " + fixed(row.parameter, 3) + " | ";
    if (screening) out += pct(row.row.removed_fraction) + " | ";
    out += fixed(row.row.mean, 2) + " | " + fixed(row.row.median, 1) + " | " + pct(row.row.reduction) + " | " +
           pct(row.row.convergence_rate) + " |\n";
  }
  return out;
}

std::vector<std::filesystem::path> emit_report(const BenchReport& r, const std::filesystem::path& dir,
                                               unsigned formats) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  if (formats & format_csv) written.push_back(dir / "report.csv"), write_text(written.back(), report_csv(r));
  if (formats & format_json) written.push_back(dir / "report.json"), write_text(written.back(), report_json(r));
  if (formats & format_markdown) written.push_back(dir / "report.md"), write_text(written.back(), report_markdown(r));
  return written;
}

std::vector<std::filesystem::path> emit_sweep(const SweepTable& t, const std::filesystem::path& dir,
                                              unsigned formats) {
  std::filesystem::create_directories(dir);
  const std::string stem = "sweep_" + to_string(t.kind);
  std::vector<std::filesystem::path> written;
  if (formats & format_csv) written.push_back(dir / (stem + ".csv")), write_text(written.back(), sweep_csv(t));
  if (formats & format_json) written.push_back(dir / (stem + ".json")), write_text(written.back(), sweep_json(t));
  if (formats & format_markdown) written.push_back(dir / (stem + ".md")), write_text(written.back(), sweep_markdown(t));
  return written;
}

}  // namespace opflab
