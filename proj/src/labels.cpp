#include "opflab/labels.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "opflab/parallel.hpp"

namespace opflab {

using ojson = nlohmann::ordered_json;

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << text;
  if (!out) throw DatasetError("write failed for " + path.string());
}

const char* flow_mode_name(FlowMode m) { return m == FlowMode::omit ? "omit" : "slack"; }
const char* flow_ends_name(FlowEnds e) { return e == FlowEnds::from ? "from" : "both"; }

}  // namespace

std::vector<int> load_buses(const NetworkModel& net) {
  std::vector<int> out;
  for (int i = 0; i < net.n_bus(); ++i)
    if (net.buses[i].pd != 0.0 || net.buses[i].qd != 0.0) out.push_back(i);
  return out;
}

std::vector<InstanceSpec> generate_instances(const NetworkModel& net, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("instance count must be at least 1");
  const auto loads = load_buses(net);
  std::mt19937_64 rng(seed);
  std::vector<InstanceSpec> out(n);
  for (int i = 0; i < n; ++i) {
    out[i].case_id = net.name;
    out[i].seed = seed;
    out[i].index = i;
    out[i].factors.resize(loads.size());
    for (auto& f : out[i].factors) f = kLoadFactorLow + (kLoadFactorHigh - kLoadFactorLow) * uniform01(rng);
  }
  return out;
}

LoadProfile instance_loads(const NetworkModel& net, const std::vector<double>& factors) {
  const auto loads = load_buses(net);
  if (factors.size() != loads.size())
    throw std::invalid_argument("expected " + std::to_string(loads.size()) + " load factors, got " +
                                std::to_string(factors.size()));
  LoadProfile lp = nominal_loads(net);
  for (size_t k = 0; k < loads.size(); ++k) {
    lp.pd[loads[k]] *= factors[k];
    lp.qd[loads[k]] *= factors[k];
  }
  return lp;
}

FlowLimits make_flow_limits(const NetworkModel& net, const ExtractOptions& opts) {
  return opts.flow_mode == FlowMode::omit ? FlowLimits::omit() : FlowLimits::slack(net, opts.flow_ends);
}

std::shared_ptr<OpfProblem> instance_problem(std::shared_ptr<const NetworkModel> net,
                                             const std::vector<double>& factors,
                                             const ExtractOptions& opts) {
  LoadProfile lp = instance_loads(*net, factors);
  FlowLimits fl = make_flow_limits(*net, opts);
  return std::make_shared<OpfProblem>(std::move(net), std::move(lp), std::move(fl));
}

std::vector<DualLabel> extract_labels(std::shared_ptr<const NetworkModel> net,
                                      const std::vector<InstanceSpec>& instances,
                                      const ExtractOptions& opts) {
  std::vector<DualLabel> out(instances.size());
  IpmOptions ipm = opts.ipm;
  ipm.keep_log = false;
  parallel_for(static_cast<int>(instances.size()), opts.threads, [&](int i) {
    auto p = instance_problem(net, instances[i].factors, opts);
    SolveResult r = solve(*p, default_start(*p, ipm.mu_init), ipm);
    DualLabel& d = out[i];
    d.index = instances[i].index;
    d.factors = instances[i].factors;
    d.state = r.state;
    d.objective = r.objective;
    d.cold_iterations = r.iterations;
    d.converged = r.converged();
    d.status = to_string(r.status);
  });
  return out;
}

const std::vector<DualLabel>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

double Dataset::convergence_rate() const {
  const double total = static_cast<double>(train.size() + val.size() + test.size() + failures.size());
  return total > 0 ? (total - failures.size()) / total : 0.0;
}

Dataset build_dataset(std::shared_ptr<const NetworkModel> net, const SplitSizes& sizes, std::uint64_t seed,
                      const ExtractOptions& opts) {
  if (sizes.train < 1 || sizes.val < 0 || sizes.test < 1)
    throw std::invalid_argument("train and test splits must be non-empty");
  Dataset ds;
  ds.case_id = net->name;
  ds.seed = seed;
  ds.sizes = sizes;
  ds.options = opts;
  auto probe = instance_problem(net, std::vector<double>(load_buses(*net).size(), 1.0), opts);
  ds.n = probe->n();
  ds.m = probe->m();

  auto instances = generate_instances(*net, sizes.total(), seed);
  auto labels = extract_labels(net, instances, opts);
  for (auto& l : labels) {
    l.split = l.index < sizes.train ? "train" : l.index < sizes.train + sizes.val ? "val" : "test";
    if (!l.converged) ds.failures.push_back(l);
    else if (l.split == "train") ds.train.push_back(l);
    else if (l.split == "val") ds.val.push_back(l);
    else ds.test.push_back(l);
  }
  return ds;
}

Vec pack_state(const IpmState& s) {
  const auto n = s.x.size(), m = s.lambda.size();
  Vec v(3 * n + m + 1);
  v << s.x, s.lambda, s.z_l, s.z_u, s.mu;
  return v;
}

IpmState unpack_state(const Vec& v, int n, int m) {
  if (v.size() != 3 * n + m + 1) throw std::invalid_argument("packed state has the wrong length");
  IpmState s;
  s.x = v.segment(0, n);
  s.lambda = v.segment(n, m);
  s.z_l = v.segment(n + m, n);
  s.z_u = v.segment(2 * n + m, n);
  s.mu = v[3 * n + m];
  return s;
}

NormStats compute_norm_stats(const std::vector<DualLabel>& train) {
  if (train.empty()) throw std::invalid_argument("normalization needs a non-empty training split");
  NormStats st;
  st.n = static_cast<int>(train.front().state.x.size());
  st.m = static_cast<int>(train.front().state.lambda.size());
  const double count = static_cast<double>(train.size());
  Vec sum = Vec::Zero(3 * st.n + st.m + 1);
  for (const auto& l : train) sum += pack_state(l.state);
  st.mean = sum / count;
  Vec sq = Vec::Zero(st.mean.size());
  for (const auto& l : train) sq += (pack_state(l.state) - st.mean).cwiseAbs2();
  st.scale = (sq / count).cwiseSqrt();
  for (Eigen::Index i = 0; i < st.scale.size(); ++i)
    if (!(st.scale[i] > 1e-12 * std::max(1.0, std::abs(st.mean[i])))) st.scale[i] = 1.0;
  return st;
}

Vec normalize(const Vec& v, const NormStats& stats) {
  if (v.size() != stats.mean.size()) throw std::invalid_argument("vector length does not match stats");
  return (v - stats.mean).cwiseQuotient(stats.scale);
}

Vec denormalize(const Vec& v, const NormStats& stats) {
  if (v.size() != stats.mean.size()) throw std::invalid_argument("vector length does not match stats");
  return v.cwiseProduct(stats.scale) + stats.mean;
}

BindingMask binding_mask(const DualLabel& label, double threshold) {
  BindingMask mask;
  const auto n = label.state.x.size();
  mask.lower.resize(n);
  mask.upper.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    mask.lower[i] = std::abs(label.state.z_l[i]) > threshold;
    mask.upper[i] = std::abs(label.state.z_u[i]) > threshold;
  }
  return mask;
}

std::vector<GroupSparsity> sparsity_summary(const std::vector<DualLabel>& labels, const OpfProblem& p,
                                            double threshold) {
  const OpfVariables& v = p.vars();
  std::vector<std::pair<std::string, Slice>> groups = {{"Va", v.va}, {"Vm", v.vm}, {"Pg", v.pg}, {"Qg", v.qg}};
  if (v.flow.size) groups.emplace_back("flow", v.flow);
  std::vector<GroupSparsity> out;
  for (const auto& [name, sl] : groups) {
    GroupSparsity g;
    g.group = name;
    for (const auto& label : labels) {
      BindingMask mask = binding_mask(label, threshold);
      for (int i = sl.begin(); i < sl.end(); ++i) {
        const double l = p.lower()[i], u = p.upper()[i];
        if (finite_lower(l) && finite_upper(u) && l == u) continue;
        if (finite_lower(l)) {
          ++g.bound_sides;
          g.nonbinding += !mask.lower[i];
        }
        if (finite_upper(u)) {
          ++g.bound_sides;
          g.nonbinding += !mask.upper[i];
        }
      }
    }
    out.push_back(g);
  }
  return out;
}

std::string label_to_json(const DualLabel& label) {
  ojson j;
  j["index"] = label.index;
  j["split"] = label.split;
  j["factors"] = label.factors;
  j["x"] = to_std(label.state.x);
  j["lambda"] = to_std(label.state.lambda);
  j["z_l"] = to_std(label.state.z_l);
  j["z_u"] = to_std(label.state.z_u);
  j["mu"] = label.state.mu;
  j["objective"] = label.objective;
  j["cold_iterations"] = label.cold_iterations;
  j["converged"] = label.converged;
  j["status"] = label.status;
  return j.dump();
}

DualLabel label_from_json(const std::string& line) {
  DualLabel d;
  try {
    ojson j = ojson::parse(line);
    d.index = j.at("index").get<int>();
    d.split = j.at("split").get<std::string>();
    d.factors = j.at("factors").get<std::vector<double>>();
    d.state.x = to_vec(j.at("x").get<std::vector<double>>());
    d.state.lambda = to_vec(j.at("lambda").get<std::vector<double>>());
    d.state.z_l = to_vec(j.at("z_l").get<std::vector<double>>());
    d.state.z_u = to_vec(j.at("z_u").get<std::vector<double>>());
    d.state.mu = j.at("mu").get<double>();
    d.objective = j.at("objective").get<double>();
    d.cold_iterations = j.at("cold_iterations").get<int>();
    d.converged = j.at("converged").get<bool>();
    d.status = j.at("status").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed label record: ") + e.what());
  }
  if (d.state.z_l.size() != d.state.x.size() || d.state.z_u.size() != d.state.x.size())
    throw DatasetError("label record has inconsistent vector lengths");
  return d;
}

std::string norm_stats_to_json(const NormStats& stats) {
  ojson j;
  j["format_version"] = kDatasetFormatVersion;
  j["layout"] = {"x", "lambda", "z_l", "z_u", "mu"};
  j["n"] = stats.n;
  j["m"] = stats.m;
  j["mean"] = to_std(stats.mean);
  j["scale"] = to_std(stats.scale);
  return j.dump(1) + "\n";
}

NormStats norm_stats_from_json(const std::string& text) {
  NormStats st;
  try {
    ojson j = ojson::parse(text);
    st.n = j.at("n").get<int>();
    st.m = j.at("m").get<int>();
    st.mean = to_vec(j.at("mean").get<std::vector<double>>());
    st.scale = to_vec(j.at("scale").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed norm stats: ") + e.what());
  }
  if (st.mean.size() != 3 * st.n + st.m + 1 || st.scale.size() != st.mean.size())
    throw DatasetError("norm stats have the wrong length");
  return st;
}

std::string manifest_json(const Dataset& ds) {
  ojson j;
  j["format_version"] = kDatasetFormatVersion;
  j["case"] = ds.case_id;
  j["seed"] = ds.seed;
  j["load_perturbation"] = {{"law", "uniform multiplicative, one factor per load applied to P and Q"},
                            {"low", kLoadFactorLow},
                            {"high", kLoadFactorHigh}};
  auto split_entry = [&](const std::string& name, int requested) {
    int failed = 0;
    for (const auto& f : ds.failures) failed += f.split == name;
    return ojson{{"requested", requested},
                 {"converged", static_cast<int>(ds.split(name).size())},
                 {"failed", failed}};
  };
  j["splits"] = {{"train", split_entry("train", ds.sizes.train)},
                 {"val", split_entry("val", ds.sizes.val)},
                 {"test", split_entry("test", ds.sizes.test)}};
  j["convergence_rate"] = ds.convergence_rate();
  ojson failures = ojson::array();
  for (const auto& f : ds.failures)
    failures.push_back({{"index", f.index}, {"split", f.split}, {"status", f.status}});
  j["failures"] = failures;
  j["solver"] = {{"tol", ds.options.ipm.tol},
                 {"max_iter", ds.options.ipm.max_iter},
                 {"mu_init", ds.options.ipm.mu_init},
                 {"mu_linear_factor", ds.options.ipm.mu_linear_factor},
                 {"mu_superlinear_power", ds.options.ipm.mu_superlinear_power},
                 {"bound_push", ds.options.ipm.bound_push},
                 {"flow_mode", flow_mode_name(ds.options.flow_mode)},
                 {"flow_ends", flow_ends_name(ds.options.flow_ends)}};
  j["dimensions"] = {{"n", ds.n}, {"m", ds.m}};
  j["ordering"] = {{"x", "Va[n_bus], Vm[n_bus], Pg[n_gen], Qg[n_gen], flow slacks"},
                   {"lambda", "P balance[n_bus], Q balance[n_bus], flow links"},
                   {"state", "x, lambda, z_l, z_u, mu"}};
  j["license"] = "Network data derived from the MATPOWER/PYPOWER case library (BSD-3-Clause).";
  return j.dump(1) + "\n";
}

std::filesystem::path dataset_dir(const std::filesystem::path& root, const std::string& case_id) {
  return root / "duals" / case_id;
}

void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
  const auto dir = dataset_dir(root, ds.case_id);
  for (const char* split : {"train", "val", "test"}) {
    std::filesystem::create_directories(dir / split);
    std::string text;
    for (const auto& l : ds.split(split)) text += label_to_json(l) + "\n";
    write_file(dir / split / "labels.jsonl", text);
  }
  write_file(dir / "manifest.json", manifest_json(ds));
  write_file(dir / "norm_stats.json", norm_stats_to_json(compute_norm_stats(ds.train)));
}

Dataset read_dataset(const std::filesystem::path& root, const std::string& case_id,
                     std::shared_ptr<const NetworkModel> net, bool recheck) {
  const auto dir = dataset_dir(root, case_id);
  if (!std::filesystem::exists(dir / "manifest.json"))
    throw DatasetError("no dataset for " + case_id + " under " + root.string() +
                       "; run `opflab extract --case " + case_id + " --out " + root.string() + "` first");
  Dataset ds;
  ds.case_id = case_id;
  try {
    ojson man = ojson::parse(read_file(dir / "manifest.json"));
    if (man.at("format_version").get<int>() != kDatasetFormatVersion)
      throw DatasetError("unsupported dataset format version");
    ds.seed = man.at("seed").get<std::uint64_t>();
    ds.sizes.train = man.at("splits").at("train").at("requested").get<int>();
    ds.sizes.val = man.at("splits").at("val").at("requested").get<int>();
    ds.sizes.test = man.at("splits").at("test").at("requested").get<int>();
    const auto& solver = man.at("solver");
    ds.options.ipm.tol = solver.at("tol").get<double>();
    ds.options.ipm.max_iter = solver.at("max_iter").get<int>();
    ds.options.ipm.mu_init = solver.at("mu_init").get<double>();
    ds.options.ipm.mu_linear_factor = solver.at("mu_linear_factor").get<double>();
    ds.options.ipm.mu_superlinear_power = solver.at("mu_superlinear_power").get<double>();
    ds.options.ipm.bound_push = solver.at("bound_push").get<double>();
    ds.options.flow_mode = solver.at("flow_mode").get<std::string>() == "slack" ? FlowMode::slack : FlowMode::omit;
    ds.options.flow_ends = solver.at("flow_ends").get<std::string>() == "both" ? FlowEnds::both : FlowEnds::from;
    ds.n = man.at("dimensions").at("n").get<int>();
    ds.m = man.at("dimensions").at("m").get<int>();
    for (const auto& f : man.at("failures")) {
      DualLabel d;
      d.index = f.at("index").get<int>();
      d.split = f.at("split").get<std::string>();
      d.status = f.at("status").get<std::string>();
      ds.failures.push_back(d);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed manifest: ") + e.what());
  }

  for (const char* split : {"train", "val", "test"}) {
    std::istringstream in(read_file(dir / split / "labels.jsonl"));
    auto& dst = split == std::string("train") ? ds.train : split == std::string("val") ? ds.val : ds.test;
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      DualLabel d = label_from_json(line);
      if (d.state.x.size() != ds.n || d.state.lambda.size() != ds.m)
        throw DatasetError("label " + std::to_string(d.index) + " does not match the manifest dimensions");
      dst.push_back(std::move(d));
    }
  }

  if (recheck) {
    std::vector<const DualLabel*> all;
    for (const auto* s : {&ds.train, &ds.val, &ds.test})
      for (const auto& l : *s) all.push_back(&l);
    std::vector<double> errors(all.size());
    parallel_for(static_cast<int>(all.size()), ds.options.threads, [&](int i) {
      auto p = instance_problem(net, all[i]->factors, ds.options);
      errors[i] = scaled_kkt_error(all[i]->state, *p, 0.0);
    });
    for (size_t i = 0; i < all.size(); ++i)
      if (!(errors[i] <= ds.options.ipm.tol))
        throw DatasetError("label " + std::to_string(all[i]->index) + " fails the KKT re-check (error " +
                           std::to_string(errors[i]) + ")");
  }
  return ds;
}

}  // namespace opflab
