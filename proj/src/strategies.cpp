#include "opflab/strategies.hpp"

#include <charconv>
#include <cmath>

namespace opflab {

namespace {

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_number(const std::string& s, const std::string& context) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::invalid_argument("expected a number in '" + context + "', got '" + s + "'");
  return v;
}

const char* level_name(OracleLevel l) {
  switch (l) {
    case OracleLevel::lambda: return "lambda";
    case OracleLevel::lambda_z: return "lambda_z";
    case OracleLevel::lambda_z_mu: return "lambda_z_mu";
  }
  return "";
}

std::string groups_name(unsigned g) {
  std::string out;
  const std::pair<unsigned, const char*> names[] = {{group_va, "va"}, {group_vm, "vm"}, {group_pg, "pg"}, {group_qg, "qg"}};
  for (const auto& [bit, name] : names)
    if (g & bit) out += (out.empty() ? "" : "+") + std::string(name);
  return out;
}

unsigned parse_groups(const std::string& s) {
  unsigned g = 0;
  size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find('+', start), s.size());
    const std::string tok = s.substr(start, end - start);
    if (tok == "va") g |= group_va;
    else if (tok == "vm") g |= group_vm;
    else if (tok == "pg") g |= group_pg;
    else if (tok == "qg") g |= group_qg;
    else if (tok == "all") g |= group_all;
    else throw std::invalid_argument("unknown variable group '" + tok + "' (expected va, vm, pg, qg or all)");
    start = end + 1;
  }
  return g;
}

// Cold duals with x replaced.
IpmState cold_with_x(const OpfProblem& p, const Vec& x, double mu_init) {
  IpmState s = default_start(p, mu_init);
  if (x.size() != s.x.size()) throw std::invalid_argument("primal vector has the wrong length");
  s.x = x;
  return s;
}

const DualLabel& need_label(const WarmStartSpec& spec, const WarmStartInputs& in) {
  if (!in.label) throw MissingInputError("strategy " + spec.name() + " needs a dual label");
  return *in.label;
}

const Prediction& need_prediction(const WarmStartSpec& spec, const WarmStartInputs& in) {
  if (!in.prediction) throw MissingInputError("strategy " + spec.name() + " needs a prediction");
  return *in.prediction;
}

struct RawStart {
  IpmState state;
  double push = 0.0;
};

RawStart raw_start(const WarmStartSpec& spec, const OpfProblem& p, const WarmStartInputs& in,
                   const IpmOptions& opts) {
  spec.validate();
  const Vec x_mid = default_start(p, opts.mu_init).x;
  switch (spec.kind) {
    case StrategyKind::midpoint:
      return {default_start(p, opts.mu_init), opts.bound_push};
    case StrategyKind::flat: {
      IpmState s = default_start(p, opts.mu_init);
      const auto& v = p.vars();
      s.x.segment(v.va.offset, v.va.size).setZero();
      s.x.segment(v.vm.offset, v.vm.size).setOnes();
      return {s, opts.bound_push};
    }
    case StrategyKind::oracle_primal:
      return {cold_with_x(p, need_label(spec, in).state.x, opts.mu_init), opts.bound_push};
    case StrategyKind::oracle_primal_cold_duals:
      return {cold_with_x(p, need_label(spec, in).state.x, opts.mu_init), opts.warm_bound_push};
    case StrategyKind::oracle_pd: {
      const DualLabel& l = need_label(spec, in);
      IpmState s = cold_with_x(p, l.state.x, opts.mu_init);
      s.lambda = l.state.lambda;
      if (spec.level != OracleLevel::lambda) {
        s.z_l = l.state.z_l;
        s.z_u = l.state.z_u;
      }
      if (spec.level == OracleLevel::lambda_z_mu) s.mu = l.state.mu;
      return {s, opts.warm_bound_push};
    }
    case StrategyKind::predicted:
      return {need_prediction(spec, in).state, opts.warm_bound_push};
    case StrategyKind::predicted_primal:
      return {cold_with_x(p, need_prediction(spec, in).state.x, opts.mu_init), opts.bound_push};
    case StrategyKind::blend:
      return {cold_with_x(p, blend(need_prediction(spec, in).state.x, x_mid, spec.alpha), opts.mu_init),
              opts.bound_push};
    case StrategyKind::projected:
      return {cold_with_x(p, project_interior(need_prediction(spec, in).state.x, p.lower(), p.upper(), spec.epsilon),
                          opts.mu_init),
              opts.bound_push};
    case StrategyKind::retracted:
      return {cold_with_x(p, retract(need_prediction(spec, in).state.x, p.lower(), p.upper(), spec.mu_target, x_mid),
                          opts.mu_init),
              opts.bound_push};
    case StrategyKind::selective: {
      const Vec& x_hat = need_prediction(spec, in).state.x;
      const auto mask = selective_mask(p.vars(), spec.groups, p.n());
      Vec x = x_mid;
      for (int i = 0; i < p.n(); ++i)
        if (mask[i]) x[i] = x_hat[i];
      return {cold_with_x(p, x, opts.mu_init), opts.bound_push};
    }
    case StrategyKind::hybrid:
      throw std::invalid_argument("hybrid starts screen the problem; use prepare_start");
  }
  throw std::logic_error("unhandled strategy kind");
}

}  // namespace

void WarmStartSpec::validate() const {
  switch (kind) {
    case StrategyKind::blend:
      if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("blend alpha must lie in [0, 1]");
      break;
    case StrategyKind::projected:
      if (!(epsilon > 0 && epsilon < 0.5)) throw std::invalid_argument("projection epsilon must lie in (0, 0.5)");
      break;
    case StrategyKind::retracted:
      if (!(mu_target > 0 && mu_target <= 1)) throw std::invalid_argument("retraction target must lie in (0, 1]");
      break;
    case StrategyKind::selective:
      if (groups == 0 || groups > group_all) throw std::invalid_argument("selective start needs a non-empty group set");
      break;
    case StrategyKind::hybrid:
      if (!(screen_margin > 0)) throw std::invalid_argument("screening margin must be positive");
      if (!inner) throw std::invalid_argument("hybrid start needs an inner strategy");
      if (inner->kind == StrategyKind::hybrid) throw std::invalid_argument("hybrid starts cannot nest");
      inner->validate();
      break;
    default:
      break;
  }
}

bool WarmStartSpec::needs_label() const {
  if (kind == StrategyKind::hybrid) return inner && inner->needs_label();
  return kind == StrategyKind::oracle_primal || kind == StrategyKind::oracle_primal_cold_duals ||
         kind == StrategyKind::oracle_pd;
}

bool WarmStartSpec::needs_prediction() const {
  switch (kind) {
    case StrategyKind::predicted:
    case StrategyKind::predicted_primal:
    case StrategyKind::blend:
    case StrategyKind::projected:
    case StrategyKind::retracted:
    case StrategyKind::selective:
    case StrategyKind::hybrid:
      return true;
    default:
      return false;
  }
}

std::string WarmStartSpec::name() const {
  switch (kind) {
    case StrategyKind::midpoint: return "midpoint";
    case StrategyKind::flat: return "flat";
    case StrategyKind::oracle_primal: return "oracle_primal";
    case StrategyKind::oracle_primal_cold_duals: return "oracle_primal_cold_duals";
    case StrategyKind::oracle_pd: return std::string("oracle_pd(") + level_name(level) + ")";
    case StrategyKind::predicted: return "predicted";
    case StrategyKind::predicted_primal: return "predicted_primal";
    case StrategyKind::blend: return "blend(" + shortest(alpha) + ")";
    case StrategyKind::projected: return "projected(" + shortest(epsilon) + ")";
    case StrategyKind::retracted: return "retracted(" + shortest(mu_target) + ")";
    case StrategyKind::selective: return "selective(" + groups_name(groups) + ")";
    case StrategyKind::hybrid:
      return "hybrid(" + shortest(screen_margin) + "," + (inner ? inner->name() : std::string("?")) + ")";
  }
  return "?";
}

WarmStartSpec WarmStartSpec::parse(const std::string& raw) {
  std::string text;
  for (char c : raw)
    if (!std::isspace(static_cast<unsigned char>(c))) text += c;
  WarmStartSpec s;
  const auto open = text.find('(');
  const std::string head = text.substr(0, open);
  std::string arg;
  if (open != std::string::npos) {
    if (text.back() != ')') throw std::invalid_argument("unbalanced parentheses in '" + raw + "'");
    arg = text.substr(open + 1, text.size() - open - 2);
  }
  auto no_arg = [&] {
    if (open != std::string::npos) throw std::invalid_argument("strategy '" + head + "' takes no parameter");
  };
  auto need_arg = [&] {
    if (arg.empty()) throw std::invalid_argument("strategy '" + head + "' needs a parameter");
  };
  if (head == "midpoint") no_arg(), s.kind = StrategyKind::midpoint;
  else if (head == "flat") no_arg(), s.kind = StrategyKind::flat;
  else if (head == "oracle_primal") no_arg(), s.kind = StrategyKind::oracle_primal;
  else if (head == "oracle_primal_cold_duals") no_arg(), s.kind = StrategyKind::oracle_primal_cold_duals;
  else if (head == "predicted") no_arg(), s.kind = StrategyKind::predicted;
  else if (head == "predicted_primal") no_arg(), s.kind = StrategyKind::predicted_primal;
  else if (head == "oracle_pd") {
    need_arg();
    s.kind = StrategyKind::oracle_pd;
    if (arg == "lambda") s.level = OracleLevel::lambda;
    else if (arg == "lambda_z") s.level = OracleLevel::lambda_z;
    else if (arg == "lambda_z_mu") s.level = OracleLevel::lambda_z_mu;
    else throw std::invalid_argument("oracle level must be lambda, lambda_z or lambda_z_mu");
  } else if (head == "blend") {
    need_arg();
    s.kind = StrategyKind::blend;
    s.alpha = parse_number(arg, raw);
  } else if (head == "projected") {
    need_arg();
    s.kind = StrategyKind::projected;
    s.epsilon = parse_number(arg, raw);
  } else if (head == "retracted") {
    need_arg();
    s.kind = StrategyKind::retracted;
    s.mu_target = parse_number(arg, raw);
  } else if (head == "selective") {
    need_arg();
    s.kind = StrategyKind::selective;
    s.groups = parse_groups(arg);
  } else if (head == "hybrid") {
    need_arg();
    const auto comma = arg.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("hybrid needs (margin, inner strategy)");
    s.kind = StrategyKind::hybrid;
    s.screen_margin = parse_number(arg.substr(0, comma), raw);
    s.inner = std::make_shared<const WarmStartSpec>(parse(arg.substr(comma + 1)));
  } else {
    throw std::invalid_argument("unknown strategy '" + head + "'");
  }
  s.validate();
  return s;
}

Vec blend(const Vec& x_hat, const Vec& x_mid, double alpha) {
  if (x_hat.size() != x_mid.size()) throw std::invalid_argument("blend inputs differ in length");
  if (alpha == 0.0) return x_mid;
  if (alpha == 1.0) return x_hat;
  return alpha * x_hat + (1.0 - alpha) * x_mid;
}

Vec project_interior(const Vec& x_hat, const Vec& l, const Vec& u, double eps) {
  Vec x = x_hat;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!finite_lower(l[i]) || !finite_upper(u[i]) || !(l[i] < u[i])) continue;
    const double w = u[i] - l[i];
    x[i] = std::clamp(x[i], l[i] + eps * w, u[i] - eps * w);
  }
  return x;
}

Vec retract(const Vec& x_hat, const Vec& l, const Vec& u, double mu_target, const Vec& x_mid) {
  if (!(mu_target > 0 && mu_target <= 1)) throw std::invalid_argument("retraction target must lie in (0, 1]");
  Vec x = x_hat;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!finite_lower(l[i]) || !finite_upper(u[i]) || !(l[i] < u[i])) continue;
    auto product = [&](double v) { return (v - l[i]) * (u[i] - v); };
    const double p_mid = product(x_mid[i]);
    const double target = mu_target * p_mid;
    if (product(x[i]) >= target) continue;
    if (mu_target >= 1.0) {
      x[i] = x_mid[i];
      continue;
    }
    // The product rises monotonically along the segment toward the midpoint.
    const double start = x[i];
    auto at = [&](double t) { return start + t * (x_mid[i] - start); };
    double lo = 0.0, hi = 1.0;
    for (int step = 0; step < 60; ++step) {
      if (product(at(hi)) - target <= 1e-10 * p_mid) break;
      const double t = 0.5 * (lo + hi);
      if (product(at(t)) >= target) hi = t;
      else lo = t;
    }
    x[i] = at(hi);
  }
  return x;
}

ScreenResult screen_constraints(const OpfProblem& p, const Vec& x_pred, double vm_margin) {
  if (!(vm_margin > 0)) throw std::invalid_argument("screening margin must be positive");
  if (x_pred.size() != p.n()) throw std::invalid_argument("prediction has the wrong length");
  Vec lo = p.lower(), up = p.upper();
  const Slice vm = p.vars().vm;
  int removed = 0;
  for (int i = vm.begin(); i < vm.end(); ++i) {
    if (x_pred[i] - p.lower()[i] > vm_margin) {
      lo[i] = -kScreenWidened;
      ++removed;
    }
    if (p.upper()[i] - x_pred[i] > vm_margin) {
      up[i] = kScreenWidened;
      ++removed;
    }
  }
  ScreenResult r;
  auto widened = p.with_bounds(std::move(lo), std::move(up));
  r.problem.reset(static_cast<OpfProblem*>(widened.release()));
  r.removed_fraction = vm.size ? removed / (2.0 * vm.size) : 0.0;
  r.margin = vm_margin;
  return r;
}

std::vector<char> selective_mask(const OpfVariables& vars, unsigned groups, int n) {
  std::vector<char> mask(n, 0);
  auto mark = [&](const Slice& s) {
    for (int i = s.begin(); i < s.end(); ++i) mask[i] = 1;
  };
  if (groups & group_va) mark(vars.va);
  if (groups & group_vm) mark(vars.vm);
  if (groups & group_pg) mark(vars.pg);
  if (groups & group_qg) mark(vars.qg);
  return mask;
}

IpmState build_warm_start(const WarmStartSpec& spec, const OpfProblem& p, const WarmStartInputs& in,
                          const IpmOptions& opts) {
  RawStart r = raw_start(spec, p, in, opts);
  return apply_bound_push(r.state, p, r.push);
}

PreparedStart prepare_start(const WarmStartSpec& spec, std::shared_ptr<const OpfProblem> p,
                            const WarmStartInputs& in, const IpmOptions& opts) {
  PreparedStart out;
  const WarmStartSpec* effective = &spec;
  if (spec.kind == StrategyKind::hybrid) {
    spec.validate();
    ScreenResult sr = screen_constraints(*p, need_prediction(spec, in).state.x, spec.screen_margin);
    out.problem = sr.problem;
    out.removed_fraction = sr.removed_fraction;
    effective = spec.inner.get();
  } else {
    out.problem = std::move(p);
  }
  RawStart r = raw_start(*effective, *out.problem, in, opts);
  const double mid = centrality(default_start(*out.problem, opts.mu_init), *out.problem).mu_bar;
  out.mu_ratio = mid > 0 ? centrality(r.state, *out.problem).mu_bar / mid : 1.0;
  out.state = apply_bound_push(r.state, *out.problem, r.push);
  return out;
}

}  // namespace opflab
