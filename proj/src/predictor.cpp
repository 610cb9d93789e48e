#include "opflab/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/LU>
#include <json.hpp>

namespace opflab {

using ojson = nlohmann::ordered_json;

namespace {

constexpr double kMuFloor = 1e-12;

std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

ojson matrix_json(const Eigen::MatrixXd& a) {
  ojson rows = ojson::array();
  for (Eigen::Index r = 0; r < a.rows(); ++r) rows.push_back(to_std(a.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from_json(const ojson& j) {
  if (j.empty()) return {};
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto row = j[r].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw std::invalid_argument("ragged matrix in model file");
    a.row(r) = to_vec(row).transpose();
  }
  return a;
}

double pearson(const Vec& a, const Vec& b, bool& defined) {
  const Vec da = a.array() - a.mean();
  const Vec db = b.array() - b.mean();
  const double na = da.norm(), nb = db.norm();
  if (a.size() < 2 || na == 0.0 || nb == 0.0) {
    defined = false;
    return std::numeric_limits<double>::quiet_NaN();
  }
  defined = true;
  return da.dot(db) / (na * nb);
}

}  // namespace

void PredictorConfig::validate() const {
  if (k < 1) throw std::invalid_argument("knn needs k >= 1");
  if (!(lambda_reg >= 0)) throw std::invalid_argument("ridge needs lambda_reg >= 0");
  if (!(nonbinding_weight >= 0 && nonbinding_weight <= 1))
    throw std::invalid_argument("nonbinding_weight must lie in [0, 1]");
}

std::string PredictorConfig::name() const {
  std::ostringstream ss;
  if (backend == PredictorBackend::knn) ss << "knn(" << k << ")";
  else ss << "ridge(" << lambda_reg << ")";
  return ss.str();
}

PredictorConfig PredictorConfig::parse(const std::string& text) {
  PredictorConfig c;
  const auto open = text.find('(');
  const auto close = text.rfind(')');
  if (open == std::string::npos || close != text.size() - 1)
    throw std::invalid_argument("predictor must look like knn(<k>) or ridge(<lambda>): '" + text + "'");
  const std::string head = text.substr(0, open);
  const std::string arg = text.substr(open + 1, close - open - 1);
  try {
    size_t used = 0;
    if (head == "knn") {
      c.backend = PredictorBackend::knn;
      c.k = std::stoi(arg, &used);
    } else if (head == "ridge") {
      c.backend = PredictorBackend::ridge;
      c.lambda_reg = std::stod(arg, &used);
    } else {
      throw std::invalid_argument("unknown predictor backend '" + head + "'");
    }
    if (used != arg.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::logic_error&) {
    throw std::invalid_argument("bad predictor specification '" + text + "'");
  }
  c.validate();
  return c;
}

Vec load_features(const NetworkModel& net, const std::vector<double>& factors) {
  const auto buses = load_buses(net);
  LoadProfile lp = instance_loads(net, factors);
  const auto nl = static_cast<Eigen::Index>(buses.size());
  Vec f(2 * nl);
  for (Eigen::Index k = 0; k < nl; ++k) {
    f[k] = lp.pd[buses[k]];
    f[nl + k] = lp.qd[buses[k]];
  }
  return f;
}

PredictorModel fit(const NetworkModel& net, const std::vector<DualLabel>& train, const NormStats& stats,
                   const PredictorConfig& config) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("cannot fit on an empty training split");
  PredictorModel model;
  model.config = config;
  model.targets = stats;

  const auto count = static_cast<Eigen::Index>(train.size());
  const Eigen::Index nf = load_features(net, train.front().factors).size();
  Eigen::MatrixXd raw(count, nf);
  for (Eigen::Index i = 0; i < count; ++i) raw.row(i) = load_features(net, train[i].factors).transpose();
  model.features.mean = raw.colwise().mean().transpose();
  model.features.scale = ((raw.rowwise() - model.features.mean.transpose()).cwiseAbs2().colwise().sum() /
                          static_cast<double>(count))
                             .cwiseSqrt()
                             .transpose();
  for (Eigen::Index j = 0; j < nf; ++j)
    if (!(model.features.scale[j] > 1e-12 * std::max(1.0, std::abs(model.features.mean[j]))))
      model.features.scale[j] = 1.0;
  Eigen::MatrixXd phi = (raw.rowwise() - model.features.mean.transpose()).array().rowwise() /
                        model.features.scale.transpose().array();

  const Eigen::Index nt = stats.mean.size();
  Eigen::MatrixXd targets(count, nt);
  double mu_sum = 0.0;
  for (Eigen::Index i = 0; i < count; ++i) {
    targets.row(i) = normalize(pack_state(train[i].state), stats).transpose();
    mu_sum += train[i].state.mu;
  }
  model.mu_mean = mu_sum / static_cast<double>(count);

  if (config.backend == PredictorBackend::knn) {
    model.train_inputs = phi;
    model.train_targets = targets;
    return model;
  }

  // Weighted ridge per output dimension; the intercept is not penalized.
  const int n = stats.n, m = stats.m;
  Eigen::MatrixXd weights = Eigen::MatrixXd::Ones(count, nt);
  for (Eigen::Index i = 0; i < count; ++i) {
    BindingMask mask = binding_mask(train[i]);
    for (int j = 0; j < n; ++j) {
      if (!mask.lower[j]) weights(i, n + m + j) = config.nonbinding_weight;
      if (!mask.upper[j]) weights(i, 2 * n + m + j) = config.nonbinding_weight;
    }
  }

  // Centering on the weighted feature mean removes the intercept from the
  // normal equations, so a large lambda_reg does not swamp it.
  struct Factored {
    double total = 0.0;
    Vec center;
    Eigen::MatrixXd centered;
    Eigen::FullPivLU<Eigen::MatrixXd> lu;
  };
  auto factor = [&](const Vec& w) {
    Factored f;
    f.total = w.sum();
    if (f.total <= 0.0) return f;
    f.center = phi.transpose() * w / f.total;
    f.centered = phi.rowwise() - f.center.transpose();
    Eigen::MatrixXd normal = f.centered.transpose() * w.asDiagonal() * f.centered;
    normal.diagonal().array() += config.lambda_reg;
    f.lu.compute(normal);
    f.lu.setThreshold(1e-10);
    if (!f.lu.isInvertible())
      throw SingularRidgeError("ridge normal equations are singular; use lambda_reg > 0 or non-collinear features");
    return f;
  };
  model.intercept.resize(nt);
  model.coef.resize(nt, nf);
  auto solve_dim = [&](const Vec& w, Eigen::Index d, const Factored& f) {
    if (f.total <= 0.0) {
      // no weighted rows: predict the training mean
      model.intercept[d] = 0.0;
      model.coef.row(d).setZero();
      return;
    }
    const Vec y = targets.col(d);
    const Vec beta = f.lu.solve(f.centered.transpose() * w.cwiseProduct(y));
    model.intercept[d] = w.dot(y) / f.total - f.center.dot(beta);
    model.coef.row(d) = beta.transpose();
  };
  const Vec ones = Vec::Ones(count);
  const Factored shared = factor(ones);
  for (Eigen::Index d = 0; d < nt; ++d) {
    const Vec w = weights.col(d);
    if ((w.array() == 1.0).all()) solve_dim(w, d, shared);
    else solve_dim(w, d, factor(w));
  }
  return model;
}

Prediction predict(const PredictorModel& model, const Vec& features) {
  if (features.size() != model.features.mean.size())
    throw std::invalid_argument("feature vector has the wrong length");
  const Vec phi = (features - model.features.mean).cwiseQuotient(model.features.scale);
  Prediction pred;
  if (model.config.backend == PredictorBackend::knn) {
    const auto count = model.train_inputs.rows();
    std::vector<std::pair<double, Eigen::Index>> dist(count);
    for (Eigen::Index i = 0; i < count; ++i)
      dist[i] = {(model.train_inputs.row(i).transpose() - phi).squaredNorm(), i};
    const auto k = std::min<Eigen::Index>(model.config.k, count);
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    pred.normalized = Vec::Zero(model.train_targets.cols());
    for (Eigen::Index j = 0; j < k; ++j) pred.normalized += model.train_targets.row(dist[j].second).transpose();
    pred.normalized /= static_cast<double>(k);
  } else {
    pred.normalized = model.intercept + model.coef * phi;
  }
  pred.state = unpack_state(denormalize(pred.normalized, model.targets), model.targets.n, model.targets.m);
  pred.state.z_l = pred.state.z_l.cwiseMax(0.0);
  pred.state.z_u = pred.state.z_u.cwiseMax(0.0);
  const double mu = model.config.mu_from_training_mean ? model.mu_mean : pred.state.mu;
  pred.state.mu = std::max(mu, kMuFloor);
  return pred;
}

std::vector<GroupMetrics> eval_metrics(const IpmState& prediction, const IpmState& truth, const OpfProblem& p) {
  if (prediction.x.size() != truth.x.size() || prediction.lambda.size() != truth.lambda.size())
    throw std::invalid_argument("prediction and label dimensions differ");
  const OpfVariables& v = p.vars();
  const int nb = v.n_bus;
  struct Group {
    std::string name;
    const Vec* a;
    const Vec* b;
    Eigen::Index offset, size;
  };
  std::vector<Group> groups = {{"Va", &prediction.x, &truth.x, v.va.offset, v.va.size},
                               {"Vm", &prediction.x, &truth.x, v.vm.offset, v.vm.size},
                               {"Pg", &prediction.x, &truth.x, v.pg.offset, v.pg.size},
                               {"Qg", &prediction.x, &truth.x, v.qg.offset, v.qg.size}};
  if (v.flow.size) groups.push_back({"flow", &prediction.x, &truth.x, v.flow.offset, v.flow.size});
  groups.push_back({"lambda_P", &prediction.lambda, &truth.lambda, 0, nb});
  groups.push_back({"lambda_Q", &prediction.lambda, &truth.lambda, nb, nb});
  if (p.m() > 2 * nb) groups.push_back({"lambda_flow", &prediction.lambda, &truth.lambda, 2 * nb, p.m() - 2 * nb});
  groups.push_back({"z_l", &prediction.z_l, &truth.z_l, 0, prediction.z_l.size()});
  groups.push_back({"z_u", &prediction.z_u, &truth.z_u, 0, prediction.z_u.size()});

  std::vector<GroupMetrics> out;
  for (const auto& g : groups) {
    const Vec a = g.a->segment(g.offset, g.size);
    const Vec b = g.b->segment(g.offset, g.size);
    GroupMetrics gm;
    gm.group = g.name;
    gm.rmse = g.size ? std::sqrt((a - b).squaredNorm() / static_cast<double>(g.size)) : 0.0;
    gm.pearson = pearson(a, b, gm.pearson_defined);
    out.push_back(gm);
  }
  return out;
}

std::string model_to_json(const PredictorModel& model) {
  ojson j;
  j["format_version"] = 1;
  j["backend"] = model.config.backend == PredictorBackend::knn ? "knn" : "ridge";
  j["k"] = model.config.k;
  j["lambda_reg"] = model.config.lambda_reg;
  j["nonbinding_weight"] = model.config.nonbinding_weight;
  j["mu_from_training_mean"] = model.config.mu_from_training_mean;
  j["mu_mean"] = model.mu_mean;
  j["feature_mean"] = to_std(model.features.mean);
  j["feature_scale"] = to_std(model.features.scale);
  j["target_n"] = model.targets.n;
  j["target_m"] = model.targets.m;
  j["target_mean"] = to_std(model.targets.mean);
  j["target_scale"] = to_std(model.targets.scale);
  if (model.config.backend == PredictorBackend::knn) {
    j["train_inputs"] = matrix_json(model.train_inputs);
    j["train_targets"] = matrix_json(model.train_targets);
  } else {
    j["intercept"] = to_std(model.intercept);
    j["coef"] = matrix_json(model.coef);
  }
  return j.dump() + "\n";
}

PredictorModel model_from_json(const std::string& text) {
  PredictorModel model;
  try {
    ojson j = ojson::parse(text);
    model.config.backend = j.at("backend").get<std::string>() == "knn" ? PredictorBackend::knn : PredictorBackend::ridge;
    model.config.k = j.at("k").get<int>();
    model.config.lambda_reg = j.at("lambda_reg").get<double>();
    model.config.nonbinding_weight = j.at("nonbinding_weight").get<double>();
    model.config.mu_from_training_mean = j.at("mu_from_training_mean").get<bool>();
    model.mu_mean = j.at("mu_mean").get<double>();
    model.features.mean = to_vec(j.at("feature_mean").get<std::vector<double>>());
    model.features.scale = to_vec(j.at("feature_scale").get<std::vector<double>>());
    model.targets.n = j.at("target_n").get<int>();
    model.targets.m = j.at("target_m").get<int>();
    model.targets.mean = to_vec(j.at("target_mean").get<std::vector<double>>());
    model.targets.scale = to_vec(j.at("target_scale").get<std::vector<double>>());
    if (model.config.backend == PredictorBackend::knn) {
      model.train_inputs = matrix_from_json(j.at("train_inputs"));
      model.train_targets = matrix_from_json(j.at("train_targets"));
    } else {
      model.intercept = to_vec(j.at("intercept").get<std::vector<double>>());
      model.coef = matrix_from_json(j.at("coef"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed predictor model: ") + e.what());
  }
  model.config.validate();
  return model;
}

}  // namespace opflab
