#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "opflab/labels.hpp"

namespace opflab {

enum class PredictorBackend { knn, ridge };

struct PredictorConfig {
  PredictorBackend backend = PredictorBackend::knn;
  int k = 5;
  double lambda_reg = 1e-3;
  double nonbinding_weight = 0.1;
  // Emit the training-split mean of mu* instead of the regressed value.
  bool mu_from_training_mean = true;

  void validate() const;
  std::string name() const;
  // "knn(5)" or "ridge(0.001)".
  static PredictorConfig parse(const std::string& text);
};

class SingularRidgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FeatureStats {
  Vec mean;
  Vec scale;
};

// Per-load (Pd, Qd) in p.u., loads in bus order, all Pd then all Qd.
Vec load_features(const NetworkModel& net, const std::vector<double>& factors);

struct PredictorModel {
  PredictorConfig config;
  NormStats targets;
  FeatureStats features;
  double mu_mean = 0.0;
  // knn: normalized training inputs (rows) and targets (rows).
  Eigen::MatrixXd train_inputs;
  Eigen::MatrixXd train_targets;
  // ridge: intercept and coefficients per output dimension.
  Vec intercept;
  Eigen::MatrixXd coef;  // outputs x features
};

struct Prediction {
  Vec normalized;  // packed (x, lambda, z_l, z_u, mu) in normalized space
  IpmState state;  // denormalized, z clamped at 0, mu floored
};

PredictorModel fit(const NetworkModel& net, const std::vector<DualLabel>& train, const NormStats& stats,
                   const PredictorConfig& config);

Prediction predict(const PredictorModel& model, const Vec& features);

struct GroupMetrics {
  std::string group;
  double rmse = 0.0;
  double pearson = 0.0;
  bool pearson_defined = true;  // false when either side has zero variance
};

// Raw-space errors per variable and multiplier group.
std::vector<GroupMetrics> eval_metrics(const IpmState& prediction, const IpmState& truth, const OpfProblem& p);

std::string model_to_json(const PredictorModel& model);
PredictorModel model_from_json(const std::string& text);

}  // namespace opflab
