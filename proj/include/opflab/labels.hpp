#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "opflab/acopf.hpp"
#include "opflab/ipm.hpp"

namespace opflab {

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr double kLoadFactorLow = 0.8;
inline constexpr double kLoadFactorHigh = 1.2;
inline constexpr double kBindingThreshold = 1e-4;

// Buses carrying a nonzero P or Q load, in bus order.
std::vector<int> load_buses(const NetworkModel& net);

struct InstanceSpec {
  std::string case_id;
  std::uint64_t seed = 0;
  int index = 0;                // position in the generated sequence
  std::vector<double> factors;  // one per load bus, applied to P and Q
};

std::vector<InstanceSpec> generate_instances(const NetworkModel& net, int n, std::uint64_t seed);

LoadProfile instance_loads(const NetworkModel& net, const std::vector<double>& factors);

struct ExtractOptions {
  IpmOptions ipm;
  FlowMode flow_mode = FlowMode::omit;
  FlowEnds flow_ends = FlowEnds::from;
  int threads = 0;  // 0 = hardware concurrency
};

FlowLimits make_flow_limits(const NetworkModel& net, const ExtractOptions& opts);

// Problem for one instance under the extraction settings.
std::shared_ptr<OpfProblem> instance_problem(std::shared_ptr<const NetworkModel> net,
                                             const std::vector<double>& factors,
                                             const ExtractOptions& opts);

struct DualLabel {
  int index = 0;
  std::string split;
  std::vector<double> factors;
  IpmState state;  // x*, lambda*, z_l*, z_u*, mu*
  double objective = 0.0;
  int cold_iterations = 0;
  bool converged = false;
  std::string status;
};

// Solves every instance cold from the midpoint. Results are ordered like the
// input regardless of completion order.
std::vector<DualLabel> extract_labels(std::shared_ptr<const NetworkModel> net,
                                      const std::vector<InstanceSpec>& instances,
                                      const ExtractOptions& opts);

struct SplitSizes {
  int train = 500;
  int val = 50;
  int test = 50;
  int total() const { return train + val + test; }
};

struct Dataset {
  std::string case_id;
  std::uint64_t seed = 0;
  SplitSizes sizes;
  ExtractOptions options;
  int n = 0;
  int m = 0;
  std::vector<DualLabel> train, val, test;  // converged labels only
  std::vector<DualLabel> failures;          // non-converged instances

  const std::vector<DualLabel>& split(const std::string& name) const;
  double convergence_rate() const;
};

// Generates train, val and test instances from one seeded stream (in that
// order) and extracts labels for all of them.
Dataset build_dataset(std::shared_ptr<const NetworkModel> net, const SplitSizes& sizes, std::uint64_t seed,
                      const ExtractOptions& opts);

// Concatenated (x, lambda, z_l, z_u, mu).
Vec pack_state(const IpmState& s);
IpmState unpack_state(const Vec& v, int n, int m);

struct NormStats {
  Vec mean;
  Vec scale;  // std, or 1 where the training std is zero
  int n = 0;
  int m = 0;
};

NormStats compute_norm_stats(const std::vector<DualLabel>& train);
Vec normalize(const Vec& v, const NormStats& stats);
Vec denormalize(const Vec& v, const NormStats& stats);

struct BindingMask {
  std::vector<char> lower;  // |z_l*| > threshold
  std::vector<char> upper;
};

BindingMask binding_mask(const DualLabel& label, double threshold = kBindingThreshold);

struct GroupSparsity {
  std::string group;
  int bound_sides = 0;  // finite bound sides in the group
  int nonbinding = 0;
  double fraction_nonbinding() const { return bound_sides ? double(nonbinding) / bound_sides : 0.0; }
};

// Fraction of non-binding bound multipliers per variable group, over all
// labels and finite bound sides.
std::vector<GroupSparsity> sparsity_summary(const std::vector<DualLabel>& labels, const OpfProblem& p,
                                            double threshold = kBindingThreshold);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// duals/<case>/<split>/labels.jsonl, duals/<case>/manifest.json and
// duals/<case>/norm_stats.json under `root`.
std::filesystem::path dataset_dir(const std::filesystem::path& root, const std::string& case_id);
void write_dataset(const std::filesystem::path& root, const Dataset& ds);

// Reads a dataset written by write_dataset. With `recheck`, each label's
// mu = 0 scaled KKT error is recomputed and must not exceed the stored
// tolerance; a failing label raises DatasetError.
Dataset read_dataset(const std::filesystem::path& root, const std::string& case_id,
                     std::shared_ptr<const NetworkModel> net, bool recheck = true);

std::string label_to_json(const DualLabel& label);
DualLabel label_from_json(const std::string& line);

std::string norm_stats_to_json(const NormStats& stats);
NormStats norm_stats_from_json(const std::string& text);

std::string manifest_json(const Dataset& ds);

}  // namespace opflab
