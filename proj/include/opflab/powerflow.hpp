#pragma once

#include <stdexcept>

#include "opflab/casefile.hpp"
#include "opflab/nlp.hpp"

namespace opflab {

enum class PfInitKind { flat, dc, custom };

struct PfInit {
  PfInitKind kind = PfInitKind::flat;
  Vec vm;  // custom only
  Vec va;

  static PfInit flat() { return {}; }
  static PfInit dc() { return {PfInitKind::dc, {}, {}}; }
  static PfInit custom(Vec vm, Vec va) { return {PfInitKind::custom, std::move(vm), std::move(va)}; }
};

struct PfOptions {
  double tol = 1e-8;
  int max_iter = 20;
};

struct PfResult {
  Vec vm;
  Vec va;
  int iterations = 0;  // Jacobian solves
  bool converged = false;
  double mismatch = 0.0;  // infinity norm of the final mismatch
};

class SingularNetworkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Newton-Raphson on the polar mismatch equations. Generator real power and
// voltage setpoints come from the case; the slack bus absorbs the balance.
PfResult solve_pf(const NetworkModel& net, const LoadProfile& loads, const PfInit& init = PfInit::flat(),
                  const PfOptions& opts = {});

// Susceptance-only linearization B' theta = P with the slack angle at zero.
Vec dc_angles(const NetworkModel& net, const LoadProfile& loads);

// Real injections used by dc_angles, for residual checks.
Vec dc_injections(const NetworkModel& net, const LoadProfile& loads);
SparseMat dc_bprime(const NetworkModel& net);

}  // namespace opflab
