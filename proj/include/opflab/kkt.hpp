#pragma once

#include <memory>
#include <string>

#include "opflab/nlp.hpp"

namespace opflab {

struct Inertia {
  int positive = 0;
  int negative = 0;
  int zero = 0;
};

enum class KktBackend { automatic, dense, sparse };

// Symmetric indefinite factorization with inertia reporting.
class KktSolver {
 public:
  virtual ~KktSolver() = default;
  // Only the lower triangle of `k` is read. Returns false on a singular or
  // otherwise failed factorization.
  virtual bool factor(const SparseMat& k) = 0;
  virtual Inertia inertia() const = 0;
  virtual Vec solve(const Vec& rhs) const = 0;
  virtual std::string name() const = 0;
  // True when the factorization does not pivot and so needs a quasi-definite
  // matrix (a nonzero constraint regularization).
  virtual bool needs_static_regularization() const { return false; }
};

// Dense Bunch-Kaufman (LAPACK dsytrf) below `dense_limit` rows, sparse
// LDL^T with AMD ordering otherwise.
std::unique_ptr<KktSolver> make_kkt_solver(KktBackend backend, int dim, int dense_limit = 500);

KktBackend parse_kkt_backend(const std::string& name);

}  // namespace opflab
