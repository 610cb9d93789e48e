#pragma once

#include <cmath>
#include <memory>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace opflab {

using Vec = Eigen::VectorXd;
using SparseMat = Eigen::SparseMatrix<double>;

// Bounds at or beyond this magnitude are treated as absent.
inline constexpr double kInfBound = 1e19;

inline bool finite_lower(double l) { return l > -kInfBound; }
inline bool finite_upper(double u) { return u < kInfBound; }

// min f(x) s.t. h(x) = 0, l <= x <= u.
//
// Jacobian and Hessian sparsity patterns are fixed: evaluators emit the same
// structural entries for every x. The Hessian is returned as a full
// symmetric matrix of  obj_factor * grad^2 f + sum_i lambda_i grad^2 h_i.
class NlpProblem {
 public:
  NlpProblem() = default;
  NlpProblem(Vec lower, Vec upper, int m) : lower_(std::move(lower)), upper_(std::move(upper)), m_(m) {}
  virtual ~NlpProblem() = default;

  int n() const { return static_cast<int>(lower_.size()); }
  int m() const { return m_; }
  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }

  virtual double objective(const Vec& x) const = 0;
  virtual Vec gradient(const Vec& x) const = 0;
  virtual Vec constraints(const Vec& x) const = 0;
  virtual SparseMat jacobian(const Vec& x) const = 0;
  virtual SparseMat hessian(const Vec& x, const Vec& lambda, double obj_factor = 1.0) const = 0;

  virtual std::unique_ptr<NlpProblem> clone() const = 0;

  // Same evaluators, different box.
  std::unique_ptr<NlpProblem> with_bounds(Vec lower, Vec upper) const {
    auto p = clone();
    p->lower_ = std::move(lower);
    p->upper_ = std::move(upper);
    return p;
  }

 protected:
  Vec lower_;
  Vec upper_;
  int m_ = 0;
};

}  // namespace opflab
