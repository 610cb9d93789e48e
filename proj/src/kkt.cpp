#include "opflab/kkt.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/SparseCholesky>
#include <lapacke.h>

namespace opflab {

namespace {

class DenseBunchKaufman final : public KktSolver {
 public:
  bool factor(const SparseMat& k) override {
    n_ = static_cast<int>(k.rows());
    a_ = Eigen::MatrixXd::Zero(n_, n_);
    double scale = 0.0;
    for (int c = 0; c < k.outerSize(); ++c)
      for (SparseMat::InnerIterator it(k, c); it; ++it)
        if (it.row() >= it.col()) {
          a_(it.row(), it.col()) = it.value();
          scale = std::max(scale, std::abs(it.value()));
        }
    ipiv_.assign(n_, 0);
    lapack_int info = LAPACKE_dsytrf(LAPACK_COL_MAJOR, 'L', n_, a_.data(), n_, ipiv_.data());
    if (info < 0) throw std::logic_error("dsytrf: invalid argument");

    inertia_ = {};
    const double tiny = scale * 1e-20;
    for (int i = 0; i < n_;) {
      if (ipiv_[i] > 0) {
        const double d = a_(i, i);
        if (std::abs(d) <= tiny) ++inertia_.zero;
        else if (d > 0) ++inertia_.positive;
        else ++inertia_.negative;
        ++i;
      } else {
        const double p = a_(i, i), q = a_(i + 1, i), r = a_(i + 1, i + 1);
        const double det = p * r - q * q;
        if (std::abs(det) <= tiny * tiny) {
          ++inertia_.zero;
          ++(p + r > 0 ? inertia_.positive : inertia_.negative);
        } else if (det < 0) {
          ++inertia_.positive;
          ++inertia_.negative;
        } else if (p + r > 0) {
          inertia_.positive += 2;
        } else {
          inertia_.negative += 2;
        }
        i += 2;
      }
    }
    return info == 0 && inertia_.zero == 0;
  }

  Inertia inertia() const override { return inertia_; }

  Vec solve(const Vec& rhs) const override {
    Vec x = rhs;
    lapack_int info = LAPACKE_dsytrs(LAPACK_COL_MAJOR, 'L', n_, 1, a_.data(), n_, ipiv_.data(),
                                     x.data(), n_);
    if (info != 0) throw std::runtime_error("dsytrs failed");
    return x;
  }

  std::string name() const override { return "dense-bunch-kaufman"; }

 private:
  int n_ = 0;
  Eigen::MatrixXd a_;
  std::vector<lapack_int> ipiv_;
  Inertia inertia_;
};

class SparseLdlt final : public KktSolver {
 public:
  bool factor(const SparseMat& k) override {
    SparseMat lower = k.triangularView<Eigen::Lower>();
    if (!analyzed_ || lower.nonZeros() != pattern_nnz_) {
      ldlt_.analyzePattern(lower);
      analyzed_ = true;
      pattern_nnz_ = lower.nonZeros();
    }
    ldlt_.factorize(lower);
    inertia_ = {};
    if (ldlt_.info() != Eigen::Success) {
      inertia_.zero = 1;
      return false;
    }
    const Vec d = ldlt_.vectorD();
    const double tiny = d.size() ? d.cwiseAbs().maxCoeff() * 1e-20 : 0.0;
    for (int i = 0; i < d.size(); ++i) {
      if (std::abs(d[i]) <= tiny) ++inertia_.zero;
      else if (d[i] > 0) ++inertia_.positive;
      else ++inertia_.negative;
    }
    return inertia_.zero == 0;
  }

  Inertia inertia() const override { return inertia_; }
  Vec solve(const Vec& rhs) const override { return ldlt_.solve(rhs); }
  std::string name() const override { return "sparse-ldlt-amd"; }
  bool needs_static_regularization() const override { return true; }

 private:
  Eigen::SimplicialLDLT<SparseMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  bool analyzed_ = false;
  Eigen::Index pattern_nnz_ = 0;
  Inertia inertia_;
};

}  // namespace

std::unique_ptr<KktSolver> make_kkt_solver(KktBackend backend, int dim, int dense_limit) {
  if (backend == KktBackend::dense || (backend == KktBackend::automatic && dim < dense_limit))
    return std::make_unique<DenseBunchKaufman>();
  return std::make_unique<SparseLdlt>();
}

KktBackend parse_kkt_backend(const std::string& name) {
  if (name == "auto" || name == "automatic") return KktBackend::automatic;
  if (name == "dense") return KktBackend::dense;
  if (name == "sparse") return KktBackend::sparse;
  throw std::invalid_argument("unknown linear solver '" + name + "' (expected auto, dense or sparse)");
}

}  // namespace opflab
