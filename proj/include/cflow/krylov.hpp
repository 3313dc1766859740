/*
  Matrix-free GMRES: Eigen's unsupported IterativeSolvers driven by a callable.
*/

#pragma once

#include "cflow/core.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <unsupported/Eigen/IterativeSolvers>

#include <functional>
#include <sstream>
#include <string>

namespace cflow {
class LinearOperator;
}

namespace Eigen::internal {
template <>
struct traits<cflow::LinearOperator> : public Eigen::internal::traits<Eigen::SparseMatrix<double>> {};
}  // namespace Eigen::internal

namespace cflow {

/// y = A x through a callable; only the product is ever formed.
class LinearOperator : public Eigen::EigenBase<LinearOperator> {
 public:
  using Scalar = double;
  using RealScalar = double;
  using StorageIndex = int;
  enum { ColsAtCompileTime = Eigen::Dynamic, MaxColsAtCompileTime = Eigen::Dynamic, IsRowMajor = false };

  LinearOperator(Eigen::Index n, std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply)
      : n_(n), apply_(std::move(apply)) {}

  Eigen::Index rows() const { return n_; }
  Eigen::Index cols() const { return n_; }
  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return apply_(x); }

  template <typename Rhs>
  Eigen::Product<LinearOperator, Rhs, Eigen::AliasFreeProduct> operator*(const Eigen::MatrixBase<Rhs>& x) const {
    return Eigen::Product<LinearOperator, Rhs, Eigen::AliasFreeProduct>(*this, x.derived());
  }

 private:
  Eigen::Index n_;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply_;
};

}  // namespace cflow

namespace Eigen::internal {
template <typename Rhs>
struct generic_product_impl<cflow::LinearOperator, Rhs, SparseShape, DenseShape, GemvProduct>
    : generic_product_impl_base<cflow::LinearOperator, Rhs,
                                generic_product_impl<cflow::LinearOperator, Rhs>> {
  using Scalar = typename Product<cflow::LinearOperator, Rhs>::Scalar;
  template <typename Dest>
  static void scaleAndAddTo(Dest& dst, const cflow::LinearOperator& lhs, const Rhs& rhs, const Scalar& alpha) {
    dst.noalias() += alpha * lhs(Eigen::VectorXd(rhs));
  }
};
}  // namespace Eigen::internal

namespace cflow {

struct KrylovReport {
  int iterations = 0;
  double relative_residual = 0.0;
};

struct KrylovOptions {
  double tol = 1e-10;
  int max_iter = 500;
  int restart = 150;
};

/// Solves A x = b with restarted GMRES; throws LinearSolveFail when the tolerance is missed.
inline Eigen::VectorXd gmres_solve(const LinearOperator& A, const Eigen::VectorXd& b, KrylovReport* rep = nullptr,
                                   const KrylovOptions& opt = {}, const Eigen::VectorXd* guess = nullptr) {
  Eigen::GMRES<LinearOperator, Eigen::IdentityPreconditioner> solver;
  solver.setTolerance(opt.tol);
  solver.setMaxIterations(opt.max_iter);
  solver.set_restart(opt.restart);
  solver.compute(A);
  Eigen::VectorXd x;
  if (b.norm() == 0.0) {
    x = Eigen::VectorXd::Zero(b.size());
    if (rep) *rep = {};
    return x;
  }
  if (guess)
    x = solver.solveWithGuess(b, *guess);
  else
    x = solver.solve(b);
  const double rel = (A(x) - b).norm() / b.norm();
  if (rep) {
    rep->iterations = static_cast<int>(solver.iterations());
    rep->relative_residual = rel;
  }
  if (!std::isfinite(rel) || rel > 10.0 * opt.tol)
  {
    std::ostringstream msg;
    msg << "GMRES reached relative residual " << std::scientific << rel << " after " << solver.iterations()
        << " iterations";
    fail(ErrorCode::LinearSolveFail, msg.str());
  }
  return x;
}

}  // namespace cflow
