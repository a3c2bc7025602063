#pragma once

// Dense complex linear algebra backed by LAPACK (zgetrf/zgetrs/zgecon/zgesdd).

#include "stokesres/common.hpp"

#include <lapacke.h>

#include <algorithm>
#include <limits>
#include <vector>

namespace stokesres {

/// LU factorization of a square complex matrix.
class LUFactor {
public:
  explicit LUFactor(CMatrix A) : lu_(std::move(A)) {
    if (lu_.rows() != lu_.cols()) throw DomainError("LU: matrix must be square");
    const lapack_int n = static_cast<lapack_int>(lu_.rows());
    anorm_ = lu_.cwiseAbs().colwise().sum().maxCoeff();
    piv_.resize(n);
    const lapack_int info = LAPACKE_zgetrf(LAPACK_COL_MAJOR, n, n, reinterpret_cast<lapack_complex_double*>(lu_.data()),
                                           n, piv_.data());
    if (info < 0) throw NumericalError("zgetrf: illegal argument");
    singular_ = info > 0;
  }

  bool singular() const { return singular_; }

  /// Reciprocal 1-norm condition number estimate.
  double rcond() const {
    if (singular_) return 0.0;
    const lapack_int n = static_cast<lapack_int>(lu_.rows());
    double rc = 0.0;
    const lapack_int info = LAPACKE_zgecon(LAPACK_COL_MAJOR, '1', n,
                                           reinterpret_cast<const lapack_complex_double*>(lu_.data()), n, anorm_, &rc);
    if (info != 0) throw NumericalError("zgecon failed");
    return rc;
  }

  CMatrix solve(const CMatrix& B) const {
    if (singular_) throw NumericalError("LU: matrix is exactly singular");
    CMatrix X = B;
    const lapack_int n = static_cast<lapack_int>(lu_.rows());
    const lapack_int info =
        LAPACKE_zgetrs(LAPACK_COL_MAJOR, 'N', n, static_cast<lapack_int>(X.cols()),
                       reinterpret_cast<const lapack_complex_double*>(lu_.data()), n, piv_.data(),
                       reinterpret_cast<lapack_complex_double*>(X.data()), n);
    if (info != 0) throw NumericalError("zgetrs failed");
    return X;
  }

  /// Solves A^H x = b.
  CMatrix solve_adjoint(const CMatrix& B) const {
    if (singular_) throw NumericalError("LU: matrix is exactly singular");
    CMatrix X = B;
    const lapack_int n = static_cast<lapack_int>(lu_.rows());
    const lapack_int info =
        LAPACKE_zgetrs(LAPACK_COL_MAJOR, 'C', n, static_cast<lapack_int>(X.cols()),
                       reinterpret_cast<const lapack_complex_double*>(lu_.data()), n, piv_.data(),
                       reinterpret_cast<lapack_complex_double*>(X.data()), n);
    if (info != 0) throw NumericalError("zgetrs failed");
    return X;
  }

private:
  CMatrix lu_;
  std::vector<lapack_int> piv_;
  double anorm_ = 0.0;
  bool singular_ = false;
};

/// Thin SVD A = U diag(sigma) V^H, singular values descending.
struct SVDResult {
  CMatrix U;
  RVector sigma;
  CMatrix V;
};

inline SVDResult svd(CMatrix A, bool vectors = true) {
  const lapack_int m = static_cast<lapack_int>(A.rows()), n = static_cast<lapack_int>(A.cols());
  const lapack_int k = std::min(m, n);
  SVDResult r;
  r.sigma.resize(k);
  CMatrix U(vectors ? m : 1, vectors ? k : 1), VT(vectors ? k : 1, vectors ? n : 1);
  const lapack_int info = LAPACKE_zgesdd(LAPACK_COL_MAJOR, vectors ? 'S' : 'N', m, n,
                                         reinterpret_cast<lapack_complex_double*>(A.data()), m, r.sigma.data(),
                                         reinterpret_cast<lapack_complex_double*>(U.data()), vectors ? m : 1,
                                         reinterpret_cast<lapack_complex_double*>(VT.data()), vectors ? k : 1);
  if (info != 0) throw NumericalError("zgesdd did not converge");
  if (vectors) {
    r.U = std::move(U);
    r.V = VT.adjoint();
  }
  return r;
}

/// Outcome of dense_solve.
struct DenseSolveResult {
  CMatrix x;
  double residual = 0.0;        ///< max over columns of ||Ax - b|| / ||b||
  double condition = 0.0;       ///< 1-norm condition estimate (or sigma_max/sigma_min on fallback)
  bool rank_deficient = false;  ///< true when the SVD fallback truncated singular values
  RVector smallest_sigma;       ///< smallest singular values on fallback
  CMatrix smallest_vectors;     ///< matching right singular vectors
};

/// LU solve with residual check; falls back to a truncated SVD when LU is singular or the
/// residual exceeds residual_tol.
inline DenseSolveResult dense_solve(const CMatrix& A, const CMatrix& B, double residual_tol = 1e-10,
                                    double rank_tol = 1e-12) {
  if (A.rows() != A.cols()) throw DomainError("dense_solve: matrix must be square");
  if (B.rows() != A.rows()) throw DomainError("dense_solve: right-hand side size mismatch");
  DenseSolveResult res;
  auto residual = [&](const CMatrix& X) {
    double worst = 0.0;
    const CMatrix R = A * X - B;
    for (Eigen::Index j = 0; j < B.cols(); ++j) {
      const double nb = B.col(j).norm();
      worst = std::max(worst, nb > 0.0 ? R.col(j).norm() / nb : R.col(j).norm());
    }
    return worst;
  };
  LUFactor lu(A);
  if (!lu.singular()) {
    res.x = lu.solve(B);
    res.residual = residual(res.x);
    const double rc = lu.rcond();
    res.condition = rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    if (res.residual <= residual_tol && res.condition < 1.0 / rank_tol) return res;
  }
  SVDResult s = svd(A);
  const double smax = s.sigma(0);
  const Eigen::Index n = s.sigma.size();
  CMatrix UhB = s.U.adjoint() * B;
  Eigen::Index kept = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (s.sigma(i) > rank_tol * smax) {
      UhB.row(i) /= s.sigma(i);
      ++kept;
    } else {
      UhB.row(i).setZero();
    }
  }
  res.x = s.V * UhB;
  res.residual = residual(res.x);
  res.condition = s.sigma(n - 1) > 0.0 ? smax / s.sigma(n - 1) : std::numeric_limits<double>::infinity();
  res.rank_deficient = kept < n;
  const Eigen::Index m = std::min<Eigen::Index>(3, n);
  res.smallest_sigma = s.sigma.tail(m).reverse();
  res.smallest_vectors = s.V.rightCols(m).rowwise().reverse();
  return res;
}

} // namespace stokesres
