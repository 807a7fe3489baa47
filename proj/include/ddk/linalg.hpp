#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "ddk/core.hpp"

namespace ddk {

// Numeric rank of a matrix together with the singular-value threshold that was
// actually applied. Rank statements in this library are exact-arithmetic
// claims; the threshold is the numerical surrogate and every verdict carries
// it so callers can audit borderline cases.
struct RankResult {
  Index rank = 0;
  double threshold = 0.0;   // absolute cutoff applied to singular values
  double sigma_max = 0.0;
  double sigma_min = 0.0;   // smallest singular value (0 for empty matrices)
};

// rank_tol > 0 is used as an absolute singular-value cutoff; otherwise the
// default max(rows, cols) * sigma_max * machine epsilon is applied.
inline RankResult numeric_rank(const Matrix& M, double rank_tol = -1.0) {
  RankResult res;
  if (M.rows() == 0 || M.cols() == 0) {
    res.threshold = rank_tol > 0 ? rank_tol : 0.0;
    return res;
  }
  Eigen::BDCSVD<Matrix> svd(M);
  const Vector& sv = svd.singularValues();
  res.sigma_max = sv(0);
  res.sigma_min = sv(sv.size() - 1);
  res.threshold = rank_tol > 0
                      ? rank_tol
                      : static_cast<double>(std::max(M.rows(), M.cols())) *
                            res.sigma_max * std::numeric_limits<double>::epsilon();
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > res.threshold) ++res.rank;
  return res;
}

// Minimum-norm least-squares solution via a rank-revealing complete
// orthogonal decomposition. Matrix right-hand sides are solved column-wise,
// which also minimizes the Frobenius norm among all minimizers.
inline Matrix lstsq_min_norm(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows())
    throw ConfigError(detail::msg("lstsq: A has ", A.rows(), " rows but rhs has ", B.rows()));
  if (A.rows() == 0 || A.cols() == 0) return Matrix::Zero(A.cols(), B.cols());
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
  return cod.solve(B);
}

// Same, with one pass of residual refinement: for (near-)consistent systems
// the refreshed solve pushes the computed residual much closer to the true
// distance from the column span.
inline Vector lstsq_refined(const Matrix& A, const Vector& b) {
  if (A.rows() == 0 || A.cols() == 0) return Vector::Zero(A.cols());
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
  Vector x = cod.solve(b);
  x += cod.solve((b - A * x).eval());
  return x;
}

// Orthonormal basis of the (numerical) column space of M as columns; zero
// columns when M is empty or zero. Threshold convention matches numeric_rank.
inline Matrix range_basis(const Matrix& M, double rank_tol = -1.0) {
  if (M.rows() == 0 || M.cols() == 0) return Matrix(M.rows(), 0);
  Eigen::BDCSVD<Matrix> svd(M, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  const double thr = rank_tol > 0
                         ? rank_tol
                         : static_cast<double>(std::max(M.rows(), M.cols())) *
                               smax * std::numeric_limits<double>::epsilon();
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > thr) ++rank;
  return svd.matrixU().leftCols(rank);
}

// Orthonormal basis of the (numerical) null space of M as columns; identity
// when M has no rows. Threshold convention matches numeric_rank.
inline Matrix kernel_basis(const Matrix& M, double rank_tol = -1.0) {
  const Index n = M.cols();
  if (M.rows() == 0) return Matrix::Identity(n, n);
  if (n == 0) return Matrix(0, 0);
  Eigen::BDCSVD<Matrix> svd(M, Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  const double thr = rank_tol > 0
                         ? rank_tol
                         : static_cast<double>(std::max(M.rows(), M.cols())) *
                               smax * std::numeric_limits<double>::epsilon();
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > thr) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

}  // namespace ddk
