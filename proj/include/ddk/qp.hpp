#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ddk/core.hpp"
#include "ddk/linalg.hpp"

namespace ddk {

// Convex quadratic programs of the shape the predictive controllers produce:
//
//   minimize    0.5 z'Pz + q'z
//   subject to  A_eq z = b_eq,   lo <= G z <= hi
//
// solved by a primal active-set method on the box after the equalities are
// eliminated through a nullspace parametrization. The method expects P to be
// positive semidefinite with the objective bounded below on the feasible set
// (true for the least-squares-shaped costs built here); it returns crisp
// active sets and multiplier-based KKT residuals, which is exactly what the
// oracle tests need. Problem sizes are small (tens to a few hundred
// variables), so dense factorizations throughout are fine.

enum class QpStatus { optimal, infeasible, max_iter };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    default: return "max_iter";
  }
}

// Two-sided bounds on linear images of the decision vector.
struct QpBox {
  Matrix G;
  Vector lo, hi;
  Index rows() const { return G.rows(); }
};

struct QpOptions {
  double feas_tol = 1e-6;     // equality-consistency / KKT acceptance threshold
  Index max_iter_per_var = 50;
  double step_tol = 1e-10;    // reduced step considered zero below this (relative)
};

struct KktReport {
  double stationarity = 0.0;
  double primal_eq = 0.0;
  double primal_box = 0.0;
  double complementarity = 0.0;
  double dual = 0.0;  // negative parts of box multipliers
  double overall() const {
    return std::max({stationarity, primal_eq, primal_box, complementarity, dual});
  }
};

struct QpSolution {
  Vector z;
  QpStatus status = QpStatus::max_iter;
  double objective = 0.0;  // 0.5 z'Pz + q'z
  double kkt_residual = 0.0;
  Index iterations = 0;
  std::string message;
};

// Checks a candidate point from the problem data alone: multipliers are
// re-derived by least squares from the gradient and the constraints active at
// z, independent of whatever path the solver took.
inline KktReport verify_kkt(const Matrix& P, const Vector& q, const Matrix& A_eq,
                            const Vector& b_eq, const QpBox& box, const Vector& z,
                            double active_tol = 1e-6) {
  KktReport rep;
  const Vector grad = P * z + q;
  const double scale = 1.0 + grad.cwiseAbs().maxCoeff();
  if (A_eq.rows() > 0) {
    // Backward-error scaling: a candidate assembled from an ill-conditioned
    // system carries roundoff of order ||A||*||z||, so a fixed tolerance on
    // the raw residual would reject points no exact method could beat.
    const double a_norm = A_eq.cwiseAbs().rowwise().sum().maxCoeff();
    rep.primal_eq = (A_eq * z - b_eq).cwiseAbs().maxCoeff() /
                    (1.0 + b_eq.cwiseAbs().maxCoeff() + a_norm * z.cwiseAbs().maxCoeff());
  }
  std::vector<std::pair<Index, int>> active;  // (row, +1 upper / -1 lower)
  if (box.rows() > 0) {
    const Vector s = box.G * z;
    for (Index i = 0; i < box.rows(); ++i) {
      const double span = 1.0 + std::max(std::abs(box.lo(i)), std::abs(box.hi(i)));
      rep.primal_box = std::max({rep.primal_box, (box.lo(i) - s(i)) / span,
                                 (s(i) - box.hi(i)) / span});
      if (s(i) >= box.hi(i) - active_tol * span) active.emplace_back(i, +1);
      else if (s(i) <= box.lo(i) + active_tol * span) active.emplace_back(i, -1);
    }
    rep.primal_box = std::max(rep.primal_box, 0.0);
  }
  // Stationarity: grad + A_eq' nu + sum_i side_i mu_i G_i = 0, mu >= 0.
  Matrix M(z.size(), A_eq.rows() + static_cast<Index>(active.size()));
  M.leftCols(A_eq.rows()) = A_eq.transpose();
  for (std::size_t j = 0; j < active.size(); ++j)
    M.col(A_eq.rows() + static_cast<Index>(j)) =
        active[j].second * box.G.row(active[j].first).transpose();
  Vector mult = M.cols() > 0 ? lstsq_min_norm(M, Matrix(-grad)).col(0) : Vector(0);
  rep.stationarity =
      (M.cols() > 0 ? (grad + M * mult).cwiseAbs().maxCoeff() : grad.cwiseAbs().maxCoeff()) /
      scale;
  if (box.rows() > 0) {
    const Vector s = box.G * z;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const double mu = mult(A_eq.rows() + static_cast<Index>(j));
      rep.dual = std::max(rep.dual, -mu / scale);
      const auto [row, side] = active[j];
      const double gap = std::abs(s(row) - (side > 0 ? box.hi(row) : box.lo(row)));
      rep.complementarity = std::max(rep.complementarity, std::abs(mu) * gap / scale);
    }
  }
  return rep;
}

inline QpSolution solve_eq_box_qp(const Matrix& P, const Vector& q, const Matrix& A_eq,
                                  const Vector& b_eq, const QpBox& box,
                                  const QpOptions& opts = {}) {
  const Index n = P.rows();
  if (P.cols() != n || q.size() != n)
    throw ConfigError(detail::msg("objective dimensions disagree: P ", P.rows(), "x", P.cols(),
                                  ", q ", q.size()));
  if (A_eq.rows() > 0 && (A_eq.cols() != n || b_eq.size() != A_eq.rows()))
    throw ConfigError("equality constraint dimensions disagree with the objective");
  if (box.rows() > 0 && (box.G.cols() != n || box.lo.size() != box.rows() ||
                         box.hi.size() != box.rows()))
    throw ConfigError("box constraint dimensions disagree with the objective");
  for (Index i = 0; i < box.rows(); ++i)
    if (box.lo(i) > box.hi(i))
      throw ConfigError(detail::msg("box row ", i, " has lo ", box.lo(i), " > hi ", box.hi(i)));

  QpSolution sol;
  auto finish = [&](const Vector& z, QpStatus status, Index iters, std::string message) {
    sol.z = z;
    sol.status = status;
    sol.iterations = iters;
    sol.message = std::move(message);
    sol.objective = 0.5 * z.dot(P * z) + q.dot(z);
    sol.kkt_residual = verify_kkt(P, q, A_eq, b_eq, box, z, opts.feas_tol).overall();
    if (status == QpStatus::optimal && sol.kkt_residual > opts.feas_tol) {
      sol.status = QpStatus::max_iter;
      sol.message = detail::msg("stalled with KKT residual ", sol.kkt_residual);
    }
    return sol;
  };

  // Eliminate the equalities: z = zp + Z v with Z spanning null(A_eq).
  Vector zp = Vector::Zero(n);
  Matrix Z = Matrix::Identity(n, n);
  if (A_eq.rows() > 0) {
    zp = lstsq_min_norm(A_eq, Matrix(b_eq)).col(0);
    const double resid = (A_eq * zp - b_eq).norm();
    // Judge the misfit against what a backward-stable solve could achieve:
    // ill-conditioned systems need large particular solutions, and their
    // attainable residual grows with ||A||*||z||, not with ||b|| alone.
    const double a_norm = A_eq.cwiseAbs().rowwise().sum().maxCoeff();
    if (resid > opts.feas_tol * (1.0 + b_eq.norm() + a_norm * zp.cwiseAbs().maxCoeff()))
      return finish(zp, QpStatus::infeasible, 0,
                    detail::msg("equalities inconsistent, residual ", resid));
    Z = kernel_basis(A_eq);
  }
  const Index k = Z.cols();
  Matrix H = Z.transpose() * P * Z;
  H = 0.5 * (H + H.transpose()).eval();  // exact symmetry for the reduced solves
  const Vector f = Z.transpose() * (P * zp + q);
  const Matrix E = box.rows() > 0 ? Matrix(box.G * Z) : Matrix(0, k);
  const Vector c = box.rows() > 0 ? Vector(box.G * zp) : Vector(0);
  const Index nb = E.rows();
  Vector v = Vector::Zero(k);

  if (k == 0) {
    // The equalities pin the point; only feasibility remains to check.
    for (Index i = 0; i < nb; ++i) {
      const double span = 1.0 + std::max(std::abs(box.lo(i)), std::abs(box.hi(i)));
      if (c(i) < box.lo(i) - opts.feas_tol * span || c(i) > box.hi(i) + opts.feas_tol * span)
        return finish(zp, QpStatus::infeasible, 0,
                      detail::msg("equality-determined point violates box row ", i));
    }
    return finish(zp, QpStatus::optimal, 0, "");
  }

  // Phase 1: alternate between the box and the affine image space of E until
  // the image point is feasible (projections onto convex sets).
  if (nb > 0) {
    Eigen::CompleteOrthogonalDecomposition<Matrix> codE(E);
    for (int it = 0; it < 1000; ++it) {
      const Vector s = c + E * v;
      const Vector t = s.cwiseMax(box.lo).cwiseMin(box.hi);
      if ((s - t).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + t.cwiseAbs().maxCoeff())) break;
      v = codE.solve(t - c);
    }
    const Vector s = c + E * v;
    const Vector t = s.cwiseMax(box.lo).cwiseMin(box.hi);
    if ((s - t).cwiseAbs().maxCoeff() > opts.feas_tol)
      return finish(zp + Z * v, QpStatus::infeasible, 0,
                    "no point satisfies the box within tolerance");
  }

  // Primal active set over the box rows; (row, side) with side +1 for the
  // upper bound, -1 for the lower.
  std::vector<std::pair<Index, int>> working;
  const Index max_iter = opts.max_iter_per_var * std::max<Index>(n, 1);
  Index it = 0;
  for (; it < max_iter; ++it) {
    const Vector grad = H * v + f;
    Matrix Aw(static_cast<Index>(working.size()), k);
    for (std::size_t j = 0; j < working.size(); ++j)
      Aw.row(static_cast<Index>(j)) = working[j].second * E.row(working[j].first);
    const Matrix Nw = working.empty() ? Matrix::Identity(k, k) : kernel_basis(Aw);
    Vector p = Vector::Zero(k);
    bool linear_descent = false;
    if (Nw.cols() > 0) {
      const Matrix Hr = Nw.transpose() * H * Nw;
      const Vector gr = Nw.transpose() * grad;
      const Vector pr = lstsq_min_norm(Hr, Matrix(-gr)).col(0);
      // The min-norm solve only cancels the gradient over range(Hr); any
      // leftover lives in the nullspace, where the objective falls linearly,
      // so no stationary point exists on this face and the only way down is
      // to ride that direction until a bound blocks it.
      const Vector leftover = Hr * pr + gr;
      if (leftover.norm() > 1e-9 * (1.0 + gr.norm())) {
        p = Nw * (-leftover);
        linear_descent = true;
      } else {
        p = Nw * pr;
      }
    }
    // A step counts as zero when it is below step_tol absolutely or below the
    // floating-point granularity of the iterate; scaling step_tol itself by
    // ||v|| would swallow genuine progress whenever the equalities force a
    // large particular solution.
    const double stall_tol =
        std::max(opts.step_tol,
                 256.0 * std::numeric_limits<double>::epsilon() * v.cwiseAbs().maxCoeff());
    if (p.cwiseAbs().maxCoeff() <= stall_tol) {
      if (working.empty()) break;  // unconstrained stationary point
      const Vector mult = lstsq_min_norm(Aw.transpose(), Matrix(-grad)).col(0);
      Index drop = 0;
      double most_negative = mult(0);
      for (Index j = 1; j < mult.size(); ++j)
        if (mult(j) < most_negative) { most_negative = mult(j); drop = j; }
      if (most_negative >= -1e-9 * (1.0 + grad.cwiseAbs().maxCoeff())) break;
      working.erase(working.begin() + drop);
      continue;
    }
    // Longest step along p that keeps every non-working box row feasible.
    double alpha = linear_descent ? std::numeric_limits<double>::infinity() : 1.0;
    Index block_row = -1;
    int block_side = 0;
    const Vector s = c + E * v;
    const Vector Ep = E * p;
    for (Index i = 0; i < nb; ++i) {
      bool in_working = false;
      for (const auto& [row, side] : working) in_working |= row == i;
      if (in_working) continue;
      if (Ep(i) > 1e-12) {
        const double a = (box.hi(i) - s(i)) / Ep(i);
        if (a < alpha) { alpha = a; block_row = i; block_side = +1; }
      } else if (Ep(i) < -1e-12) {
        const double a = (box.lo(i) - s(i)) / Ep(i);
        if (a < alpha) { alpha = a; block_row = i; block_side = -1; }
      }
    }
    if (linear_descent && block_row < 0)
      return finish(zp + Z * v, QpStatus::max_iter, it,
                    "objective unbounded below along a feasible direction");
    v += std::max(alpha, 0.0) * p;
    if (block_row >= 0) working.emplace_back(block_row, block_side);
  }
  if (it >= max_iter)
    return finish(zp + Z * v, QpStatus::max_iter, it,
                  detail::msg("active-set iteration cap ", max_iter, " reached"));
  return finish(zp + Z * v, QpStatus::optimal, it, "");
}

}  // namespace ddk
