#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ddk/core.hpp"
#include "ddk/linalg.hpp"
#include "ddk/systems.hpp"
#include "ddk/trajectory.hpp"

namespace ddk {

// Ordered set of scalar observables; the lifted state is their stacked
// evaluation. Linear independence of the observables is an assumption of the
// constructions that use them, not something checked symbolically here.
struct LiftingDictionary {
  Index state_dim = 0;
  bool include_state = false;  // the first state_dim observables are the coordinates
  std::vector<std::function<double(const Vector&)>> observables;
  Index n_z() const { return static_cast<Index>(observables.size()); }
};

inline Vector evaluate(const LiftingDictionary& dict, const Vector& x) {
  if (x.size() != dict.state_dim)
    throw ConfigError(detail::msg("state has dimension ", x.size(), ", dictionary expects ",
                                  dict.state_dim));
  Vector z(dict.n_z());
  for (Index i = 0; i < dict.n_z(); ++i) {
    z(i) = dict.observables[static_cast<std::size_t>(i)](x);
    if (!std::isfinite(z(i)))
      throw NumericError(detail::msg("observable ", i, " produced a non-finite value"));
  }
  return z;
}

inline Matrix evaluate_columns(const LiftingDictionary& dict, const Matrix& states) {
  Matrix Z(dict.n_z(), states.cols());
  for (Index j = 0; j < states.cols(); ++j) Z.col(j) = evaluate(dict, states.col(j));
  return Z;
}

// State coordinates followed by one thin-plate spline per center,
// phi(x) = ||x - c||^2 log ||x - c||, extended with its limit value 0 at the
// center itself.
inline LiftingDictionary thin_plate_dictionary(const std::vector<Vector>& centers,
                                               bool include_state = true) {
  if (centers.empty()) throw ConfigError("thin-plate dictionary needs at least one center");
  const Index n = centers.front().size();
  LiftingDictionary dict;
  dict.state_dim = n;
  dict.include_state = include_state;
  if (include_state)
    for (Index i = 0; i < n; ++i)
      dict.observables.emplace_back([i](const Vector& x) { return x(i); });
  for (const Vector& c : centers) {
    if (c.size() != n)
      throw ConfigError(detail::msg("centers mix dimensions ", n, " and ", c.size()));
    dict.observables.emplace_back([c](const Vector& x) {
      const double d2 = (x - c).squaredNorm();
      return d2 == 0.0 ? 0.0 : 0.5 * d2 * std::log(d2);  // r^2 log r
    });
  }
  return dict;
}

// One-step data pairs x+ = f(x, u), y = g(x, u), stored column-wise.
struct SnapshotSet {
  Matrix X, X_plus, U, Y;
  Index size() const { return X.cols(); }
};

inline void check_snapshots(const SnapshotSet& snaps) {
  if (snaps.size() == 0) throw ConfigError("snapshot set is empty");
  if (snaps.X_plus.cols() != snaps.size() || snaps.U.cols() != snaps.size() ||
      snaps.Y.cols() != snaps.size() || snaps.X_plus.rows() != snaps.X.rows())
    throw ConfigError("snapshot matrices disagree on pair count or state dimension");
}

// Consecutive-pair extraction; the last step of each recording has no
// successor and is dropped.
inline SnapshotSet snapshots_from_trajectories(const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) throw ConfigError("snapshot extraction needs at least one trajectory");
  Index total = 0;
  for (const Trajectory& t : trajs) {
    check_trajectory(t);
    if (!t.has_states())
      throw ConfigError("snapshot extraction needs recorded states");
    total += t.length() - 1;
  }
  if (total == 0) throw ConfigError("no consecutive state pairs in the given trajectories");
  const Trajectory& first = trajs.front();
  SnapshotSet snaps;
  snaps.X.resize(first.x.rows(), total);
  snaps.X_plus.resize(first.x.rows(), total);
  snaps.U.resize(first.input_dim(), total);
  snaps.Y.resize(first.output_dim(), total);
  Index at = 0;
  for (const Trajectory& t : trajs) {
    const Index k = t.length() - 1;
    snaps.X.middleCols(at, k) = t.x.leftCols(k);
    snaps.X_plus.middleCols(at, k) = t.x.rightCols(k);
    snaps.U.middleCols(at, k) = t.u.leftCols(k);
    snaps.Y.middleCols(at, k) = t.y.leftCols(k);
    at += k;
  }
  return snaps;
}

struct EdmdFit {
  StateSpaceModel model;
  double dynamics_residual = 0.0;  // ||Z+ - AZ - BU||_F
  double output_residual = 0.0;    // ||Y - CZ - DU||_F
  Index regressor_rank = 0;        // numeric rank of col(Z, U)
  bool rank_deficient = false;     // rank < n_z + m: least squares non-unique
};

// Two least-squares fits through the lifted snapshots: (A, B) against the
// lifted successors and (C, D) against the outputs. A rank-revealing solve
// returns the minimum-Frobenius-norm matrices when the data leave the fit
// underdetermined.
inline EdmdFit edmd_fit(const SnapshotSet& snaps, const LiftingDictionary& dict) {
  check_snapshots(snaps);
  const Index n_z = dict.n_z();
  const Index m = snaps.U.rows();
  const Matrix Z = evaluate_columns(dict, snaps.X);
  const Matrix Z_plus = evaluate_columns(dict, snaps.X_plus);
  Matrix G(n_z + m, snaps.size());
  G.topRows(n_z) = Z;
  G.bottomRows(m) = snaps.U;
  // One decomposition serves both fits and the rank report.
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(G.transpose());
  const Matrix AB = cod.solve(Z_plus.transpose()).transpose();
  const Matrix CD = cod.solve(snaps.Y.transpose()).transpose();
  EdmdFit fit;
  fit.model.A = AB.leftCols(n_z);
  fit.model.B = AB.rightCols(m);
  fit.model.C = CD.leftCols(n_z);
  fit.model.D = CD.rightCols(m);
  fit.dynamics_residual = (Z_plus - AB * G).norm();
  fit.output_residual = (snaps.Y - CD * G).norm();
  fit.regressor_rank = cod.rank();
  fit.rank_deficient = fit.regressor_rank < n_z + m;
  return fit;
}

// Rank certificate for a data-collection campaign: the stacked matrix of
// input windows over lifted initial states must have full row rank for the
// span arguments behind the data-driven predictors to hold. Needs true states
// and the true dictionary, so it is a simulation-side diagnostic only.
struct LiftedExcitationReport {
  bool excited = false;
  Index rank = 0;
  Index required = 0;  // mL + n_z
  Index columns = 0;
  double threshold = 0.0;
  std::string reason;
};

inline LiftedExcitationReport lifted_excitation_report(const Matrix& u_columns,
                                                       const Matrix& initial_states,
                                                       const LiftingDictionary& dict,
                                                       double rank_tol = -1.0) {
  if (initial_states.cols() != u_columns.cols())
    throw ConfigError(detail::msg(u_columns.cols(), " input windows but ",
                                  initial_states.cols(), " initial states"));
  const Index l = u_columns.cols();
  if (l < 1) throw ConfigError("excitation report needs at least one column");
  Matrix H(u_columns.rows() + dict.n_z(), l);
  H.topRows(u_columns.rows()) = u_columns;
  H.bottomRows(dict.n_z()) = evaluate_columns(dict, initial_states);
  const RankResult r = numeric_rank(H, rank_tol);
  LiftedExcitationReport report;
  report.rank = r.rank;
  report.required = H.rows();
  report.columns = l;
  report.threshold = r.threshold;
  report.excited = r.rank == report.required;
  if (l < report.required)
    report.reason = detail::msg("insufficient columns: l=", l, " < ", report.required);
  else if (!report.excited)
    report.reason = detail::msg("rank ", r.rank, " below ", report.required);
  return report;
}

struct AugmentationResult {
  Matrix U_cols;  // kept input windows, mL x k
  Matrix X0;      // kept initial states, n x k
  Index draws = 0;
  Index rank = 0;
  bool excited = false;
};

// Fallback campaign builder: draw candidate (input window, initial state)
// pairs and keep exactly those whose stacked column leaves the span of the
// columns kept so far. Each accepted column raises the rank by one, so the
// loop terminates as soon as mL + n_z columns were accepted (or the draw
// budget runs out).
template <typename DrawFn>
AugmentationResult augment_until_lifted_excited(const LiftingDictionary& dict, Index m, Index L,
                                                DrawFn&& draw, Index max_draws = 10000,
                                                double span_tol = 1e-9) {
  const Index target = m * L + dict.n_z();
  Matrix basis(target, target);  // orthonormal columns spanning the kept set
  AugmentationResult res;
  res.U_cols.resize(m * L, target);
  res.X0.resize(dict.state_dim, target);
  while (res.rank < target && res.draws < max_draws) {
    const auto [u_col, x0] = draw();
    ++res.draws;
    if (u_col.size() != m * L)
      throw ConfigError(detail::msg("drawn input window has length ", u_col.size(),
                                    ", expected ", m * L));
    Vector v(target);
    v.head(m * L) = u_col;
    v.tail(dict.n_z()) = evaluate(dict, x0);
    const double scale = v.norm();
    // Two projection passes keep the basis orthonormal to working precision.
    for (int pass = 0; pass < 2; ++pass)
      v -= basis.leftCols(res.rank) * (basis.leftCols(res.rank).transpose() * v).eval();
    if (v.norm() <= span_tol * scale) continue;  // inside the current span
    res.U_cols.col(res.rank) = u_col;
    res.X0.col(res.rank) = x0;
    basis.col(res.rank) = v / v.norm();
    ++res.rank;
  }
  res.excited = res.rank == target;
  res.U_cols.conservativeResize(Eigen::NoChange, res.rank);
  res.X0.conservativeResize(Eigen::NoChange, res.rank);
  return res;
}

}  // namespace ddk
