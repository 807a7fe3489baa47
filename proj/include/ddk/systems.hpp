#pragma once

#include <cmath>
#include <functional>
#include <optional>

#include "ddk/core.hpp"
#include "ddk/linalg.hpp"
#include "ddk/trajectory.hpp"

namespace ddk {

// Any state whose magnitude passes this bound aborts a simulation: quartic
// benchmark dynamics can blow up under adversarial inputs, and silent NaN
// propagation would poison every library built from the run.
inline constexpr double kDivergenceBound = 1e12;

// Linear (or lifted-linear) dynamics z+ = Az + Bu, y = Cz + Du.
struct StateSpaceModel {
  Matrix A, B, C, D;
  Index state_dim() const { return A.rows(); }
  Index input_dim() const { return B.cols(); }
  Index output_dim() const { return C.rows(); }
};

inline void check_model(const StateSpaceModel& mdl) {
  const Index n = mdl.A.rows(), m = mdl.B.cols(), p = mdl.C.rows();
  if (mdl.A.cols() != n || mdl.B.rows() != n || mdl.C.cols() != n ||
      mdl.D.rows() != p || mdl.D.cols() != m)
    throw ConfigError(detail::msg("inconsistent state-space dimensions: A ", mdl.A.rows(), "x",
                                  mdl.A.cols(), ", B ", mdl.B.rows(), "x", mdl.B.cols(), ", C ",
                                  mdl.C.rows(), "x", mdl.C.cols(), ", D ", mdl.D.rows(), "x",
                                  mdl.D.cols()));
}

// Affine dynamics x+ = Ax + Bu + e, y = Cx + Du + r.
struct AffineModel {
  Matrix A, B, C, D;
  Vector e, r;
  Index state_dim() const { return A.rows(); }
  Index input_dim() const { return B.cols(); }
  Index output_dim() const { return C.rows(); }
};

inline void check_model(const AffineModel& mdl) {
  check_model(StateSpaceModel{mdl.A, mdl.B, mdl.C, mdl.D});
  if (mdl.e.size() != mdl.A.rows() || mdl.r.size() != mdl.C.rows())
    throw ConfigError(detail::msg("affine offsets sized ", mdl.e.size(), " and ", mdl.r.size(),
                                  " do not match state dim ", mdl.A.rows(), " / output dim ",
                                  mdl.C.rows()));
}

// General deterministic plant x+ = f(x, u), y = g(x, u). The maps must be
// side-effect free: closed-loop scenarios run them from parallel workers.
struct NonlinearSystem {
  Index n = 0, m = 0, p = 0;
  std::function<Vector(const Vector&, const Vector&)> f;
  std::function<Vector(const Vector&, const Vector&)> g;
};

namespace detail {

inline void guard_state(const Vector& x, Index step) {
  if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kDivergenceBound)
    throw NumericError(msg("simulation diverged at step ", step,
                           " (state magnitude ", x.cwiseAbs().maxCoeff(), ")"));
}

}  // namespace detail

inline Trajectory simulate_nonlinear(const NonlinearSystem& sys, const Vector& x0,
                                     const Matrix& u_seq) {
  if (x0.size() != sys.n)
    throw ConfigError(detail::msg("initial state has dimension ", x0.size(), ", expected ", sys.n));
  if (u_seq.rows() != sys.m)
    throw ConfigError(detail::msg("inputs have dimension ", u_seq.rows(), ", expected ", sys.m));
  const Index T = u_seq.cols();
  Trajectory traj;
  traj.u = u_seq;
  traj.y.resize(sys.p, T);
  traj.x.resize(sys.n, T);
  Vector x = x0;
  for (Index k = 0; k < T; ++k) {
    detail::guard_state(x, k);
    traj.x.col(k) = x;
    traj.y.col(k) = sys.g(x, u_seq.col(k));
    x = sys.f(x, u_seq.col(k));
  }
  detail::guard_state(x, T);
  return traj;
}

inline Trajectory simulate_lti(const StateSpaceModel& mdl, const Vector& z0,
                               const Matrix& u_seq) {
  check_model(mdl);
  if (z0.size() != mdl.state_dim())
    throw ConfigError(detail::msg("initial state has dimension ", z0.size(), ", expected ",
                                  mdl.state_dim()));
  if (u_seq.rows() != mdl.input_dim())
    throw ConfigError(detail::msg("inputs have dimension ", u_seq.rows(), ", expected ",
                                  mdl.input_dim()));
  const Index T = u_seq.cols();
  Trajectory traj;
  traj.u = u_seq;
  traj.y.resize(mdl.output_dim(), T);
  traj.x.resize(mdl.state_dim(), T);
  Vector z = z0;
  for (Index k = 0; k < T; ++k) {
    detail::guard_state(z, k);
    traj.x.col(k) = z;
    traj.y.col(k) = mdl.C * z + mdl.D * u_seq.col(k);
    z = mdl.A * z + mdl.B * u_seq.col(k);
  }
  detail::guard_state(z, T);
  return traj;
}

inline Trajectory simulate_affine(const AffineModel& mdl, const Vector& x0, const Matrix& u_seq) {
  check_model(mdl);
  if (x0.size() != mdl.state_dim())
    throw ConfigError(detail::msg("initial state has dimension ", x0.size(), ", expected ",
                                  mdl.state_dim()));
  if (u_seq.rows() != mdl.input_dim())
    throw ConfigError(detail::msg("inputs have dimension ", u_seq.rows(), ", expected ",
                                  mdl.input_dim()));
  const Index T = u_seq.cols();
  Trajectory traj;
  traj.u = u_seq;
  traj.y.resize(mdl.output_dim(), T);
  traj.x.resize(mdl.state_dim(), T);
  Vector x = x0;
  for (Index k = 0; k < T; ++k) {
    detail::guard_state(x, k);
    traj.x.col(k) = x;
    traj.y.col(k) = mdl.C * x + mdl.D * u_seq.col(k) + mdl.r;
    x = mdl.A * x + mdl.B * u_seq.col(k) + mdl.e;
  }
  detail::guard_state(x, T);
  return traj;
}

// Exact linear embedding of an affine system: one constant coordinate absorbs
// the offsets. The extra state starts at 1 and the last row of A' keeps it
// there, so col(x0, 1) rollouts reproduce the affine rollouts.
inline StateSpaceModel affine_to_embedding(const AffineModel& aff) {
  check_model(aff);
  const Index n = aff.state_dim(), m = aff.input_dim(), p = aff.output_dim();
  StateSpaceModel mdl;
  mdl.A = Matrix::Zero(n + 1, n + 1);
  mdl.A.topLeftCorner(n, n) = aff.A;
  mdl.A.topRightCorner(n, 1) = aff.e;
  mdl.A(n, n) = 1.0;
  mdl.B = Matrix::Zero(n + 1, m);
  mdl.B.topRows(n) = aff.B;
  mdl.C = Matrix::Zero(p, n + 1);
  mdl.C.leftCols(n) = aff.C;
  mdl.C.rightCols(1) = aff.r;
  mdl.D = aff.D;
  return mdl;
}

// Lower block-triangular impulse-response operator: y_{0:L-1} = T_L u_{0:L-1}
// + O_L z_0 decomposes any rollout into forced and free response.
inline Matrix toeplitz_response(const StateSpaceModel& mdl, Index L) {
  check_model(mdl);
  if (L < 1) throw ConfigError(detail::msg("horizon must be >= 1, got ", L));
  const Index m = mdl.input_dim(), p = mdl.output_dim();
  Matrix T = Matrix::Zero(p * L, m * L);
  // First block column: D, CB, CAB, ...; every later column is a shift.
  Matrix blocks(p * L, m);
  blocks.topRows(p) = mdl.D;
  Matrix CAk = mdl.C;  // C A^k as k grows
  for (Index k = 1; k < L; ++k) {
    blocks.middleRows(k * p, p) = CAk * mdl.B;
    CAk = CAk * mdl.A;
  }
  for (Index j = 0; j < L; ++j)
    T.block(j * p, j * m, (L - j) * p, m) = blocks.topRows((L - j) * p);
  return T;
}

inline Matrix observability_matrix(const StateSpaceModel& mdl, Index L) {
  check_model(mdl);
  if (L < 1) throw ConfigError(detail::msg("horizon must be >= 1, got ", L));
  const Index n = mdl.state_dim(), p = mdl.output_dim();
  Matrix O(p * L, n);
  Matrix CAk = mdl.C;
  for (Index k = 0; k < L; ++k) {
    O.middleRows(k * p, p) = CAk;
    CAk = CAk * mdl.A;
  }
  return O;
}

// Wraps linear/affine models behind the general plant interface so the
// closed-loop driver and the CLI treat every system uniformly.
inline NonlinearSystem to_nonlinear(const StateSpaceModel& mdl) {
  check_model(mdl);
  NonlinearSystem sys;
  sys.n = mdl.state_dim();
  sys.m = mdl.input_dim();
  sys.p = mdl.output_dim();
  sys.f = [mdl](const Vector& x, const Vector& u) { return Vector(mdl.A * x + mdl.B * u); };
  sys.g = [mdl](const Vector& x, const Vector& u) { return Vector(mdl.C * x + mdl.D * u); };
  return sys;
}

inline NonlinearSystem to_nonlinear(const AffineModel& mdl) {
  check_model(mdl);
  NonlinearSystem sys;
  sys.n = mdl.state_dim();
  sys.m = mdl.input_dim();
  sys.p = mdl.output_dim();
  sys.f = [mdl](const Vector& x, const Vector& u) {
    return Vector(mdl.A * x + mdl.B * u + mdl.e);
  };
  sys.g = [mdl](const Vector& x, const Vector& u) {
    return Vector(mdl.C * x + mdl.D * u + mdl.r);
  };
  return sys;
}

// Smallest l with rank(O_l) = rank(O_n); empty when that common rank is below
// the state dimension (the pair is unobservable and no window length pins the
// state down).
inline std::optional<Index> observability_index(const StateSpaceModel& mdl,
                                                double rank_tol = -1.0) {
  check_model(mdl);
  const Index n = mdl.state_dim();
  const Index full = numeric_rank(observability_matrix(mdl, n), rank_tol).rank;
  if (full < n) return std::nullopt;
  for (Index l = 1; l <= n; ++l)
    if (numeric_rank(observability_matrix(mdl, l), rank_tol).rank == full) return l;
  return n;  // unreachable: rank(O_n) = full by definition
}

}  // namespace ddk
