#pragma once

#include <vector>

#include "ddk/core.hpp"
#include "ddk/linalg.hpp"

namespace ddk {

// One recorded evolution of a discrete-time system, stored one column per
// time step. States are optional: input/output data is all the data-driven
// representations ever see, states only matter for lifting diagnostics.
struct Trajectory {
  Matrix u;  // m x T
  Matrix y;  // p x T
  Matrix x;  // n x T when states were recorded, otherwise 0 x 0

  Index length() const { return u.cols(); }
  Index input_dim() const { return u.rows(); }
  Index output_dim() const { return y.rows(); }
  bool has_states() const { return x.size() > 0; }
};

inline void check_trajectory(const Trajectory& traj) {
  if (traj.length() < 1) throw ConfigError("trajectory must contain at least one step");
  if (traj.y.cols() != traj.u.cols())
    throw ConfigError(detail::msg("trajectory has ", traj.u.cols(), " input steps but ",
                                  traj.y.cols(), " output steps"));
  if (traj.has_states() && traj.x.cols() != traj.u.cols())
    throw ConfigError(detail::msg("trajectory has ", traj.u.cols(), " steps but ",
                                  traj.x.cols(), " recorded states"));
}

// Block-Hankel matrix of a vector sequence: column j stacks the window
// col(w_j, ..., w_{j+L-1}).
struct HankelMatrix {
  Index order = 0;  // window length L
  Index q = 0;      // per-step vector dimension
  Matrix data;      // (qL) x (T-L+1)
};

inline HankelMatrix build_hankel(const Matrix& w, Index L) {
  const Index q = w.rows();
  const Index T = w.cols();
  if (q < 1) throw ConfigError("signal has no channels");
  if (L < 1) throw ConfigError(detail::msg("hankel order must be >= 1, got ", L));
  if (T < L)
    throw ConfigError(detail::msg("sequence of length ", T, " is too short for hankel order ", L));
  HankelMatrix H;
  H.order = L;
  H.q = q;
  H.data.resize(q * L, T - L + 1);
  // Column-major storage makes each window a contiguous block of w.
  for (Index j = 0; j <= T - L; ++j)
    H.data.col(j) = Eigen::Map<const Vector>(w.data() + j * q, q * L);
  return H;
}

// Rank verdict for an excitation test, carrying the threshold that decided it.
struct ExcitationResult {
  bool excited = false;
  Index rank = 0;
  Index required = 0;  // full row rank target
  double threshold = 0.0;
};

// Persistent excitation of order L: the order-L Hankel matrix of the signal
// has full row rank qL.
inline ExcitationResult is_persistently_exciting(const Matrix& w, Index L,
                                                 double rank_tol = -1.0) {
  const HankelMatrix H = build_hankel(w, L);
  const RankResult r = numeric_rank(H.data, rank_tol);
  return {r.rank == H.data.rows(), r.rank, H.data.rows(), r.threshold};
}

// Collective persistent excitation: the horizontally concatenated order-L
// Hankel matrices of several input recordings have full row rank together.
inline ExcitationResult is_collectively_pe(const std::vector<Matrix>& inputs, Index order,
                                           double rank_tol = -1.0) {
  if (inputs.empty()) throw ConfigError("collective excitation test needs at least one sequence");
  const Index q = inputs.front().rows();
  Index total_cols = 0;
  for (const Matrix& w : inputs) {
    if (w.rows() != q)
      throw ConfigError(detail::msg("input sequences mix dimensions ", q, " and ", w.rows()));
    if (w.cols() < order)
      throw ConfigError(detail::msg("sequence of length ", w.cols(),
                                    " is too short for hankel order ", order));
    total_cols += w.cols() - order + 1;
  }
  Matrix H(q * order, total_cols);
  Index at = 0;
  for (const Matrix& w : inputs) {
    const HankelMatrix Hi = build_hankel(w, order);
    H.middleCols(at, Hi.data.cols()) = Hi.data;
    at += Hi.data.cols();
  }
  const RankResult r = numeric_rank(H, rank_tol);
  return {r.rank == H.rows(), r.rank, H.rows(), r.threshold};
}

// Library of length-L input/output trajectories stored column-wise, with the
// past/future split at T_ini. Windows never straddle recording boundaries:
// concatenated recordings are not contiguous evolutions of the plant.
struct TrajectoryLibrary {
  Index m = 0, p = 0;       // input / output dimensions
  Index L = 0;              // trajectory length per column
  Index T_ini = 0, N = 0;   // past / future split, T_ini + N = L
  Index l = 0;              // number of columns
  Matrix U_d;               // mL x l
  Matrix Y_d;               // pL x l
  bool single_hankel = false;  // built as sliding windows of one recording

  Matrix U_P() const { return U_d.topRows(m * T_ini); }
  Matrix U_F() const { return U_d.bottomRows(m * N); }
  Matrix Y_P() const { return Y_d.topRows(p * T_ini); }
  Matrix Y_F() const { return Y_d.bottomRows(p * N); }

  // The stacked data matrix col(U_d, Y_d) whose column span is the behavior
  // candidate set.
  Matrix stacked() const {
    Matrix H(U_d.rows() + Y_d.rows(), l);
    H.topRows(U_d.rows()) = U_d;
    H.bottomRows(Y_d.rows()) = Y_d;
    return H;
  }
};

namespace detail {

inline void check_partition(Index L, Index T_ini, Index N) {
  if (L < 1) throw ConfigError(detail::msg("trajectory length L must be >= 1, got ", L));
  if (T_ini < 0 || N < 0 || T_ini + N != L)
    throw ConfigError(detail::msg("partition T_ini=", T_ini, " + N=", N,
                                  " must equal L=", L));
}

}  // namespace detail

inline TrajectoryLibrary library_from_single(const Trajectory& traj, Index L, Index T_ini,
                                             Index N) {
  check_trajectory(traj);
  detail::check_partition(L, T_ini, N);
  TrajectoryLibrary lib;
  lib.m = traj.input_dim();
  lib.p = traj.output_dim();
  lib.L = L;
  lib.T_ini = T_ini;
  lib.N = N;
  lib.U_d = build_hankel(traj.u, L).data;
  lib.Y_d = build_hankel(traj.y, L).data;
  lib.l = lib.U_d.cols();
  lib.single_hankel = true;
  return lib;
}

inline TrajectoryLibrary library_from_multiple(const std::vector<Trajectory>& trajs, Index L,
                                               Index T_ini, Index N) {
  if (trajs.empty()) throw ConfigError("library construction needs at least one trajectory");
  detail::check_partition(L, T_ini, N);
  const Index m = trajs.front().input_dim();
  const Index p = trajs.front().output_dim();
  Index l = 0;
  for (const Trajectory& t : trajs) {
    check_trajectory(t);
    if (t.input_dim() != m || t.output_dim() != p)
      throw ConfigError(detail::msg("trajectories mix dimensions (m=", m, ", p=", p,
                                    ") and (m=", t.input_dim(), ", p=", t.output_dim(), ")"));
    if (t.length() < L)
      throw ConfigError(detail::msg("trajectory of length ", t.length(),
                                    " is too short for window length ", L));
    l += t.length() - L + 1;
  }
  TrajectoryLibrary lib;
  lib.m = m;
  lib.p = p;
  lib.L = L;
  lib.T_ini = T_ini;
  lib.N = N;
  lib.l = l;
  lib.U_d.resize(m * L, l);
  lib.Y_d.resize(p * L, l);
  Index at = 0;
  for (const Trajectory& t : trajs) {
    const Index cols = t.length() - L + 1;
    lib.U_d.middleCols(at, cols) = build_hankel(t.u, L).data;
    lib.Y_d.middleCols(at, cols) = build_hankel(t.y, L).data;
    at += cols;
  }
  lib.single_hankel = false;
  return lib;
}

}  // namespace ddk
