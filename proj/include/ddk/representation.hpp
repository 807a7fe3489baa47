#pragma once

#include "ddk/core.hpp"
#include "ddk/lifting.hpp"
#include "ddk/linalg.hpp"
#include "ddk/systems.hpp"
#include "ddk/trajectory.hpp"

namespace ddk {

// Open-loop prediction query: the most recent depth-T_ini input/output window
// pins down the (lifted) initial condition, u_F is the candidate future input.
struct PredictionProblem {
  Vector u_ini;  // m * T_ini
  Vector y_ini;  // p * T_ini
  Vector u_F;    // m * N
};

struct PredictionResult {
  Vector y_F;                      // p * N
  Vector g;                        // library combination, length l
  double equality_residual = 0.0;  // ||stacked constraints * g - rhs||
  bool exact = false;              // residual within the feasibility tolerance
};

namespace detail {

inline void check_problem(const TrajectoryLibrary& lib, const PredictionProblem& prob) {
  if (prob.u_ini.size() != lib.m * lib.T_ini)
    throw ConfigError(msg("u_ini has length ", prob.u_ini.size(), ", library expects ",
                          lib.m * lib.T_ini));
  if (prob.y_ini.size() != lib.p * lib.T_ini)
    throw ConfigError(msg("y_ini has length ", prob.y_ini.size(), ", library expects ",
                          lib.p * lib.T_ini));
  if (prob.u_F.size() != lib.m * lib.N)
    throw ConfigError(msg("u_F has length ", prob.u_F.size(), ", library expects ",
                          lib.m * lib.N));
}

inline PredictionResult predict_least_squares(const TrajectoryLibrary& lib,
                                              const PredictionProblem& prob, double feas_tol,
                                              bool affine_combination) {
  check_problem(lib, prob);
  const Index rows = lib.m * lib.L + lib.p * lib.T_ini + (affine_combination ? 1 : 0);
  Matrix M(rows, lib.l);
  Vector b(rows);
  Index at = 0;
  M.middleRows(at, lib.m * lib.T_ini) = lib.U_P();
  b.segment(at, lib.m * lib.T_ini) = prob.u_ini;
  at += lib.m * lib.T_ini;
  M.middleRows(at, lib.p * lib.T_ini) = lib.Y_P();
  b.segment(at, lib.p * lib.T_ini) = prob.y_ini;
  at += lib.p * lib.T_ini;
  M.middleRows(at, lib.m * lib.N) = lib.U_F();
  b.segment(at, lib.m * lib.N) = prob.u_F;
  at += lib.m * lib.N;
  if (affine_combination) {
    M.row(at).setOnes();
    b(at) = 1.0;
  }
  PredictionResult res;
  res.g = lstsq_refined(M, b);
  res.equality_residual = (M * res.g - b).norm();
  res.exact = res.equality_residual <= feas_tol;
  res.y_F = lib.Y_F() * res.g;
  return res;
}

}  // namespace detail

// Data-driven prediction through the library span: the minimum-norm g that
// reproduces the initial window and the future input. A residual above
// feas_tol means the window is not explained by the library — insufficient
// data, too shallow a window, or a plant with no linear embedding — and is
// reported as approximate, never masked. The least-squares y_F is still
// returned; partial-span answers can be acceptable, callers decide.
inline PredictionResult ddk_predict(const TrajectoryLibrary& lib, const PredictionProblem& prob,
                                    double feas_tol = 1e-6) {
  return detail::predict_least_squares(lib, prob, feas_tol, false);
}

// Same stacked system plus the affine-combination row sum(g) = 1, which is
// what makes libraries of affine-system data reproduce the offset response.
inline PredictionResult dda_predict(const TrajectoryLibrary& lib, const PredictionProblem& prob,
                                    double feas_tol = 1e-6) {
  return detail::predict_least_squares(lib, prob, feas_tol, true);
}

// Model-based prediction: lift the measured state and roll the linear model.
inline Matrix koopman_predict(const StateSpaceModel& model, const LiftingDictionary& dict,
                              const Vector& x_now, const Matrix& u_F) {
  if (dict.n_z() != model.state_dim())
    throw ConfigError(detail::msg("dictionary size ", dict.n_z(), " does not match model order ",
                                  model.state_dim()));
  return simulate_lti(model, evaluate(dict, x_now), u_F).y;
}

// Distance of a candidate stacked trajectory col(u, y) from the library span.
// Near zero certifies membership; the refinement pass inside the solve keeps
// the computed residual close to the true distance for consistent columns.
inline double membership_residual(const TrajectoryLibrary& lib, const Vector& traj_column) {
  const Matrix H = lib.stacked();
  if (traj_column.size() != H.rows())
    throw ConfigError(detail::msg("candidate column has length ", traj_column.size(),
                                  ", library columns have ", H.rows()));
  const Vector g = lstsq_refined(H, traj_column);
  return (H * g - traj_column).norm();
}

// Outcome of the order bound rank(H_d) <= mL + n_z that every system with an
// order-n_z linear embedding must satisfy. A rank above mL + nz_bar therefore
// rules out every embedding of order <= nz_bar. The converse does not hold:
// verdicts other than "certified" are inconclusive.
struct NonexistenceCertificate {
  bool certified = false;  // no embedding of order <= nz_bar exists
  Index rank = 0;          // numeric rank of the stacked library
  Index bound = 0;         // mL + nz_bar
  double threshold = 0.0;
};

inline NonexistenceCertificate embedding_nonexistence_certificate(const TrajectoryLibrary& lib,
                                                                  Index nz_bar,
                                                                  double rank_tol = -1.0) {
  if (nz_bar < 1) throw ConfigError(detail::msg("candidate order must be >= 1, got ", nz_bar));
  // The rank argument factors H_d through the sliding windows of one
  // recording; unions of separate recordings do not have that structure.
  if (!lib.single_hankel)
    throw ConfigError("nonexistence certificate requires a library built from a single recording");
  const RankResult r = numeric_rank(lib.stacked(), rank_tol);
  NonexistenceCertificate cert;
  cert.rank = r.rank;
  cert.bound = lib.m * lib.L + nz_bar;
  cert.threshold = r.threshold;
  cert.certified = cert.rank > cert.bound;
  return cert;
}

}  // namespace ddk
