#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ddk/core.hpp"
#include "ddk/lifting.hpp"
#include "ddk/qp.hpp"
#include "ddk/representation.hpp"
#include "ddk/systems.hpp"
#include "ddk/trajectory.hpp"

namespace ddk {

// Shared receding-horizon settings. Weights are given per step; the horizon
// weights are their N-fold block-diagonal expansions, matching the cost
// ||u_F||_R^2 + ||y_F - y_r||_Q^2 with R = I_N (x) R_step, Q = I_N (x) Q_step.
struct ControllerConfig {
  Index N = 0;
  Index T_ini = 0;
  Matrix R_step;  // m x m, positive definite
  Matrix Q_step;  // p x p, positive semidefinite
  Vector u_min, u_max;  // per input channel
  double lambda_g = 0.0;  // combination-size regularization (affine variant)
  double lambda_y = 0.0;  // initial-window slack regularization (affine variant)
  std::function<Vector(Index)> reference;  // y_r at absolute loop step k
  double feas_tol = 1e-6;
};

inline void check_config(const ControllerConfig& cfg, Index m, Index p) {
  if (cfg.N < 1) throw ConfigError(detail::msg("horizon must be >= 1, got ", cfg.N));
  if (cfg.T_ini < 1)
    throw ConfigError(detail::msg("initial window must be >= 1, got ", cfg.T_ini));
  if (cfg.R_step.rows() != m || cfg.R_step.cols() != m)
    throw ConfigError(detail::msg("R_step must be ", m, "x", m));
  if (cfg.Q_step.rows() != p || cfg.Q_step.cols() != p)
    throw ConfigError(detail::msg("Q_step must be ", p, "x", p));
  Eigen::LLT<Matrix> llt(cfg.R_step);
  if (llt.info() != Eigen::Success)
    throw ConfigError("R_step must be positive definite");
  const double qscale = std::max(1.0, cfg.Q_step.cwiseAbs().maxCoeff());
  if ((cfg.Q_step - cfg.Q_step.transpose()).cwiseAbs().maxCoeff() > 1e-12 * qscale)
    throw ConfigError("Q_step must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(cfg.Q_step, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-12 * qscale)
    throw ConfigError("Q_step must be positive semidefinite");
  if (cfg.u_min.size() != m || cfg.u_max.size() != m)
    throw ConfigError(detail::msg("input bounds must have ", m, " channels"));
  for (Index i = 0; i < m; ++i)
    if (cfg.u_min(i) > cfg.u_max(i))
      throw ConfigError(detail::msg("channel ", i, " has u_min ", cfg.u_min(i), " > u_max ",
                                    cfg.u_max(i)));
  if (cfg.lambda_g < 0 || cfg.lambda_y < 0)
    throw ConfigError("regularization weights must be nonnegative");
  if (!cfg.reference) throw ConfigError("controller needs a reference generator");
}

namespace detail {

inline Matrix block_diag_repeat(const Matrix& W, Index N) {
  Matrix out = Matrix::Zero(W.rows() * N, W.cols() * N);
  for (Index i = 0; i < N; ++i)
    out.block(i * W.rows(), i * W.cols(), W.rows(), W.cols()) = W;
  return out;
}

inline Vector tile(const Vector& v, Index N) {
  Vector out(v.size() * N);
  for (Index i = 0; i < N; ++i) out.segment(i * v.size(), v.size()) = v;
  return out;
}

inline Vector horizon_reference(const ControllerConfig& cfg, Index p, Index k0) {
  Vector yr(p * cfg.N);
  for (Index j = 0; j < cfg.N; ++j) {
    const Vector r = cfg.reference(k0 + j);
    if (r.size() != p)
      throw ConfigError(msg("reference returned dimension ", r.size(), ", expected ", p));
    yr.segment(j * p, p) = r;
  }
  return yr;
}

}  // namespace detail

struct ControlSolution {
  Vector u_F;      // m * N
  Vector y_F;      // p * N (predicted)
  Vector g;        // library combination (empty for the model-based variant)
  Vector sigma_y;  // initial-window slack (zero unless the affine variant)
  double objective = 0.0;  // tracking cost plus any regularization, at the solution
  double kkt_residual = 0.0;
  QpStatus status = QpStatus::max_iter;
  Index iterations = 0;
  std::string message;
};

// One receding-horizon step through the library span: decision variable is
// the combination g, the initial window enters as equalities, and the input
// box acts on the image U_F g.
inline ControlSolution ddk_mpc_step(const TrajectoryLibrary& lib, const Vector& u_ini,
                                    const Vector& y_ini, const ControllerConfig& cfg,
                                    Index step = 0) {
  check_config(cfg, lib.m, lib.p);
  if (cfg.T_ini != lib.T_ini || cfg.N != lib.N)
    throw ConfigError(detail::msg("config (T_ini=", cfg.T_ini, ", N=", cfg.N,
                                  ") does not match library (T_ini=", lib.T_ini, ", N=", lib.N,
                                  ")"));
  if (u_ini.size() != lib.m * lib.T_ini || y_ini.size() != lib.p * lib.T_ini)
    throw ConfigError("initial window lengths do not match the library partition");
  const Matrix U_F = lib.U_F(), Y_F = lib.Y_F();
  const Matrix W_R = detail::block_diag_repeat(cfg.R_step, cfg.N);
  const Matrix W_Q = detail::block_diag_repeat(cfg.Q_step, cfg.N);
  const Vector yr = detail::horizon_reference(cfg, lib.p, step);

  Matrix A_eq(lib.m * lib.T_ini + lib.p * lib.T_ini, lib.l);
  A_eq.topRows(lib.m * lib.T_ini) = lib.U_P();
  A_eq.bottomRows(lib.p * lib.T_ini) = lib.Y_P();
  Vector b_eq(A_eq.rows());
  b_eq.head(u_ini.size()) = u_ini;
  b_eq.tail(y_ini.size()) = y_ini;

  // The combination g is a poor optimization variable: matching the initial
  // window can pin components of size 1/sigma through the data Hankel's small
  // singular values, and squaring the future blocks into a Hessian doubles
  // the condition number. The feasible futures (u_F, y_F) themselves form a
  // small, well-scaled affine set, so optimize over an orthonormal
  // parametrization of that set and back out a minimum-norm combination only
  // for reporting.
  const Index nu = lib.m * cfg.N, ny = lib.p * cfg.N;
  Matrix W(nu + ny, lib.l);
  W.topRows(nu) = U_F;
  W.bottomRows(ny) = Y_F;
  const Vector g0 = lstsq_min_norm(A_eq, Matrix(b_eq)).col(0);
  const double window_resid = (A_eq * g0 - b_eq).norm();
  const double a_norm = A_eq.cwiseAbs().rowwise().sum().maxCoeff();

  ControlSolution sol;
  sol.sigma_y = Vector::Zero(lib.p * lib.T_ini);
  if (window_resid >
      cfg.feas_tol * (1.0 + b_eq.norm() + a_norm * g0.cwiseAbs().maxCoeff())) {
    sol.g = g0;
    sol.u_F = U_F * g0;
    sol.y_F = Y_F * g0;
    sol.objective = sol.u_F.dot(W_R * sol.u_F) + (sol.y_F - yr).dot(W_Q * (sol.y_F - yr));
    sol.kkt_residual = window_resid;
    sol.status = QpStatus::infeasible;
    sol.message =
        detail::msg("initial window is outside the library span, residual ", window_resid);
    return sol;
  }
  const Matrix Z = kernel_basis(A_eq);
  const Matrix M = Z.cols() > 0 ? Matrix(W * Z) : Matrix(W.rows(), 0);
  // Directions reachable only through combinations far beyond the library's
  // scale are numerical ghosts of the window equalities, not plannable
  // futures; cut the basis at the feasibility tolerance so the optimizer
  // cannot exploit them.
  const Matrix B = range_basis(M, cfg.feas_tol * M.norm());
  const Vector w0 = W * g0;
  // Center the parametrization on the minimum-norm feasible future: the
  // min-norm combination's own future can be enormous through the data's
  // small singular values, and offsetting the box by it would wreck every
  // scale-relative tolerance downstream. The second projection pass mops up
  // the roundoff the large cancellation leaves along the basis.
  Vector w_ref = w0;
  if (B.cols() > 0) {
    w_ref -= B * (B.transpose() * w_ref).eval();
    w_ref -= B * (B.transpose() * w_ref).eval();
  }

  Matrix Hw = Matrix::Zero(W.rows(), W.rows());
  Hw.topLeftCorner(nu, nu) = 2.0 * W_R;
  Hw.bottomRightCorner(ny, ny) = 2.0 * W_Q;
  Vector cw = Vector::Zero(W.rows());
  cw.tail(ny) = -2.0 * (W_Q * yr);
  Matrix P = B.transpose() * Hw * B;
  P = 0.5 * (P + P.transpose()).eval();
  const Vector q = B.transpose() * (Hw * w_ref + cw);
  QpBox box{B.topRows(nu), detail::tile(cfg.u_min, cfg.N) - w_ref.head(nu),
            detail::tile(cfg.u_max, cfg.N) - w_ref.head(nu)};
  QpOptions opts;
  opts.feas_tol = cfg.feas_tol;
  const QpSolution qp = solve_eq_box_qp(P, q, Matrix(0, B.cols()), Vector(0), box, opts);

  const Vector w = w_ref + B * qp.z;
  sol.u_F = w.head(nu);
  sol.y_F = w.tail(ny);
  sol.g = g0;
  if (Z.cols() > 0) sol.g += Z * lstsq_min_norm(M, Matrix(w - w0)).col(0);
  sol.objective = sol.u_F.dot(W_R * sol.u_F) + (sol.y_F - yr).dot(W_Q * (sol.y_F - yr));
  sol.kkt_residual = qp.kkt_residual;
  sol.status = qp.status;
  sol.iterations = qp.iterations;
  sol.message = qp.message;
  return sol;
}

// Affine-data variant: adds the combination constraint sum(g) = 1, relaxes the
// initial output window by a slack, and regularizes both. The regularizers are
// squared two-norms so the step stays a QP; reports flag this.
inline ControlSolution dda_mpc_step(const TrajectoryLibrary& lib, const Vector& u_ini,
                                    const Vector& y_ini, const ControllerConfig& cfg,
                                    Index step = 0) {
  check_config(cfg, lib.m, lib.p);
  if (cfg.T_ini != lib.T_ini || cfg.N != lib.N)
    throw ConfigError(detail::msg("config (T_ini=", cfg.T_ini, ", N=", cfg.N,
                                  ") does not match library (T_ini=", lib.T_ini, ", N=", lib.N,
                                  ")"));
  if (u_ini.size() != lib.m * lib.T_ini || y_ini.size() != lib.p * lib.T_ini)
    throw ConfigError("initial window lengths do not match the library partition");
  const Index nslack = lib.p * lib.T_ini;
  const Index nvar = lib.l + nslack;
  const Matrix U_F = lib.U_F(), Y_F = lib.Y_F();
  const Matrix W_R = detail::block_diag_repeat(cfg.R_step, cfg.N);
  const Matrix W_Q = detail::block_diag_repeat(cfg.Q_step, cfg.N);
  const Vector yr = detail::horizon_reference(cfg, lib.p, step);

  Matrix P = Matrix::Zero(nvar, nvar);
  P.topLeftCorner(lib.l, lib.l) =
      2.0 * (U_F.transpose() * W_R * U_F + Y_F.transpose() * W_Q * Y_F +
             cfg.lambda_g * Matrix::Identity(lib.l, lib.l));
  P.bottomRightCorner(nslack, nslack) = 2.0 * cfg.lambda_y * Matrix::Identity(nslack, nslack);
  P = 0.5 * (P + P.transpose()).eval();
  Vector q = Vector::Zero(nvar);
  q.head(lib.l) = -2.0 * Y_F.transpose() * (W_Q * yr);
  // Equalities: U_P g = u_ini, Y_P g - sigma = y_ini, sum(g) = 1.
  Matrix A_eq = Matrix::Zero(lib.m * lib.T_ini + nslack + 1, nvar);
  Vector b_eq(A_eq.rows());
  A_eq.topLeftCorner(lib.m * lib.T_ini, lib.l) = lib.U_P();
  b_eq.head(lib.m * lib.T_ini) = u_ini;
  A_eq.block(lib.m * lib.T_ini, 0, nslack, lib.l) = lib.Y_P();
  A_eq.block(lib.m * lib.T_ini, lib.l, nslack, nslack) = -Matrix::Identity(nslack, nslack);
  b_eq.segment(lib.m * lib.T_ini, nslack) = y_ini;
  A_eq.row(A_eq.rows() - 1).head(lib.l).setOnes();
  b_eq(A_eq.rows() - 1) = 1.0;
  QpBox box;
  box.G = Matrix::Zero(lib.m * cfg.N, nvar);
  box.G.leftCols(lib.l) = U_F;
  box.lo = detail::tile(cfg.u_min, cfg.N);
  box.hi = detail::tile(cfg.u_max, cfg.N);
  QpOptions opts;
  opts.feas_tol = cfg.feas_tol;
  const QpSolution qp = solve_eq_box_qp(P, q, A_eq, b_eq, box, opts);

  ControlSolution sol;
  sol.g = qp.z.head(lib.l);
  sol.sigma_y = qp.z.tail(nslack);
  sol.u_F = U_F * sol.g;
  sol.y_F = Y_F * sol.g;
  sol.objective = sol.u_F.dot(W_R * sol.u_F) + (sol.y_F - yr).dot(W_Q * (sol.y_F - yr)) +
                  cfg.lambda_g * sol.g.squaredNorm() + cfg.lambda_y * sol.sigma_y.squaredNorm();
  sol.kkt_residual = qp.kkt_residual;
  sol.status = qp.status;
  sol.iterations = qp.iterations;
  sol.message = qp.message;
  return sol;
}

namespace detail {

// Model-based step over the horizon response y = O z0 + T u with the box
// directly on u. O and T only depend on the model and horizon, so closed-loop
// drivers precompute them once.
inline ControlSolution model_mpc_step(const Matrix& O_N, const Matrix& T_N, const Vector& z0,
                                      const ControllerConfig& cfg, Index m, Index p,
                                      Index step) {
  const Matrix W_R = block_diag_repeat(cfg.R_step, cfg.N);
  const Matrix W_Q = block_diag_repeat(cfg.Q_step, cfg.N);
  const Vector yr = horizon_reference(cfg, p, step);
  const Vector free_response = O_N * z0;
  Matrix P = 2.0 * (W_R + T_N.transpose() * W_Q * T_N);
  P = 0.5 * (P + P.transpose()).eval();
  const Vector q = 2.0 * T_N.transpose() * (W_Q * (free_response - yr));
  QpBox box{Matrix::Identity(m * cfg.N, m * cfg.N), tile(cfg.u_min, cfg.N),
            tile(cfg.u_max, cfg.N)};
  QpOptions opts;
  opts.feas_tol = cfg.feas_tol;
  const QpSolution qp =
      solve_eq_box_qp(P, q, Matrix(0, m * cfg.N), Vector(0), box, opts);

  ControlSolution sol;
  sol.u_F = qp.z;
  sol.y_F = free_response + T_N * qp.z;
  sol.sigma_y = Vector::Zero(p * cfg.T_ini);
  sol.objective = sol.u_F.dot(W_R * sol.u_F) + (sol.y_F - yr).dot(W_Q * (sol.y_F - yr));
  sol.kkt_residual = qp.kkt_residual;
  sol.status = qp.status;
  sol.iterations = qp.iterations;
  sol.message = qp.message;
  return sol;
}

}  // namespace detail

inline ControlSolution edmd_mpc_step(const StateSpaceModel& model, const LiftingDictionary& dict,
                                     const Vector& x_now, const ControllerConfig& cfg,
                                     Index step = 0) {
  check_config(cfg, model.input_dim(), model.output_dim());
  if (dict.n_z() != model.state_dim())
    throw ConfigError(detail::msg("dictionary size ", dict.n_z(), " does not match model order ",
                                  model.state_dim()));
  return detail::model_mpc_step(observability_matrix(model, cfg.N),
                                toeplitz_response(model, cfg.N), evaluate(dict, x_now), cfg,
                                model.input_dim(), model.output_dim(), step);
}

inline double realized_cost(const Matrix& u_applied, const Matrix& y_observed,
                            const Matrix& y_reference, const Matrix& R_step,
                            const Matrix& Q_step) {
  if (u_applied.cols() != y_observed.cols() || y_observed.cols() != y_reference.cols())
    throw ConfigError(detail::msg("cost accounting over unequal lengths: ", u_applied.cols(),
                                  " inputs, ", y_observed.cols(), " outputs, ",
                                  y_reference.cols(), " reference samples"));
  double cost = 0.0;
  for (Index k = 0; k < u_applied.cols(); ++k) {
    const Vector e = y_observed.col(k) - y_reference.col(k);
    cost += u_applied.col(k).dot(R_step * u_applied.col(k)) + e.dot(Q_step * e);
  }
  return cost;
}

// A controller is one of the step laws above bound to its data or model; the
// closed-loop driver only needs the window depth and the step callable.
struct Controller {
  Index T_ini = 0;
  std::function<ControlSolution(const Vector& u_ini, const Vector& y_ini, const Vector& x_now,
                                Index step)>
      step;
};

inline Controller make_ddk_controller(const TrajectoryLibrary& lib, const ControllerConfig& cfg) {
  check_config(cfg, lib.m, lib.p);
  return {cfg.T_ini, [lib, cfg](const Vector& u_ini, const Vector& y_ini, const Vector&,
                                Index k) { return ddk_mpc_step(lib, u_ini, y_ini, cfg, k); }};
}

inline Controller make_dda_controller(const TrajectoryLibrary& lib, const ControllerConfig& cfg) {
  check_config(cfg, lib.m, lib.p);
  return {cfg.T_ini, [lib, cfg](const Vector& u_ini, const Vector& y_ini, const Vector&,
                                Index k) { return dda_mpc_step(lib, u_ini, y_ini, cfg, k); }};
}

inline Controller make_edmd_controller(const StateSpaceModel& model,
                                       const LiftingDictionary& dict,
                                       const ControllerConfig& cfg) {
  check_config(cfg, model.input_dim(), model.output_dim());
  if (dict.n_z() != model.state_dim())
    throw ConfigError(detail::msg("dictionary size ", dict.n_z(), " does not match model order ",
                                  model.state_dim()));
  const Matrix O_N = observability_matrix(model, cfg.N);
  const Matrix T_N = toeplitz_response(model, cfg.N);
  const Index m = model.input_dim(), p = model.output_dim();
  return {cfg.T_ini,
          [O_N, T_N, dict, cfg, m, p](const Vector&, const Vector&, const Vector& x_now,
                                      Index k) {
            return detail::model_mpc_step(O_N, T_N, evaluate(dict, x_now), cfg, m, p, k);
          }};
}

// Startup window for a closed-loop run: drive the plant with zero input for
// T_ini steps so the first controller call has a consistent history.
inline Trajectory zero_input_warm_start(const NonlinearSystem& plant, const Vector& x0,
                                        Index T_ini) {
  return simulate_nonlinear(plant, x0, Matrix::Zero(plant.m, T_ini));
}

struct ClosedLoopResult {
  Trajectory loop;        // applied inputs, measured outputs, plant states
  Matrix reference;       // p x steps, the tracked reference per executed step
  double realized_cost = 0.0;
  Matrix y_pred_one;      // first predicted output per step (consistency diagnostics)
  std::vector<double> objectives;
  std::vector<double> kkt_residuals;
  std::vector<Index> iterations;
};

// Receding-horizon loop: solve, apply the first input only, advance the
// plant, slide the window. Any non-optimal controller status aborts with the
// loop index; masking infeasibility would silently corrupt the run.
inline ClosedLoopResult run_receding_horizon(const NonlinearSystem& plant,
                                             const Controller& ctrl, Index steps,
                                             const std::function<Vector(Index)>& reference,
                                             const Matrix& R_step, const Matrix& Q_step,
                                             const Trajectory& warm_start) {
  check_trajectory(warm_start);
  if (steps < 1) throw ConfigError(detail::msg("closed loop needs >= 1 steps, got ", steps));
  if (!warm_start.has_states())
    throw ConfigError("warm start must record plant states (the loop continues from them)");
  if (warm_start.length() < ctrl.T_ini)
    throw ConfigError(detail::msg("warm start has ", warm_start.length(),
                                  " steps, controller needs ", ctrl.T_ini));
  const Index m = plant.m, p = plant.p;
  Matrix u_hist = warm_start.u.rightCols(ctrl.T_ini);
  Matrix y_hist = warm_start.y.rightCols(ctrl.T_ini);
  Vector x = plant.f(warm_start.x.col(warm_start.length() - 1),
                     warm_start.u.col(warm_start.length() - 1));

  ClosedLoopResult res;
  res.loop.u.resize(m, steps);
  res.loop.y.resize(p, steps);
  res.loop.x.resize(plant.n, steps);
  res.reference.resize(p, steps);
  res.y_pred_one.resize(p, steps);
  for (Index k = 0; k < steps; ++k) {
    detail::guard_state(x, k);
    const Vector u_ini = Eigen::Map<const Vector>(u_hist.data(), u_hist.size());
    const Vector y_ini = Eigen::Map<const Vector>(y_hist.data(), y_hist.size());
    const ControlSolution sol = ctrl.step(u_ini, y_ini, x, k);
    if (sol.status != QpStatus::optimal)
      throw NumericError(detail::msg("controller step ", k, " ended ", to_string(sol.status),
                                     sol.message.empty() ? "" : ": " + sol.message));
    const Vector u_k = sol.u_F.head(m);
    res.loop.x.col(k) = x;
    res.loop.u.col(k) = u_k;
    res.loop.y.col(k) = plant.g(x, u_k);
    res.reference.col(k) = reference(k);
    res.y_pred_one.col(k) = sol.y_F.head(p);
    res.objectives.push_back(sol.objective);
    res.kkt_residuals.push_back(sol.kkt_residual);
    res.iterations.push_back(sol.iterations);
    x = plant.f(x, u_k);
    // Slide the initial window.
    if (ctrl.T_ini > 1) {
      u_hist.leftCols(ctrl.T_ini - 1) = u_hist.rightCols(ctrl.T_ini - 1).eval();
      y_hist.leftCols(ctrl.T_ini - 1) = y_hist.rightCols(ctrl.T_ini - 1).eval();
    }
    u_hist.col(ctrl.T_ini - 1) = u_k;
    y_hist.col(ctrl.T_ini - 1) = res.loop.y.col(k);
  }
  res.realized_cost = realized_cost(res.loop.u, res.loop.y, res.reference, R_step, Q_step);
  return res;
}

}  // namespace ddk
