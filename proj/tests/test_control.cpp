#include <catch2/catch_amalgamated.hpp>

#include "ddk/benchmark.hpp"
#include "ddk/control.hpp"

using namespace ddk;

namespace {

Trajectory benchmark_recording(std::uint64_t seed = 43, Index T = 52) {
  const BenchmarkSystem bench = benchmark_system();
  Rng rng(seed);
  const Vector x0 = uniform_vector(rng, 2, -1.0, 1.0);
  const Matrix u = uniform_matrix(rng, 1, T, -5.0, 5.0);
  return simulate_nonlinear(bench.plant, x0, u);
}

ControllerConfig tracking_config() {
  ControllerConfig cfg;
  cfg.N = 20;
  cfg.T_ini = 4;
  cfg.R_step = Matrix::Identity(1, 1);
  cfg.Q_step = Matrix::Zero(2, 2);
  cfg.Q_step(1, 1) = 100.0;
  cfg.u_min = Vector::Constant(1, -5.0);
  cfg.u_max = Vector::Constant(1, 5.0);
  Vector target(2);
  target << 0.0, 5.0;
  cfg.reference = [target](Index) { return target; };
  return cfg;
}

// Window vectors for a plant rolled forward under zero input.
struct Windows {
  Vector u_ini, y_ini, x_now;
};

Windows warm_windows(const ControllerConfig& cfg, const Vector& x0) {
  const BenchmarkSystem bench = benchmark_system();
  const Trajectory warm = zero_input_warm_start(bench.plant, x0, cfg.T_ini);
  Windows w;
  w.u_ini = Eigen::Map<const Vector>(warm.u.data(), warm.u.size());
  w.y_ini = Eigen::Map<const Vector>(warm.y.data(), warm.y.size());
  Vector x = warm.x.col(warm.length() - 1);
  w.x_now = bench.plant.f(x, Vector::Zero(1));
  return w;
}

}  // namespace

TEST_CASE("controller configuration is validated up front", "[control]") {
  ControllerConfig cfg = tracking_config();
  CHECK_NOTHROW(check_config(cfg, 1, 2));
  ControllerConfig bad = cfg;
  bad.R_step = Matrix::Zero(1, 1);  // not positive definite
  CHECK_THROWS_AS(check_config(bad, 1, 2), ConfigError);
  bad = cfg;
  bad.Q_step(0, 1) = 3.0;  // asymmetric / indefinite
  CHECK_THROWS_AS(check_config(bad, 1, 2), ConfigError);
  bad = cfg;
  bad.u_min(0) = 6.0;  // crosses u_max
  CHECK_THROWS_AS(check_config(bad, 1, 2), ConfigError);
  bad = cfg;
  bad.reference = nullptr;
  CHECK_THROWS_AS(check_config(bad, 1, 2), ConfigError);
  bad = cfg;
  bad.lambda_g = -1.0;
  CHECK_THROWS_AS(check_config(bad, 1, 2), ConfigError);
}

TEST_CASE("one receding-horizon step stays inside the input box", "[control]") {
  const TrajectoryLibrary lib = library_from_single(benchmark_recording(), 24, 4, 20);
  const ControllerConfig cfg = tracking_config();
  Vector x0(2);
  x0 << 0.6, 0.0;
  const Windows w = warm_windows(cfg, x0);
  const ControlSolution sol = ddk_mpc_step(lib, w.u_ini, w.y_ini, cfg);
  REQUIRE(sol.status == QpStatus::optimal);
  CHECK(sol.kkt_residual <= 1e-6);
  REQUIRE(sol.u_F.size() == 20);
  REQUIRE(sol.y_F.size() == 40);
  for (Index k = 0; k < 20; ++k) {
    CHECK(sol.u_F(k) >= -5.0 - 1e-9);
    CHECK(sol.u_F(k) <= 5.0 + 1e-9);
  }

  // Chasing an unreachable target rails the plan against the bound, and the
  // bound still holds as stated.
  ControllerConfig greedy = cfg;
  Vector far(2);
  far << 0.0, 50.0;
  greedy.reference = [far](Index) { return far; };
  const ControlSolution railed = ddk_mpc_step(lib, w.u_ini, w.y_ini, greedy);
  REQUIRE(railed.status == QpStatus::optimal);
  CHECK(railed.u_F.maxCoeff() >= 5.0 - 1e-9);
  CHECK(railed.u_F.maxCoeff() <= 5.0 + 1e-9);
}

TEST_CASE("applying the planned input reproduces the predicted output", "[control]") {
  const BenchmarkSystem bench = benchmark_system();
  const TrajectoryLibrary lib = library_from_single(benchmark_recording(), 24, 4, 20);
  const ControllerConfig cfg = tracking_config();
  Vector x0(2);
  x0 << 0.6, 0.0;
  const Windows w = warm_windows(cfg, x0);
  const ControlSolution sol = ddk_mpc_step(lib, w.u_ini, w.y_ini, cfg);
  REQUIRE(sol.status == QpStatus::optimal);
  const Vector u0 = sol.u_F.head(1);
  const Vector y_measured = bench.plant.g(w.x_now, u0);
  CHECK((y_measured - sol.y_F.head(2)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("scaling both weights leaves the plan unchanged", "[control]") {
  const TrajectoryLibrary lib = library_from_single(benchmark_recording(), 24, 4, 20);
  Vector x0(2);
  x0 << 0.3, -0.2;
  for (double c : {0.1, 10.0}) {
    const ControllerConfig base = tracking_config();
    ControllerConfig scaled = base;
    scaled.R_step *= c;
    scaled.Q_step *= c;
    const Windows w = warm_windows(base, x0);
    const Vector u_base = ddk_mpc_step(lib, w.u_ini, w.y_ini, base).u_F;
    const Vector u_scaled = ddk_mpc_step(lib, w.u_ini, w.y_ini, scaled).u_F;
    CHECK((u_base - u_scaled).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("realized cost accumulates stage costs", "[control]") {
  Matrix u(1, 2), y(2, 2), refs(2, 2);
  u << 1.0, 2.0;
  y << 1.0, 0.0, 0.0, 2.0;
  refs.setZero();
  Matrix R = Matrix::Identity(1, 1);
  Matrix Q = Matrix::Zero(2, 2);
  Q(0, 0) = 1.0;
  Q(1, 1) = 3.0;
  // (1 + 4) + (1*1 + 3*0) + (1*0 + 3*4) = 18
  CHECK(std::abs(realized_cost(u, y, refs, R, Q) - 18.0) <= 1e-12);
}

TEST_CASE("the affine variant reports slack and regularized objective", "[control]") {
  const TrajectoryLibrary lib = library_from_single(benchmark_recording(), 24, 4, 20);
  ControllerConfig cfg = tracking_config();
  cfg.lambda_g = 400.0;
  cfg.lambda_y = 2e5;
  Vector x0(2);
  x0 << 0.6, 0.0;
  const Windows w = warm_windows(cfg, x0);
  const ControlSolution sol = dda_mpc_step(lib, w.u_ini, w.y_ini, cfg);
  REQUIRE(sol.status == QpStatus::optimal);
  REQUIRE(sol.sigma_y.size() == 8);
  REQUIRE(sol.g.size() == lib.l);
  // The combination really is affine.
  CHECK(std::abs(sol.g.sum() - 1.0) <= 1e-8);

  // Reported objective = tracking cost + both penalty terms at the solution.
  const Matrix y_hat = Eigen::Map<const Matrix>(sol.y_F.data(), 2, 20);
  double tracking = 0.0;
  for (Index k = 0; k < 20; ++k) {
    const Vector dy = y_hat.col(k) - cfg.reference(k);
    tracking += sol.u_F(k) * sol.u_F(k) + dy.dot(cfg.Q_step * dy);
  }
  const double expected =
      tracking + cfg.lambda_g * sol.g.squaredNorm() + cfg.lambda_y * sol.sigma_y.squaredNorm();
  CHECK(std::abs(sol.objective - expected) <= 1e-6 * (1.0 + std::abs(expected)));
}

TEST_CASE("closed loop drives the tracked channel to a step target", "[control]") {
  const BenchmarkSystem bench = benchmark_system();
  const ControllerConfig cfg = tracking_config();
  const Controller ctrl =
      make_ddk_controller(library_from_single(benchmark_recording(), 24, 4, 20), cfg);
  Vector x0(2);
  x0 << 0.6, 0.0;
  const Trajectory warm = zero_input_warm_start(bench.plant, x0, cfg.T_ini);
  REQUIRE(warm.length() == 4);
  CHECK(warm.u.cwiseAbs().maxCoeff() == 0.0);

  const Index steps = 60;
  const ClosedLoopResult run = run_receding_horizon(bench.plant, ctrl, steps, cfg.reference,
                                                    cfg.R_step, cfg.Q_step, warm);
  REQUIRE(run.loop.length() == steps);
  REQUIRE(run.reference.cols() == steps);
  CHECK(run.realized_cost > 0.0);
  CHECK(std::isfinite(run.realized_cost));
  // Settled tail.
  for (Index k = 40; k < steps; ++k) CHECK(std::abs(run.loop.y(1, k) - 5.0) <= 0.01);
  // Box respected along the whole run.
  CHECK(run.loop.u.maxCoeff() <= 5.0 + 1e-9);
  CHECK(run.loop.u.minCoeff() >= -5.0 - 1e-9);
  // One-step-ahead predictions match what the plant then produced.
  CHECK((run.y_pred_one - run.loop.y).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(run.objectives.size() == static_cast<std::size_t>(steps));
  CHECK(*std::max_element(run.kkt_residuals.begin(), run.kkt_residuals.end()) <= 1e-6);
}

TEST_CASE("library and lifted-model controllers land close together", "[control]") {
  const BenchmarkSystem bench = benchmark_system();
  const ControllerConfig cfg = tracking_config();
  const Trajectory data = benchmark_recording();
  Vector x0(2);
  x0 << 0.6, 0.0;
  const Trajectory warm = zero_input_warm_start(bench.plant, x0, cfg.T_ini);

  const ClosedLoopResult by_library =
      run_receding_horizon(bench.plant, make_ddk_controller(library_from_single(data, 24, 4, 20), cfg),
                           40, cfg.reference, cfg.R_step, cfg.Q_step, warm);
  // The exact lifted model is the ceiling for what the library can achieve.
  const ClosedLoopResult by_model = run_receding_horizon(
      bench.plant, make_edmd_controller(bench.embedding, bench.dictionary, cfg), 40,
      cfg.reference, cfg.R_step, cfg.Q_step, warm);
  CHECK(std::abs(by_library.realized_cost - by_model.realized_cost) <=
        0.05 * (1.0 + by_model.realized_cost));
}

TEST_CASE("a non-optimal controller step aborts the loop with its index", "[control]") {
  const BenchmarkSystem bench = benchmark_system();
  Controller broken;
  broken.T_ini = 2;
  broken.step = [](const Vector&, const Vector&, const Vector&, Index) {
    ControlSolution sol;
    sol.status = QpStatus::infeasible;
    sol.message = "forced";
    return sol;
  };
  const Trajectory warm = zero_input_warm_start(bench.plant, Vector::Zero(2), 2);
  try {
    run_receding_horizon(bench.plant, broken, 10, [](Index) { return Vector::Zero(2); },
                         Matrix::Identity(1, 1), Matrix::Identity(2, 2), warm);
    FAIL("expected the loop to abort");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("step 0") != std::string::npos);
    CHECK(what.find("infeasible") != std::string::npos);
  }
}

TEST_CASE("warm start must cover the controller window", "[control]") {
  const BenchmarkSystem bench = benchmark_system();
  const ControllerConfig cfg = tracking_config();
  const Controller ctrl =
      make_ddk_controller(library_from_single(benchmark_recording(), 24, 4, 20), cfg);
  const Trajectory warm = zero_input_warm_start(bench.plant, Vector::Zero(2), 3);  // too short
  CHECK_THROWS_AS(run_receding_horizon(bench.plant, ctrl, 5, cfg.reference, cfg.R_step,
                                       cfg.Q_step, warm),
                  ConfigError);
}
