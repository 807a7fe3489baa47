#pragma once

#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "ddk/benchmark.hpp"
#include "ddk/control.hpp"
#include "ddk/io.hpp"
#include "ddk/lifting.hpp"
#include "ddk/representation.hpp"
#include "ddk/systems.hpp"
#include "ddk/trajectory.hpp"

namespace ddk {

namespace fs = std::filesystem;

// A scenario is one JSON document; each command reads its own section plus
// the shared "system" entry. Relative file references resolve against the
// config's directory.
struct Scenario {
  Json config;
  fs::path base_dir;
};

inline Scenario load_scenario(const fs::path& config_path) {
  Scenario sc;
  try {
    detail::open_in(config_path) >> sc.config;
  } catch (const Json::exception& e) {
    throw ConfigError(detail::msg(config_path.string(), ": ", e.what()));
  }
  sc.base_dir = config_path.has_parent_path() ? config_path.parent_path() : fs::path(".");
  return sc;
}

struct ResolvedSystem {
  NonlinearSystem plant;
  std::string label;
  bool benchmark = false;
};

inline ResolvedSystem resolve_system(const Scenario& sc) {
  const Json spec = sc.config.value("system", Json("benchmark"));
  if (spec.is_string()) {
    if (spec.get<std::string>() != "benchmark")
      throw ConfigError(detail::msg("unknown built-in system '", spec.get<std::string>(), "'"));
    return {benchmark_system().plant, "benchmark", true};
  }
  if (spec.is_object() && spec.contains("model_file")) {
    const fs::path path = sc.base_dir / spec.at("model_file").get<std::string>();
    ResolvedSystem rs;
    rs.label = path.string();
    std::visit([&rs](const auto& mdl) { rs.plant = to_nonlinear(mdl); }, load_model(path));
    return rs;
  }
  throw ConfigError("'system' must be \"benchmark\" or {\"model_file\": ...}");
}

namespace detail {

// Sampling boxes for data collection; the defaults mirror the built-in
// benchmark campaigns (inputs in [-5,5], initial states in [-1,1]^n).
struct SampleBoxes {
  double input_low = -5.0, input_high = 5.0;
  double state_low = -1.0, state_high = 1.0;
};

inline SampleBoxes sample_boxes(const Json& section) {
  SampleBoxes b;
  b.input_low = section.value("input_low", b.input_low);
  b.input_high = section.value("input_high", b.input_high);
  b.state_low = section.value("state_low", b.state_low);
  b.state_high = section.value("state_high", b.state_high);
  if (b.input_low > b.input_high || b.state_low > b.state_high)
    throw ConfigError("sampling boxes must have low <= high");
  return b;
}

inline Trajectory collect_uniform(const NonlinearSystem& plant, const SampleBoxes& box,
                                  Index length, Rng& rng) {
  const Vector x0 = uniform_vector(rng, plant.n, box.state_low, box.state_high);
  const Matrix u = uniform_matrix(rng, plant.m, length, box.input_low, box.input_high);
  return simulate_nonlinear(plant, x0, u);
}

// Runs fn(rep) for every repetition on a small worker pool; repetitions own
// disjoint RNG streams and output files, so the only shared state is the
// first-error slot.
template <typename Fn>
void parallel_reps(Index reps, Fn&& fn) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers =
      static_cast<unsigned>(std::min<Index>(reps, static_cast<Index>(hw)));
  if (workers <= 1) {
    for (Index r = 0; r < reps; ++r) fn(r);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const Index r = next.fetch_add(1);
        if (r >= reps) return;
        try {
          fn(r);
        } catch (...) {
          std::scoped_lock lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline std::function<Vector(Index)> parse_reference(const Json& section, Index p) {
  const Json ref = section.value("reference", Json{{"kind", "step"}, {"value", Json::array()}});
  const std::string kind = ref.value("kind", "step");
  if (kind == "step") {
    std::vector<double> value = ref.value("value", std::vector<double>(p, 0.0));
    if (static_cast<Index>(value.size()) != p)
      throw ConfigError(msg("reference value has ", value.size(), " entries, expected ", p));
    Vector v = Eigen::Map<const Vector>(value.data(), p);
    return [v](Index) { return v; };
  }
  if (kind == "sinusoid") {
    const double amplitude = ref.value("amplitude", 5.0);
    const double period = ref.value("period", 60.0);
    const Index channel = ref.value("channel", Index(1));
    if (channel < 1 || channel > p)
      throw ConfigError(msg("reference channel ", channel, " out of range 1..", p));
    if (period <= 0) throw ConfigError("reference period must be positive");
    return [amplitude, period, channel, p](Index k) {
      Vector v = Vector::Zero(p);
      v(channel - 1) = amplitude * std::sin(2.0 * M_PI * static_cast<double>(k) / period);
      return v;
    };
  }
  throw ConfigError(msg("unknown reference kind '", kind, "'"));
}

inline Matrix parse_future_input(const Json& section, const Scenario& sc, Index m, Index N) {
  const Json uf = section.value("u_F", Json{{"kind", "sinusoid"}});
  const std::string kind = uf.value("kind", "sinusoid");
  if (kind == "file") {
    const fs::path path = sc.base_dir / uf.at("path").get<std::string>();
    Matrix M = read_matrix_csv(path);  // one row per step
    if (M.cols() != m)
      throw ConfigError(msg(path.string(), " has ", M.cols(), " columns, expected ", m));
    if (M.rows() < N)
      throw ConfigError(msg(path.string(), " has ", M.rows(), " steps, horizon needs ", N));
    return M.topRows(N).transpose();
  }
  if (kind == "sinusoid") {
    const double amplitude = uf.value("amplitude", 5.0);
    const double period = uf.value("period", 8.0);
    if (period <= 0) throw ConfigError("input period must be positive");
    Matrix M = Matrix::Zero(m, N);
    for (Index k = 0; k < N; ++k)
      M(0, k) = amplitude * std::sin(2.0 * M_PI * static_cast<double>(k) / period);
    return M;
  }
  throw ConfigError(msg("unknown u_F kind '", kind, "'"));
}

struct EdmdSection {
  Index centers = 300;
  Index trajectories = 200;
  Index length = 200;
  double center_low = -1.0, center_high = 1.0;
};

inline EdmdSection edmd_section(const Json& section) {
  EdmdSection e;
  if (!section.contains("edmd")) return e;
  const Json& j = section.at("edmd");
  e.centers = j.value("centers", e.centers);
  e.trajectories = j.value("trajectories", e.trajectories);
  e.length = j.value("length", e.length);
  e.center_low = j.value("center_low", e.center_low);
  e.center_high = j.value("center_high", e.center_high);
  if (e.centers < 1 || e.trajectories < 1 || e.length < 2)
    throw ConfigError("edmd campaign needs >= 1 centers, >= 1 trajectories of length >= 2");
  return e;
}

struct FittedEdmd {
  LiftingDictionary dict;
  EdmdFit fit;
};

inline FittedEdmd fit_edmd_model(const NonlinearSystem& plant, const EdmdSection& sec,
                                 const SampleBoxes& boxes, Rng& rng) {
  std::vector<Vector> centers;
  centers.reserve(static_cast<std::size_t>(sec.centers));
  for (Index i = 0; i < sec.centers; ++i)
    centers.push_back(uniform_vector(rng, plant.n, sec.center_low, sec.center_high));
  FittedEdmd out{thin_plate_dictionary(centers, true), {}};
  std::vector<Trajectory> trajs;
  trajs.reserve(static_cast<std::size_t>(sec.trajectories));
  for (Index i = 0; i < sec.trajectories; ++i)
    trajs.push_back(collect_uniform(plant, boxes, sec.length, rng));
  out.fit = edmd_fit(snapshots_from_trajectories(trajs), out.dict);
  return out;
}

inline void write_json(const fs::path& path, const Json& j) {
  open_out(path) << j.dump(2) << '\n';
}

}  // namespace detail

// ---- collect -------------------------------------------------------------

inline void cmd_collect(const Scenario& sc, const fs::path& out_dir, std::uint64_t seed,
                        Index reps) {
  const ResolvedSystem sys = resolve_system(sc);
  if (!sc.config.contains("collect")) throw ConfigError("scenario has no 'collect' section");
  const Json& section = sc.config.at("collect");
  const Index count = section.value("trajectories", Index(1));
  const Index length = section.value("length", Index(0));
  const bool record_states = section.value("record_states", true);
  if (count < 1) throw ConfigError(detail::msg("'trajectories' must be >= 1, got ", count));
  if (length < 1) throw ConfigError(detail::msg("'length' must be >= 1, got ", length));
  const detail::SampleBoxes boxes = detail::sample_boxes(section);
  fs::create_directories(out_dir);

  detail::parallel_reps(reps, [&](Index rep) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
    for (Index i = 0; i < count; ++i) {
      Trajectory traj = detail::collect_uniform(sys.plant, boxes, length, rng);
      if (!record_states) traj.x.resize(0, 0);
      write_trajectory_csv(out_dir / detail::msg("trajectory_r", rep, "_", i, ".csv"), traj);
    }
  });

  Json outputs = Json::array();
  for (Index rep = 0; rep < reps; ++rep)
    for (Index i = 0; i < count; ++i)
      outputs.push_back(Json{{"path", detail::msg("trajectory_r", rep, "_", i, ".csv")},
                             {"rep", rep},
                             {"index", i},
                             {"rep_seed", derive_seed(seed, static_cast<std::uint64_t>(rep))}});
  detail::write_json(out_dir / "manifest.json",
                     Json{{"command", "collect"},
                          {"system", sys.label},
                          {"seed", seed},
                          {"reps", reps},
                          {"input_law", detail::msg("iid uniform(", boxes.input_low, ",",
                                                    boxes.input_high, ")")},
                          {"config", sc.config},
                          {"outputs", outputs}});
}

// ---- predict ---------------------------------------------------------------

inline void cmd_predict(const Scenario& sc, const fs::path& out_dir, std::uint64_t seed,
                        Index /*reps*/) {
  const ResolvedSystem sys = resolve_system(sc);
  if (!sc.config.contains("predict")) throw ConfigError("scenario has no 'predict' section");
  const Json& section = sc.config.at("predict");
  const Index N = section.value("N", Index(20));
  if (N < 0) throw ConfigError("'N' must be >= 0");
  std::vector<Index> depths = section.value("T_ini", std::vector<Index>{2, 3, 4});
  const Index dda_depth = section.value("dda_T_ini", Index(4));
  const Index data_length = section.value("data_length", Index(52));
  const double feas_tol = section.value("feas_tol", 1e-6);
  const bool with_edmd = section.value("with_edmd", true);
  const detail::SampleBoxes boxes = detail::sample_boxes(section);
  fs::create_directories(out_dir);

  const fs::path csv_path = out_dir / "prediction.csv";
  Json errors = Json::object();
  if (N == 0) {
    // Nothing to predict; still emit the (empty) comparison table.
    std::ofstream f = detail::open_out(csv_path);
    f << "step\n";
    detail::write_json(out_dir / "errors.json", errors);
    detail::write_json(out_dir / "manifest.json",
                       Json{{"command", "predict"}, {"system", sys.label}, {"seed", seed},
                            {"config", sc.config},
                            {"outputs", Json::array({"prediction.csv", "errors.json"})}});
    return;
  }

  Index max_depth = dda_depth;
  for (Index d : depths) {
    if (d < 1) throw ConfigError("'T_ini' entries must be >= 1");
    max_depth = std::max(max_depth, d);
  }

  // One data trajectory feeds every library; the evaluation rollout is an
  // independent stream.
  Rng data_rng(derive_seed(seed, 0));
  const Trajectory data = detail::collect_uniform(sys.plant, boxes, data_length, data_rng);
  Rng eval_rng(derive_seed(seed, 1));
  const Vector x_start = uniform_vector(eval_rng, sys.plant.n, boxes.state_low, boxes.state_high);
  const Matrix u_warm =
      uniform_matrix(eval_rng, sys.plant.m, max_depth, boxes.input_low, boxes.input_high);
  const Matrix u_F = detail::parse_future_input(section, sc, sys.plant.m, N);
  Matrix u_all(sys.plant.m, max_depth + N);
  u_all.leftCols(max_depth) = u_warm;
  u_all.rightCols(N) = u_F;
  const Trajectory eval = simulate_nonlinear(sys.plant, x_start, u_all);
  const Matrix y_true = eval.y.rightCols(N);
  const Vector u_F_stacked = Eigen::Map<const Vector>(u_F.data(), u_F.size());

  struct Column {
    std::string name;
    Matrix y;  // p x N
  };
  std::vector<Column> columns;
  auto record = [&](const std::string& name, const Vector& y_stacked, const Json& extra) {
    Column col{name, Matrix(Eigen::Map<const Matrix>(y_stacked.data(), sys.plant.p, N))};
    Json entry = extra;
    entry["max_abs_error"] = (col.y - y_true).cwiseAbs().maxCoeff();
    errors[name] = entry;
    columns.push_back(std::move(col));
  };

  auto window = [&](Index depth) {
    PredictionProblem prob;
    prob.u_ini = Eigen::Map<const Vector>(eval.u.col(max_depth - depth).data(),
                                          sys.plant.m * depth);
    prob.y_ini = Eigen::Map<const Vector>(eval.y.col(max_depth - depth).data(),
                                          sys.plant.p * depth);
    prob.u_F = u_F_stacked;
    return prob;
  };

  for (Index depth : depths) {
    const TrajectoryLibrary lib = library_from_single(data, depth + N, depth, N);
    const PredictionResult res = ddk_predict(lib, window(depth), feas_tol);
    record(detail::msg("ddk_Tini", depth), res.y_F,
           Json{{"equality_residual", res.equality_residual},
                {"verdict", res.exact ? "exact" : "approximate"}});
  }
  {
    const TrajectoryLibrary lib = library_from_single(data, dda_depth + N, dda_depth, N);
    const PredictionResult res = dda_predict(lib, window(dda_depth), feas_tol);
    record(detail::msg("dda_Tini", dda_depth), res.y_F,
           Json{{"equality_residual", res.equality_residual},
                {"verdict", res.exact ? "exact" : "approximate"}});
  }
  if (with_edmd) {
    Rng edmd_rng(derive_seed(seed, 2));
    const detail::FittedEdmd em =
        detail::fit_edmd_model(sys.plant, detail::edmd_section(section), boxes, edmd_rng);
    const Matrix y_hat = koopman_predict(em.fit.model, em.dict, eval.x.col(max_depth), u_F);
    record("edmd_k", Eigen::Map<const Vector>(y_hat.data(), y_hat.size()),
           Json{{"dynamics_residual", em.fit.dynamics_residual},
                {"rank_deficient", em.fit.rank_deficient}});
  }

  std::ofstream f = detail::open_out(csv_path);
  f << "step";
  for (Index i = 0; i < sys.plant.p; ++i) f << ",true_y" << i + 1;
  for (const Column& col : columns)
    for (Index i = 0; i < sys.plant.p; ++i) f << ',' << col.name << "_y" << i + 1;
  f << '\n';
  for (Index k = 0; k < N; ++k) {
    f << k;
    for (Index i = 0; i < sys.plant.p; ++i) f << ',' << format_double(y_true(i, k));
    for (const Column& col : columns)
      for (Index i = 0; i < sys.plant.p; ++i) f << ',' << format_double(col.y(i, k));
    f << '\n';
  }
  f.close();
  detail::write_json(out_dir / "errors.json", errors);
  detail::write_json(out_dir / "manifest.json",
                     Json{{"command", "predict"}, {"system", sys.label}, {"seed", seed},
                          {"config", sc.config},
                          {"outputs", Json::array({"prediction.csv", "errors.json"})}});
}

// ---- control ---------------------------------------------------------------

inline void cmd_control(const Scenario& sc, const fs::path& out_dir, std::uint64_t seed,
                        Index reps) {
  const ResolvedSystem sys = resolve_system(sc);
  if (!sc.config.contains("control")) throw ConfigError("scenario has no 'control' section");
  const Json& section = sc.config.at("control");
  std::vector<std::string> methods =
      section.value("methods", std::vector<std::string>{"dd-k", "dd-a", "edmd-k"});
  const Index steps = section.value("steps", Index(80));
  const Index data_length = section.value("data_length", Index(52));
  const detail::SampleBoxes boxes = detail::sample_boxes(section);

  ControllerConfig cfg;
  cfg.N = section.value("N", Index(20));
  cfg.T_ini = section.value("T_ini", Index(4));
  cfg.R_step = section.contains("R") ? matrix_from_json(section.at("R"))
                                     : Matrix::Identity(sys.plant.m, sys.plant.m);
  cfg.Q_step = section.contains("Q") ? matrix_from_json(section.at("Q"))
                                     : Matrix::Identity(sys.plant.p, sys.plant.p);
  cfg.u_min = section.contains("u_min")
                  ? Vector(Eigen::Map<const Vector>(
                        section.at("u_min").get<std::vector<double>>().data(), sys.plant.m))
                  : Vector::Constant(sys.plant.m, -5.0);
  cfg.u_max = section.contains("u_max")
                  ? Vector(Eigen::Map<const Vector>(
                        section.at("u_max").get<std::vector<double>>().data(), sys.plant.m))
                  : Vector::Constant(sys.plant.m, 5.0);
  cfg.lambda_g = section.value("lambda_g", 400.0);
  cfg.lambda_y = section.value("lambda_y", 2e5);
  cfg.feas_tol = section.value("feas_tol", 1e-6);
  cfg.reference = detail::parse_reference(section, sys.plant.p);
  check_config(cfg, sys.plant.m, sys.plant.p);
  Vector x0 = Vector::Zero(sys.plant.n);
  if (section.contains("x0")) {
    const auto raw = section.at("x0").get<std::vector<double>>();
    if (static_cast<Index>(raw.size()) != sys.plant.n)
      throw ConfigError(detail::msg("'x0' has ", raw.size(), " entries, expected ", sys.plant.n));
    x0 = Eigen::Map<const Vector>(raw.data(), sys.plant.n);
  }
  for (const std::string& method : methods)
    if (method != "dd-k" && method != "dd-a" && method != "edmd-k")
      throw ConfigError(detail::msg("unknown method '", method, "'"));
  fs::create_directories(out_dir);

  struct RunRecord {
    Json report;
    double cost = 0.0;
  };
  std::vector<std::vector<RunRecord>> records(methods.size(),
                                              std::vector<RunRecord>(static_cast<std::size_t>(reps)));

  detail::parallel_reps(reps, [&](Index rep) {
    const std::uint64_t rep_seed = derive_seed(seed, static_cast<std::uint64_t>(rep));
    // The two data-driven controllers share one recording; the model-based
    // one gets its own campaign stream.
    Rng data_rng(derive_seed(rep_seed, 0));
    const Trajectory data = detail::collect_uniform(sys.plant, boxes, data_length, data_rng);
    const Trajectory warm = zero_input_warm_start(sys.plant, x0, cfg.T_ini);
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      const std::string& method = methods[mi];
      Controller ctrl;
      Json model_info = Json::object();
      if (method == "dd-k") {
        ctrl = make_ddk_controller(
            library_from_single(data, cfg.T_ini + cfg.N, cfg.T_ini, cfg.N), cfg);
      } else if (method == "dd-a") {
        ctrl = make_dda_controller(
            library_from_single(data, cfg.T_ini + cfg.N, cfg.T_ini, cfg.N), cfg);
        model_info["regularizer"] = "squared two-norms (lambda_g, lambda_y as configured)";
      } else {
        Rng edmd_rng(derive_seed(rep_seed, 1));
        const detail::FittedEdmd em =
            detail::fit_edmd_model(sys.plant, detail::edmd_section(section), boxes, edmd_rng);
        ctrl = make_edmd_controller(em.fit.model, em.dict, cfg);
        model_info["dynamics_residual"] = em.fit.dynamics_residual;
        model_info["rank_deficient"] = em.fit.rank_deficient;
      }
      const ClosedLoopResult run = run_receding_horizon(sys.plant, ctrl, steps, cfg.reference,
                                                        cfg.R_step, cfg.Q_step, warm);
      const std::string csv_name = detail::msg("loop_", method, "_r", rep, ".csv");
      write_trajectory_csv(out_dir / csv_name, run.loop);
      RunRecord rec;
      rec.cost = run.realized_cost;
      rec.report = Json{{"method", method},
                        {"rep", rep},
                        {"rep_seed", rep_seed},
                        {"csv", csv_name},
                        {"realized_cost", run.realized_cost},
                        {"objectives", run.objectives},
                        {"kkt_residuals", run.kkt_residuals},
                        {"solver_status", "optimal"},
                        {"model", model_info}};
      records[mi][static_cast<std::size_t>(rep)] = std::move(rec);
    }
  });

  Json runs = Json::array();
  Json summary = Json::object();
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    double total = 0.0;
    for (Index rep = 0; rep < reps; ++rep) {
      total += records[mi][static_cast<std::size_t>(rep)].cost;
      runs.push_back(records[mi][static_cast<std::size_t>(rep)].report);
    }
    summary[methods[mi]] =
        Json{{"mean_realized_cost", total / static_cast<double>(reps)}, {"reps", reps}};
  }
  detail::write_json(out_dir / "control_report.json",
                     Json{{"command", "control"},
                          {"system", sys.label},
                          {"seed", seed},
                          {"reps", reps},
                          {"regularizer_note",
                           "dd-a penalties enter the QP as squared two-norms"},
                          {"summary", summary},
                          {"runs", runs}});
  detail::write_json(out_dir / "manifest.json",
                     Json{{"command", "control"}, {"system", sys.label}, {"seed", seed},
                          {"reps", reps}, {"config", sc.config},
                          {"outputs", Json::array({"control_report.json"})}});
}

// ---- diagnose --------------------------------------------------------------

inline void cmd_diagnose(const Scenario& sc, const fs::path& out_dir, std::uint64_t seed,
                         Index /*reps*/) {
  const ResolvedSystem sys = resolve_system(sc);
  if (!sc.config.contains("diagnose")) throw ConfigError("scenario has no 'diagnose' section");
  const Json& section = sc.config.at("diagnose");
  Trajectory data;
  std::string data_label;
  if (section.contains("trajectory_file")) {
    const fs::path path = sc.base_dir / section.at("trajectory_file").get<std::string>();
    data = read_trajectory_csv(path);
    data_label = path.string();
  } else {
    const Index data_length = section.value("data_length", Index(120));
    if (data_length < 1) throw ConfigError("'data_length' must be >= 1");
    Rng rng(derive_seed(seed, 0));
    data = detail::collect_uniform(sys.plant, detail::sample_boxes(section), data_length, rng);
    data_label = detail::msg("generated(length=", data_length, ")");
  }
  const std::vector<Index> L_values = section.value("L_values", std::vector<Index>{24});
  const std::vector<Index> nz_bars = section.value("nz_bar", std::vector<Index>{3, 5});
  const Index cert_L = section.value("certificate_L", L_values.back());
  const double rank_tol = section.value("rank_tol", -1.0);
  fs::create_directories(out_dir);

  Json rank_growth = Json::array();
  for (Index L : L_values) {
    if (data.length() < L)
      throw ConfigError(detail::msg("trajectory of length ", data.length(),
                                    " is shorter than requested L=", L));
    const TrajectoryLibrary lib = library_from_single(data, L, 0, L);
    const RankResult r = numeric_rank(lib.stacked(), rank_tol);
    const ExcitationResult pe = is_persistently_exciting(data.u, L, rank_tol);
    rank_growth.push_back(Json{{"L", L},
                               {"stacked_rank", r.rank},
                               {"stacked_rows", lib.stacked().rows()},
                               {"columns", lib.l},
                               {"threshold", r.threshold},
                               {"input_pe", pe.excited},
                               {"input_pe_rank", pe.rank}});
  }
  Json certificates = Json::array();
  const TrajectoryLibrary cert_lib = library_from_single(data, cert_L, 0, cert_L);
  for (Index nz_bar : nz_bars) {
    const NonexistenceCertificate cert =
        embedding_nonexistence_certificate(cert_lib, nz_bar, rank_tol);
    certificates.push_back(Json{
        {"nz_bar", nz_bar},
        {"L", cert_L},
        {"rank", cert.rank},
        {"bound", cert.bound},
        {"threshold", cert.threshold},
        {"verdict", cert.certified ? detail::msg("nonexistence at order <= ", nz_bar)
                                   : "inconclusive"}});
  }
  detail::write_json(out_dir / "diagnose.json", Json{{"command", "diagnose"},
                                                     {"system", sys.label},
                                                     {"data", data_label},
                                                     {"seed", seed},
                                                     {"rank_growth", rank_growth},
                                                     {"certificates", certificates}});
  detail::write_json(out_dir / "manifest.json",
                     Json{{"command", "diagnose"}, {"system", sys.label}, {"seed", seed},
                          {"config", sc.config},
                          {"outputs", Json::array({"diagnose.json"})}});
}

// Dispatch plus the error contract: 0 on success, 2 for configuration
// problems, 3 for numerical failures, each with a JSON report on stderr.
inline int run_command(const std::string& command, const fs::path& config_path,
                       const fs::path& out_dir, std::uint64_t seed, Index reps,
                       std::ostream& err) {
  try {
    if (reps < 1) throw ConfigError("--reps must be >= 1");
    const Scenario sc = load_scenario(config_path);
    if (command == "collect") cmd_collect(sc, out_dir, seed, reps);
    else if (command == "predict") cmd_predict(sc, out_dir, seed, reps);
    else if (command == "control") cmd_control(sc, out_dir, seed, reps);
    else if (command == "diagnose") cmd_diagnose(sc, out_dir, seed, reps);
    else throw ConfigError(detail::msg("unknown command '", command, "'"));
    return 0;
  } catch (const NumericError& e) {
    err << Json{{"error", {{"type", "numeric"}, {"message", e.what()}}}}.dump() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << Json{{"error", {{"type", "config"}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  }
}

}  // namespace ddk
