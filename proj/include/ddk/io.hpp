#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ddk/core.hpp"
#include "ddk/systems.hpp"
#include "ddk/trajectory.hpp"

namespace ddk {

using Json = nlohmann::json;

// Shortest decimal text that round-trips the exact double; keeps CSV output
// byte-stable across runs without fixing a precision.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw ConfigError(detail::msg("not a number: '", std::string(text), "'"));
  return v;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError(msg("cannot write ", path.string()));
  return f;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(msg("cannot read ", path.string()));
  return f;
}

// Expects `prefix`1..`prefix`k at positions [at, at+k); returns k.
inline Index count_channel(const std::vector<std::string>& header, std::size_t& at,
                           const std::string& prefix) {
  Index k = 0;
  while (at < header.size() && header[at] == prefix + std::to_string(k + 1)) {
    ++k;
    ++at;
  }
  return k;
}

}  // namespace detail

// Trajectory CSV: header t,u1..um,y1..yp[,x1..xn], one row per step.
inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  check_trajectory(traj);
  std::ofstream f = detail::open_out(path);
  f << 't';
  for (Index i = 0; i < traj.input_dim(); ++i) f << ",u" << i + 1;
  for (Index i = 0; i < traj.output_dim(); ++i) f << ",y" << i + 1;
  if (traj.has_states())
    for (Index i = 0; i < traj.x.rows(); ++i) f << ",x" << i + 1;
  f << '\n';
  for (Index k = 0; k < traj.length(); ++k) {
    f << k;
    for (Index i = 0; i < traj.input_dim(); ++i) f << ',' << format_double(traj.u(i, k));
    for (Index i = 0; i < traj.output_dim(); ++i) f << ',' << format_double(traj.y(i, k));
    if (traj.has_states())
      for (Index i = 0; i < traj.x.rows(); ++i) f << ',' << format_double(traj.x(i, k));
    f << '\n';
  }
}

inline Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream f = detail::open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw ConfigError(detail::msg(path.string(), " is empty"));
  const std::vector<std::string> header = detail::split_csv_line(line);
  std::size_t at = 0;
  if (header.empty() || header[at] != "t")
    throw ConfigError(detail::msg(path.string(), ": header must start with 't'"));
  ++at;
  const Index m = detail::count_channel(header, at, "u");
  const Index p = detail::count_channel(header, at, "y");
  const Index n = detail::count_channel(header, at, "x");
  if (m < 1 || p < 1 || at != header.size())
    throw ConfigError(detail::msg(path.string(),
                                  ": header must be t,u1..um,y1..yp[,x1..xn], got '", line, "'"));
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (static_cast<std::size_t>(1 + m + p + n) != cells.size())
      throw ConfigError(detail::msg(path.string(), " row ", rows.size() + 1, " has ",
                                    cells.size(), " cells, expected ", 1 + m + p + n));
    std::vector<double> row;
    row.reserve(cells.size() - 1);
    for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(parse_double(cells[i]));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(detail::msg(path.string(), " contains no data rows"));
  const Index T = static_cast<Index>(rows.size());
  Trajectory traj;
  traj.u.resize(m, T);
  traj.y.resize(p, T);
  if (n > 0) traj.x.resize(n, T);
  for (Index k = 0; k < T; ++k) {
    const std::vector<double>& row = rows[static_cast<std::size_t>(k)];
    for (Index i = 0; i < m; ++i) traj.u(i, k) = row[static_cast<std::size_t>(i)];
    for (Index i = 0; i < p; ++i) traj.y(i, k) = row[static_cast<std::size_t>(m + i)];
    for (Index i = 0; i < n; ++i) traj.x(i, k) = row[static_cast<std::size_t>(m + p + i)];
  }
  return traj;
}

// Plain numeric CSV (no header) for library blocks and report matrices.
inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& M) {
  std::ofstream f = detail::open_out(path);
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) {
      if (j) f << ',';
      f << format_double(M(i, j));
    }
    f << '\n';
  }
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream f = detail::open_in(path);
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    std::vector<double> row;
    row.reserve(cells.size());
    for (const std::string& c : cells) row.push_back(parse_double(c));
    if (!rows.empty() && rows.front().size() != row.size())
      throw ConfigError(detail::msg(path.string(), ": ragged rows"));
    rows.push_back(std::move(row));
  }
  Matrix M(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (Index i = 0; i < M.rows(); ++i)
    for (Index j = 0; j < M.cols(); ++j)
      M(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return M;
}

// Libraries persist as two CSV blocks plus a JSON sidecar with the partition.
inline void save_library(const TrajectoryLibrary& lib, const std::filesystem::path& stem) {
  write_matrix_csv(stem.string() + "_Ud.csv", lib.U_d);
  write_matrix_csv(stem.string() + "_Yd.csv", lib.Y_d);
  Json meta{{"m", lib.m},         {"p", lib.p}, {"L", lib.L},
            {"T_ini", lib.T_ini}, {"N", lib.N}, {"l", lib.l},
            {"single_hankel", lib.single_hankel}};
  detail::open_out(stem.string() + ".json") << meta.dump(2) << '\n';
}

inline TrajectoryLibrary load_library(const std::filesystem::path& stem) {
  Json meta;
  try {
    detail::open_in(stem.string() + ".json") >> meta;
  } catch (const Json::exception& e) {
    throw ConfigError(detail::msg(stem.string(), ".json: ", e.what()));
  }
  TrajectoryLibrary lib;
  lib.m = meta.at("m").get<Index>();
  lib.p = meta.at("p").get<Index>();
  lib.L = meta.at("L").get<Index>();
  lib.T_ini = meta.at("T_ini").get<Index>();
  lib.N = meta.at("N").get<Index>();
  lib.l = meta.at("l").get<Index>();
  lib.single_hankel = meta.value("single_hankel", false);
  lib.U_d = read_matrix_csv(stem.string() + "_Ud.csv");
  lib.Y_d = read_matrix_csv(stem.string() + "_Yd.csv");
  if (lib.U_d.rows() != lib.m * lib.L || lib.Y_d.rows() != lib.p * lib.L ||
      lib.U_d.cols() != lib.l || lib.Y_d.cols() != lib.l || lib.T_ini + lib.N != lib.L)
    throw ConfigError(detail::msg(stem.string(), ": sidecar does not match the CSV blocks"));
  return lib;
}

inline Json matrix_to_json(const Matrix& M) {
  Json rows = Json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("matrix JSON must be a nonempty array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(j.at(0).size());
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Json& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Index>(row.size()) != cols) throw ConfigError("matrix JSON has ragged rows");
    for (Index jc = 0; jc < cols; ++jc) M(i, jc) = row.at(static_cast<std::size_t>(jc)).get<double>();
  }
  return M;
}

// Model files hold named dense matrices row-major; affine models add offsets.
inline void save_model(const StateSpaceModel& mdl, const std::filesystem::path& path) {
  check_model(mdl);
  Json j{{"type", "lti"},
         {"A", matrix_to_json(mdl.A)},
         {"B", matrix_to_json(mdl.B)},
         {"C", matrix_to_json(mdl.C)},
         {"D", matrix_to_json(mdl.D)}};
  detail::open_out(path) << j.dump(2) << '\n';
}

inline void save_model(const AffineModel& mdl, const std::filesystem::path& path) {
  check_model(mdl);
  Json j{{"type", "affine"},
         {"A", matrix_to_json(mdl.A)},
         {"B", matrix_to_json(mdl.B)},
         {"C", matrix_to_json(mdl.C)},
         {"D", matrix_to_json(mdl.D)},
         {"e", std::vector<double>(mdl.e.begin(), mdl.e.end())},
         {"r", std::vector<double>(mdl.r.begin(), mdl.r.end())}};
  detail::open_out(path) << j.dump(2) << '\n';
}

inline std::variant<StateSpaceModel, AffineModel> load_model(const std::filesystem::path& path) {
  Json j;
  try {
    detail::open_in(path) >> j;
  } catch (const Json::exception& e) {
    throw ConfigError(detail::msg(path.string(), ": ", e.what()));
  }
  const std::string type = j.value("type", "lti");
  StateSpaceModel mdl;
  try {
    mdl.A = matrix_from_json(j.at("A"));
    mdl.B = matrix_from_json(j.at("B"));
    mdl.C = matrix_from_json(j.at("C"));
    mdl.D = matrix_from_json(j.at("D"));
    if (type == "affine") {
      AffineModel aff;
      aff.A = mdl.A;
      aff.B = mdl.B;
      aff.C = mdl.C;
      aff.D = mdl.D;
      const auto e = j.at("e").get<std::vector<double>>();
      const auto r = j.at("r").get<std::vector<double>>();
      aff.e = Eigen::Map<const Vector>(e.data(), static_cast<Index>(e.size()));
      aff.r = Eigen::Map<const Vector>(r.data(), static_cast<Index>(r.size()));
      check_model(aff);
      return aff;
    }
  } catch (const Json::exception& e) {
    throw ConfigError(detail::msg(path.string(), ": ", e.what()));
  }
  if (type != "lti")
    throw ConfigError(detail::msg(path.string(), ": unknown model type '", type, "'"));
  check_model(mdl);
  return mdl;
}

}  // namespace ddk
