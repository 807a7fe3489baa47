#include <catch2/catch_amalgamated.hpp>

#include "ddk/qp.hpp"

using namespace ddk;

namespace {

double objective(const Matrix& P, const Vector& q, const Vector& z) {
  return 0.5 * z.dot(P * z) + q.dot(z);
}

// Reference solver: enumerate every face of the box (each bound row free, at
// its lower, or at its upper limit), solve the equality-constrained problem
// on that face, and keep the best feasible stationary point. Exponential in
// the number of bound rows, hence only usable as a test oracle.
struct BruteResult {
  double objective = std::numeric_limits<double>::infinity();
  Vector z;
  bool found = false;
};

BruteResult brute_force(const Matrix& P, const Vector& q, const Matrix& A_eq,
                        const Vector& b_eq, const QpBox& box) {
  const Index n = P.rows();
  const Index nb = box.rows();
  BruteResult best;
  std::vector<int> face(static_cast<std::size_t>(nb), 0);  // 0 free, 1 lower, 2 upper
  const Index total = static_cast<Index>(std::pow(3.0, static_cast<double>(nb)) + 0.5);
  for (Index code = 0; code < total; ++code) {
    Index c = code;
    for (Index i = 0; i < nb; ++i) {
      face[static_cast<std::size_t>(i)] = static_cast<int>(c % 3);
      c /= 3;
    }
    // Stationarity on the face: grad + A_eq' mu + G_active' nu = 0 together
    // with the equalities and the pinned bound rows, as one linear system in
    // (z, mu, nu).
    Index pinned = 0;
    for (Index i = 0; i < nb; ++i) pinned += face[static_cast<std::size_t>(i)] != 0;
    const Index me = A_eq.rows();
    const Index dim = n + me + pinned;
    Matrix K = Matrix::Zero(dim, dim);
    Vector rhs = Vector::Zero(dim);
    K.topLeftCorner(n, n) = P;
    rhs.head(n) = -q;
    if (me > 0) {
      K.block(0, n, n, me) = A_eq.transpose();
      K.block(n, 0, me, n) = A_eq;
      rhs.segment(n, me) = b_eq;
    }
    Index at = 0;
    for (Index i = 0; i < nb; ++i) {
      if (face[static_cast<std::size_t>(i)] == 0) continue;
      K.block(0, n + me + at, n, 1) = box.G.row(i).transpose();
      K.block(n + me + at, 0, 1, n) = box.G.row(i);
      rhs(n + me + at) = face[static_cast<std::size_t>(i)] == 1 ? box.lo(i) : box.hi(i);
      ++at;
    }
    const Vector sol = lstsq_min_norm(K, Matrix(rhs)).col(0);
    if ((K * sol - rhs).norm() > 1e-8 * (1.0 + rhs.norm())) continue;  // face inconsistent
    const Vector z = sol.head(n);
    const Vector img = box.G * z;
    bool feasible = true;
    for (Index i = 0; i < nb; ++i)
      feasible = feasible && img(i) >= box.lo(i) - 1e-9 && img(i) <= box.hi(i) + 1e-9;
    if (me > 0 && (A_eq * z - b_eq).norm() > 1e-8 * (1.0 + b_eq.norm())) feasible = false;
    if (!feasible) continue;
    const double f = objective(P, q, z);
    if (f < best.objective) {
      best.objective = f;
      best.z = z;
      best.found = true;
    }
  }
  return best;
}

QpBox all_var_box(Index n, const Vector& lo, const Vector& hi) {
  return QpBox{Matrix::Identity(n, n), lo, hi};
}

}  // namespace

TEST_CASE("separable objective clips to the nearest box corner", "[qp]") {
  Matrix P = 2.0 * Matrix::Identity(2, 2);
  Vector q(2);
  q << -2.0, 4.0;  // minimizes (z1-1)^2 + (z2+2)^2 up to a constant
  const QpSolution sol = solve_eq_box_qp(P, q, Matrix(0, 2), Vector(0),
                                         all_var_box(2, Vector::Zero(2), Vector::Ones(2)));
  REQUIRE(sol.status == QpStatus::optimal);
  CHECK(std::abs(sol.z(0) - 1.0) <= 1e-9);
  CHECK(std::abs(sol.z(1) - 0.0) <= 1e-9);
  CHECK(sol.kkt_residual <= 1e-6);
}

TEST_CASE("minimum norm under a sum constraint spreads evenly", "[qp]") {
  const Index n = 3;
  Matrix A(1, n);
  A.setOnes();
  Vector b(1);
  b << 1.0;
  const QpSolution sol = solve_eq_box_qp(Matrix::Identity(n, n), Vector::Zero(n), A, b,
                                         QpBox{Matrix(0, n), Vector(0), Vector(0)});
  REQUIRE(sol.status == QpStatus::optimal);
  CHECK((sol.z.array() - 1.0 / 3.0).abs().maxCoeff() <= 1e-9);
}

TEST_CASE("bounds reshape the constrained minimum", "[qp]") {
  // min ||z||^2 s.t. z1 + z2 = 4 and z1 <= 1 pins z = (1, 3).
  Matrix A(1, 2);
  A << 1.0, 1.0;
  Vector b(1);
  b << 4.0;
  Matrix G(1, 2);
  G << 1.0, 0.0;
  Vector lo(1), hi(1);
  lo << -1e6;
  hi << 1.0;
  const QpSolution sol =
      solve_eq_box_qp(2.0 * Matrix::Identity(2, 2), Vector::Zero(2), A, b, QpBox{G, lo, hi});
  REQUIRE(sol.status == QpStatus::optimal);
  CHECK(std::abs(sol.z(0) - 1.0) <= 1e-8);
  CHECK(std::abs(sol.z(1) - 3.0) <= 1e-8);
}

TEST_CASE("contradictory equalities are reported infeasible", "[qp]") {
  Matrix A(2, 2);
  A << 1.0, 0.0, 1.0, 0.0;
  Vector b(2);
  b << 0.0, 1.0;  // z1 = 0 and z1 = 1
  const QpSolution sol = solve_eq_box_qp(Matrix::Identity(2, 2), Vector::Zero(2), A, b,
                                         QpBox{Matrix(0, 2), Vector(0), Vector(0)});
  CHECK(sol.status == QpStatus::infeasible);
  CHECK(!sol.message.empty());
}

TEST_CASE("equalities outside the box are reported infeasible", "[qp]") {
  Matrix A(1, 2);
  A << 1.0, 0.0;
  Vector b(1);
  b << 5.0;  // z1 = 5 against z1 in [0, 1]
  const QpSolution sol =
      solve_eq_box_qp(Matrix::Identity(2, 2), Vector::Zero(2), A, b,
                      all_var_box(2, Vector::Zero(2), Vector::Ones(2)));
  CHECK(sol.status == QpStatus::infeasible);
}

TEST_CASE("singular curvature still yields a stationary point", "[qp]") {
  Matrix P = Matrix::Zero(2, 2);
  P(0, 0) = 1.0;  // flat in z2
  Vector q(2);
  q << -1.0, 0.0;
  const QpSolution sol = solve_eq_box_qp(P, q, Matrix(0, 2), Vector(0),
                                         QpBox{Matrix(0, 2), Vector(0), Vector(0)});
  REQUIRE(sol.status == QpStatus::optimal);
  CHECK(std::abs(sol.z(0) - 1.0) <= 1e-9);
  CHECK(sol.kkt_residual <= 1e-6);
}

TEST_CASE("dimension mismatches are configuration errors", "[qp]") {
  CHECK_THROWS_AS(solve_eq_box_qp(Matrix::Identity(2, 3), Vector::Zero(2), Matrix(0, 2),
                                  Vector(0), QpBox{Matrix(0, 2), Vector(0), Vector(0)}),
                  ConfigError);
  Vector lo(1), hi(1);
  lo << 2.0;
  hi << 1.0;  // empty interval
  CHECK_THROWS_AS(solve_eq_box_qp(Matrix::Identity(2, 2), Vector::Zero(2), Matrix(0, 2),
                                  Vector(0), QpBox{Matrix::Identity(2, 2).topRows(1), lo, hi}),
                  ConfigError);
}

TEST_CASE("the certifier rejects points the solver did not produce", "[qp]") {
  Matrix P = 2.0 * Matrix::Identity(2, 2);
  Vector q(2);
  q << -2.0, 4.0;
  const QpBox box = all_var_box(2, Vector::Zero(2), Vector::Ones(2));
  Vector wrong(2);
  wrong << 0.5, 1.0;  // interior in z1 with nonzero gradient
  CHECK(verify_kkt(P, q, Matrix(0, 2), Vector(0), box, wrong).overall() > 1e-3);
}

TEST_CASE("random boxed programs match exhaustive face enumeration", "[qp]") {
  Rng rng(61);
  int solved = 0;
  for (int rep = 0; rep < 60; ++rep) {
    const Index n = 2 + static_cast<Index>(rng() % 5);  // up to 6 variables
    // LS-type curvature; every second instance is rank-deficient but stays
    // bounded below because the box is compact.
    const Index rows = (rep % 2 == 0) ? n + 1 : std::max<Index>(1, n - 1);
    const Matrix M = uniform_matrix(rng, rows, n, -1.0, 1.0);
    Matrix P = M.transpose() * M;
    P = 0.5 * (P + P.transpose()).eval();
    const Vector q = uniform_vector(rng, n, -1.0, 1.0);
    Vector lo = uniform_vector(rng, n, -1.5, -0.25);
    Vector hi = uniform_vector(rng, n, 0.25, 1.5);
    const QpBox box = all_var_box(n, lo, hi);

    Matrix A_eq(0, n);
    Vector b_eq(0);
    if (rep % 3 == 0) {  // one equality through an interior point
      A_eq = uniform_matrix(rng, 1, n, -1.0, 1.0);
      const Vector interior =
          0.5 * (lo + hi) + 0.2 * uniform_vector(rng, n, -1.0, 1.0).cwiseProduct(hi - lo);
      b_eq = A_eq * interior;
    }

    const QpSolution sol = solve_eq_box_qp(P, q, A_eq, b_eq, box);
    REQUIRE(sol.status == QpStatus::optimal);
    CHECK(sol.kkt_residual <= 1e-6);
    // Bounds hold as stated, not after clamping.
    for (Index i = 0; i < n; ++i) {
      CHECK(sol.z(i) >= lo(i) - 1e-12);
      CHECK(sol.z(i) <= hi(i) + 1e-12);
    }
    const BruteResult ref = brute_force(P, q, A_eq, b_eq, box);
    REQUIRE(ref.found);
    CHECK(sol.objective <= ref.objective + 1e-6 * (1.0 + std::abs(ref.objective)));
    CHECK(std::abs(sol.objective - ref.objective) <= 1e-6 * (1.0 + std::abs(ref.objective)));
    ++solved;
  }
  CHECK(solved == 60);
}
