#pragma once

#include "ddk/core.hpp"
#include "ddk/lifting.hpp"
#include "ddk/systems.hpp"

namespace ddk {

// The built-in test plant
//   x1+ = 0.99 x1
//   x2+ = 0.9 x2 + x1^2 + x1^3 + x1^4 + u,   y = x,
// together with its exact lifted-linear form over z = col(x1, x2, x1^2, x1^3,
// x1^4). The embedding is not controllable but has observability index 4,
// which is what makes the depth-4 initial window sufficient for data-driven
// prediction.
struct BenchmarkSystem {
  NonlinearSystem plant;
  StateSpaceModel embedding;
  LiftingDictionary dictionary;
};

inline BenchmarkSystem benchmark_system() {
  BenchmarkSystem b;
  b.plant.n = 2;
  b.plant.m = 1;
  b.plant.p = 2;
  b.plant.f = [](const Vector& x, const Vector& u) {
    Vector xn(2);
    const double x1 = x(0);
    xn(0) = 0.99 * x1;
    xn(1) = 0.9 * x(1) + x1 * x1 + x1 * x1 * x1 + x1 * x1 * x1 * x1 + u(0);
    return xn;
  };
  b.plant.g = [](const Vector& x, const Vector&) { return x; };

  // Monomials close under the dynamics: (x1^k)+ = 0.99^k x1^k.
  b.embedding.A = Matrix::Zero(5, 5);
  b.embedding.A(0, 0) = 0.99;
  b.embedding.A(1, 1) = 0.9;
  b.embedding.A(1, 2) = 1.0;
  b.embedding.A(1, 3) = 1.0;
  b.embedding.A(1, 4) = 1.0;
  b.embedding.A(2, 2) = 0.99 * 0.99;
  b.embedding.A(3, 3) = 0.99 * 0.99 * 0.99;
  b.embedding.A(4, 4) = 0.99 * 0.99 * 0.99 * 0.99;
  b.embedding.B = Matrix::Zero(5, 1);
  b.embedding.B(1, 0) = 1.0;
  b.embedding.C = Matrix::Zero(2, 5);
  b.embedding.C(0, 0) = 1.0;
  b.embedding.C(1, 1) = 1.0;
  b.embedding.D = Matrix::Zero(2, 1);

  b.dictionary.state_dim = 2;
  b.dictionary.include_state = true;
  b.dictionary.observables = {
      [](const Vector& x) { return x(0); },
      [](const Vector& x) { return x(1); },
      [](const Vector& x) { return x(0) * x(0); },
      [](const Vector& x) { return x(0) * x(0) * x(0); },
      [](const Vector& x) { return x(0) * x(0) * x(0) * x(0); },
  };
  return b;
}

}  // namespace ddk
