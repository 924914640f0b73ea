#pragma once

#include <functional>

#include "tdcoord/types.hpp"

namespace tdcoord {

struct NewtonOptions {
  double tol = 1e-8;       // infinity norm of the residual
  int max_iter = 30;
};

struct NewtonResult {
  Vector x;
  int iterations = 0;
  double residual_norm = 0.0;
};

/// Undamped Newton-Raphson on residual(x) = 0. Throws SingularMatrixError
/// if a Jacobian factorization fails and DivergenceError when max_iter is
/// exhausted or the iterate blows up.
NewtonResult solve_newton(const std::function<Vector(const Vector&)>& residual,
                          const std::function<Matrix(const Vector&)>& jacobian,
                          const Vector& x0, const NewtonOptions& opt = {});

/// Central-difference Jacobian, step 1e-6. The derivative oracle used by
/// tests and by the fixed-point diagnostics.
Matrix finite_difference_jacobian(
    const std::function<Vector(const Vector&)>& f, const Vector& x,
    double step = 1e-6);

}  // namespace tdcoord
