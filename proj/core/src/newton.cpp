#include "tdcoord/newton.hpp"

#include <cmath>

#include "tdcoord/linalg.hpp"

namespace tdcoord {

NewtonResult solve_newton(const std::function<Vector(const Vector&)>& residual,
                          const std::function<Matrix(const Vector&)>& jacobian,
                          const Vector& x0, const NewtonOptions& opt) {
  NewtonResult res;
  res.x = x0;
  for (int k = 0; k <= opt.max_iter; ++k) {
    Vector f = residual(res.x);
    res.residual_norm = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    res.iterations = k;
    if (!std::isfinite(res.residual_norm))
      throw DivergenceError("Newton iterate diverged (non-finite residual)");
    if (res.residual_norm <= opt.tol) return res;
    if (k == opt.max_iter) break;
    Matrix J = jacobian(res.x);
    Vector dx = solve_linear(J, -f);
    res.x += dx;
  }
  throw DivergenceError("Newton did not converge in " +
                        std::to_string(opt.max_iter) + " iterations (|f|=" +
                        std::to_string(res.residual_norm) + ")");
}

Matrix finite_difference_jacobian(
    const std::function<Vector(const Vector&)>& f, const Vector& x,
    double step) {
  Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vector xp = x, xm = x;
    xp(j) += step;
    xm(j) -= step;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * step);
  }
  return J;
}

}  // namespace tdcoord
