#include "tdcoord/linalg.hpp"

#include <Eigen/LU>
#include <Eigen/QR>

namespace tdcoord {

Vector solve_linear(const Matrix& A, const Vector& b) {
  if (A.rows() != A.cols())
    throw SingularMatrixError("solve_linear requires a square matrix");
  if (A.rows() != b.size())
    throw SingularMatrixError("dimension mismatch in solve_linear");
  if (A.rows() == 0) return Vector();

  Eigen::PartialPivLU<Matrix> lu(A);
  const double scale = A.cwiseAbs().maxCoeff();
  const Matrix& LU = lu.matrixLU();
  for (Eigen::Index i = 0; i < LU.rows(); ++i)
    if (std::abs(LU(i, i)) < 1e-12 * std::max(scale, 1e-300))
      throw SingularMatrixError("singular matrix (pivot " +
                                std::to_string(std::abs(LU(i, i))) + ")");

  Vector x = lu.solve(b);
  // One refinement step; keeps the residual contract on marginal systems.
  Vector r = b - A * x;
  x += lu.solve(r);
  return x;
}

Vector solve_least_squares(const Matrix& A, const Vector& b) {
  if (A.rows() == 0 || A.cols() == 0) return Vector::Zero(A.cols());
  return A.completeOrthogonalDecomposition().solve(b);
}

}  // namespace tdcoord
