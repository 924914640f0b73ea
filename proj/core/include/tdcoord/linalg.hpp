#pragma once

#include "tdcoord/types.hpp"

namespace tdcoord {

/// Dense solve with LU partial-pivoting semantics plus one step of iterative
/// refinement. Throws SingularMatrixError when a pivot falls below
/// 1e-12 * max|A|.
Vector solve_linear(const Matrix& A, const Vector& b);

/// Minimum-norm least-squares solution (rank-revealing). Used where
/// rectangular or rank-deficient systems are legitimate.
Vector solve_least_squares(const Matrix& A, const Vector& b);

}  // namespace tdcoord
