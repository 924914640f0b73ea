#pragma once

#include <vector>

#include "tdcoord/types.hpp"

namespace tdcoord {

/// min ½ zᵀHz + cᵀz  s.t.  A_eq z = b_eq,  A_in z ≥ b_in.
/// H must be symmetric positive semidefinite (convex instances only).
struct QpProblem {
  Matrix H;
  Vector c;
  Matrix A_eq;
  Vector b_eq;
  Matrix A_in;
  Vector b_in;

  int num_vars() const { return static_cast<int>(c.size()); }
  int num_eq() const { return static_cast<int>(b_eq.size()); }
  int num_in() const { return static_cast<int>(b_in.size()); }
  double objective(const Vector& z) const {
    return 0.5 * z.dot(H * z) + c.dot(z);
  }
  void check_dimensions() const;
};

struct KktPoint {
  Vector z;
  Vector lambda;                // equality multipliers
  Vector omega;                 // inequality multipliers, >= 0
  std::vector<int> active_set;  // indices of tight inequalities, ascending
};

/// Primal active-set method. Deterministic tie-breaking: among equally
/// violated constraints the lowest index enters; the most negative
/// multiplier leaves. Throws InfeasibleError / UnboundedError, and Error
/// when the cycle guard trips.
KktPoint solve_qp(const QpProblem& p);

/// Max over stationarity, equality residual, inequality violation,
/// multiplier negativity and complementarity.
double kkt_residual(const QpProblem& p, const KktPoint& pt);

struct KktSensitivity {
  Vector dz;
  Vector dlambda;
  Vector domega_active;  // same order as pt.active_set
};

/// Directional derivative of the primal/dual solution under perturbations
/// (db_eq, db_in, dc) of the right-hand sides and linear cost, with the
/// active set held fixed. Requires strict complementarity at pt.
KktSensitivity kkt_sensitivity(const QpProblem& p, const KktPoint& pt,
                               const Vector& db_eq, const Vector& db_in,
                               const Vector& dc);

}  // namespace tdcoord
