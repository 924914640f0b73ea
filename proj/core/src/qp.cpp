#include "tdcoord/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>

#include "tdcoord/linalg.hpp"

namespace tdcoord {

namespace {

constexpr double kFeasTol = 1e-9;
constexpr double kRankTol = 1e-10;
constexpr double kCurvatureTol = 1e-9;
constexpr double kStepTol = 1e-11;

struct WorkingSet {
  const QpProblem* p;
  std::vector<int> eq_rows;      // independent equality rows
  std::vector<int> active;       // inequality indices in the working set

  Matrix rows() const {
    const int n = p->num_vars();
    Matrix A(eq_rows.size() + active.size(), n);
    int r = 0;
    for (int i : eq_rows) A.row(r++) = p->A_eq.row(i);
    for (int i : active) A.row(r++) = p->A_in.row(i);
    return A;
  }
};

Matrix null_space(const Matrix& A, int n) {
  if (A.rows() == 0) return Matrix::Identity(n, n);
  Eigen::FullPivLU<Matrix> lu(A);
  lu.setThreshold(kRankTol);
  return lu.kernel();
}

// Minimizer step on the current working face. Returns the step p (may be a
// pure descent ray for semidefinite instances) and whether it points at a
// face minimizer (Newton step, full length 1) or is a ray.
struct FaceStep {
  Vector p;
  bool to_minimizer = true;
  bool flat_optimal = false;  // no descent available on this face
};

FaceStep face_step(const QpProblem& p, const WorkingSet& ws, const Vector& z) {
  FaceStep out;
  const int n = p.num_vars();
  Matrix Z = null_space(ws.rows(), n);
  if (Z.cols() == 0) {
    out.p = Vector::Zero(n);
    out.flat_optimal = true;
    return out;
  }
  Vector g = p.H * z + p.c;
  Vector gr = Z.transpose() * g;
  Matrix Hr = Z.transpose() * p.H * Z;

  Eigen::SelfAdjointEigenSolver<Matrix> es(Hr);
  const Vector& evals = es.eigenvalues();
  const Matrix& evecs = es.eigenvectors();
  double emax = std::max(evals.cwiseAbs().maxCoeff(), 1.0);

  // Flat directions with a usable gradient give an LP-style ray; otherwise
  // accumulate the Newton component on the positive-curvature subspace.
  Vector q = Vector::Zero(Z.cols());
  for (Eigen::Index i = 0; i < evals.size(); ++i) {
    double lam = evals(i);
    double overlap = evecs.col(i).dot(gr);
    if (lam > kCurvatureTol * emax) {
      q -= evecs.col(i) * (overlap / lam);
    } else if (std::abs(overlap) > 1e-10 * std::max(1.0, gr.cwiseAbs().maxCoeff())) {
      out.p = -Z * evecs.col(i) * (overlap > 0 ? 1.0 : -1.0);
      out.to_minimizer = false;
      return out;
    }
  }
  out.p = Z * q;
  if (out.p.cwiseAbs().maxCoeff() <= kStepTol * std::max(1.0, z.cwiseAbs().maxCoeff()))
    out.flat_optimal = true;
  return out;
}

// Multipliers of the working set at a face-optimal point.
// Solves A_wᵀ·nu = g in the least-squares sense.
Vector working_multipliers(const QpProblem& p, const WorkingSet& ws,
                           const Vector& z) {
  Vector g = p.H * z + p.c;
  Matrix A = ws.rows();
  if (A.rows() == 0) return Vector();
  return solve_least_squares(A.transpose(), g);
}

struct RatioResult {
  double t = std::numeric_limits<double>::infinity();
  int blocking = -1;
};

RatioResult ratio_test(const QpProblem& p, const WorkingSet& ws,
                       const Vector& z, const Vector& dir) {
  RatioResult out;
  std::vector<bool> in_ws(p.num_in(), false);
  for (int i : ws.active) in_ws[i] = true;
  for (int i = 0; i < p.num_in(); ++i) {
    if (in_ws[i]) continue;
    double ad = p.A_in.row(i).dot(dir);
    if (ad >= -1e-12) continue;  // not moving toward this bound
    double slack = p.A_in.row(i).dot(z) - p.b_in(i);
    double t = std::max(slack, 0.0) / (-ad);
    if (t < out.t - 1e-14) {
      out.t = t;
      out.blocking = i;
    }
    // equal ratios: keep the lowest index, which the iteration order does
  }
  return out;
}

KktPoint run_active_set(const QpProblem& p, const Vector& z0,
                        const std::vector<int>& eq_rows) {
  const int n = p.num_vars();
  WorkingSet ws{&p, eq_rows, {}};
  Vector z = z0;

  // Start from the tight inequalities, added lowest-index first while they
  // stay independent.
  {
    Matrix base = ws.rows();
    Eigen::FullPivLU<Matrix> lu(base);
    lu.setThreshold(kRankTol);
    int rank = base.rows() ? static_cast<int>(lu.rank()) : 0;
    for (int i = 0; i < p.num_in(); ++i) {
      double slack = p.A_in.row(i).dot(z) - p.b_in(i);
      if (slack > kFeasTol) continue;
      ws.active.push_back(i);
      Matrix trial = ws.rows();
      Eigen::FullPivLU<Matrix> lu2(trial);
      lu2.setThreshold(kRankTol);
      if (static_cast<int>(lu2.rank()) > rank)
        rank = static_cast<int>(lu2.rank());
      else
        ws.active.pop_back();
    }
  }

  const int guard = 200 + 20 * (n + p.num_in() + p.num_eq());
  for (int iter = 0; iter < guard; ++iter) {
    FaceStep st = face_step(p, ws, z);

    if (st.flat_optimal) {
      Vector nu = working_multipliers(p, ws, z);
      // Multipliers of the inequality part live after the equality rows.
      int off = static_cast<int>(ws.eq_rows.size());
      int worst = -1;
      double most_negative = -1e-9;
      for (size_t k = 0; k < ws.active.size(); ++k) {
        double w = nu(off + static_cast<int>(k));
        if (w < most_negative) {
          most_negative = w;
          worst = static_cast<int>(k);
        }
      }
      if (worst < 0) {
        KktPoint pt;
        pt.z = z;
        pt.lambda = Vector::Zero(p.num_eq());
        for (size_t k = 0; k < ws.eq_rows.size(); ++k)
          pt.lambda(ws.eq_rows[k]) = nu(static_cast<int>(k));
        pt.omega = Vector::Zero(p.num_in());
        for (size_t k = 0; k < ws.active.size(); ++k)
          pt.omega(ws.active[k]) = std::max(0.0, nu(off + static_cast<int>(k)));
        pt.active_set = ws.active;
        std::sort(pt.active_set.begin(), pt.active_set.end());
        return pt;
      }
      ws.active.erase(ws.active.begin() + worst);
      continue;
    }

    RatioResult rr = ratio_test(p, ws, z, st.p);
    if (!st.to_minimizer && rr.blocking < 0)
      throw UnboundedError("objective unbounded along a feasible ray");

    double t = st.to_minimizer ? std::min(1.0, rr.t) : rr.t;
    z += t * st.p;
    if (rr.blocking >= 0 && t >= rr.t - 1e-14) ws.active.push_back(rr.blocking);
  }
  throw Error("active-set cycle guard tripped");
}

std::vector<int> independent_equalities(const QpProblem& p) {
  std::vector<int> rows;
  if (p.num_eq() == 0) return rows;
  Matrix acc(0, p.num_vars());
  int rank = 0;
  for (int i = 0; i < p.num_eq(); ++i) {
    Matrix trial(acc.rows() + 1, p.num_vars());
    trial << acc, p.A_eq.row(i);
    Eigen::FullPivLU<Matrix> lu(trial);
    lu.setThreshold(kRankTol);
    if (static_cast<int>(lu.rank()) > rank) {
      ++rank;
      acc = trial;
      rows.push_back(i);
    }
  }
  return rows;
}

}  // namespace

void QpProblem::check_dimensions() const {
  const int n = num_vars();
  if (H.rows() != n || H.cols() != n)
    throw Error("QpProblem: H dimension mismatch");
  if ((A_eq.rows() != num_eq()) || (num_eq() > 0 && A_eq.cols() != n))
    throw Error("QpProblem: equality dimension mismatch");
  if ((A_in.rows() != num_in()) || (num_in() > 0 && A_in.cols() != n))
    throw Error("QpProblem: inequality dimension mismatch");
  if (n > 0 && (H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw Error("QpProblem: H is not symmetric");
}

KktPoint solve_qp(const QpProblem& p) {
  p.check_dimensions();
  const int n = p.num_vars();

  std::vector<int> eq_rows = independent_equalities(p);

  // Feasibility of the equality system, via the min-norm solution.
  Vector z0 = Vector::Zero(n);
  if (p.num_eq() > 0) {
    z0 = solve_least_squares(p.A_eq, p.b_eq);
    double viol = (p.A_eq * z0 - p.b_eq).cwiseAbs().maxCoeff();
    double scale = std::max(1.0, p.b_eq.cwiseAbs().maxCoeff());
    if (viol > 1e-8 * scale)
      throw InfeasibleError("inconsistent equality constraints (residual " +
                            std::to_string(viol) + ")");
  }

  bool feasible = true;
  if (p.num_in() > 0) {
    double worst = (p.A_in * z0 - p.b_in).minCoeff();
    feasible = worst >= -kFeasTol;
  }

  if (!feasible) {
    // Phase 1: minimize ½‖s‖² over A_in z + s ≥ b_in, s ≥ 0.
    const int m = p.num_in();
    QpProblem ph;
    ph.H = Matrix::Zero(n + m, n + m);
    ph.H.bottomRightCorner(m, m) = Matrix::Identity(m, m);
    ph.c = Vector::Zero(n + m);
    ph.A_eq = Matrix::Zero(p.num_eq(), n + m);
    if (p.num_eq() > 0) ph.A_eq.leftCols(n) = p.A_eq;
    ph.b_eq = p.b_eq;
    ph.A_in = Matrix::Zero(2 * m, n + m);
    ph.A_in.topLeftCorner(m, n) = p.A_in;
    ph.A_in.topRightCorner(m, m) = Matrix::Identity(m, m);
    ph.A_in.bottomRightCorner(m, m) = Matrix::Identity(m, m);
    ph.b_in = Vector::Zero(2 * m);
    ph.b_in.head(m) = p.b_in;

    Vector start = Vector::Zero(n + m);
    start.head(n) = z0;
    for (int i = 0; i < m; ++i)
      start(n + i) =
          std::max(0.0, p.b_in(i) - p.A_in.row(i).dot(z0)) + 1.0;

    std::vector<int> ph_eq_rows = eq_rows;  // same equality geometry
    KktPoint ph_pt = run_active_set(ph, start, ph_eq_rows);
    double smax = m > 0 ? ph_pt.z.tail(m).maxCoeff() : 0.0;
    double scale = std::max(1.0, p.b_in.size() ? p.b_in.cwiseAbs().maxCoeff() : 1.0);
    if (smax > 1e-7 * scale)
      throw InfeasibleError("no feasible point (phase-1 slack " +
                            std::to_string(smax) + ")");
    z0 = ph_pt.z.head(n);
  }

  return run_active_set(p, z0, eq_rows);
}

double kkt_residual(const QpProblem& p, const KktPoint& pt) {
  double res = 0.0;
  Vector stat = p.H * pt.z + p.c;
  if (p.num_eq() > 0) stat -= p.A_eq.transpose() * pt.lambda;
  if (p.num_in() > 0) stat -= p.A_in.transpose() * pt.omega;
  if (stat.size() > 0) res = std::max(res, stat.cwiseAbs().maxCoeff());
  if (p.num_eq() > 0)
    res = std::max(res, (p.A_eq * pt.z - p.b_eq).cwiseAbs().maxCoeff());
  if (p.num_in() > 0) {
    Vector slack = p.A_in * pt.z - p.b_in;
    res = std::max(res, std::max(0.0, -slack.minCoeff()));
    res = std::max(res, std::max(0.0, -pt.omega.minCoeff()));
    res = std::max(res, (pt.omega.array() * slack.array()).abs().maxCoeff());
  }
  return res;
}

KktSensitivity kkt_sensitivity(const QpProblem& p, const KktPoint& pt,
                               const Vector& db_eq, const Vector& db_in,
                               const Vector& dc) {
  const int n = p.num_vars();
  const int me = p.num_eq();
  const int ma = static_cast<int>(pt.active_set.size());

  // Strict complementarity: active rows need strictly positive multipliers,
  // inactive rows strictly positive slack.
  std::vector<bool> active(p.num_in(), false);
  for (int i : pt.active_set) active[i] = true;
  for (int i = 0; i < p.num_in(); ++i) {
    double slack = p.A_in.row(i).dot(pt.z) - p.b_in(i);
    if (active[i] && pt.omega(i) <= 1e-9)
      throw Error("degenerate active set: zero multiplier on active row " +
                  std::to_string(i));
    if (!active[i] && slack <= 1e-9)
      throw Error("degenerate active set: weakly active row " +
                  std::to_string(i));
  }

  Matrix K = Matrix::Zero(n + me + ma, n + me + ma);
  K.topLeftCorner(n, n) = p.H;
  if (me > 0) {
    K.block(0, n, n, me) = -p.A_eq.transpose();
    K.block(n, 0, me, n) = p.A_eq;
  }
  for (int k = 0; k < ma; ++k) {
    K.block(0, n + me + k, n, 1) = -p.A_in.row(pt.active_set[k]).transpose();
    K.block(n + me + k, 0, 1, n) = p.A_in.row(pt.active_set[k]);
  }

  Vector rhs = Vector::Zero(n + me + ma);
  rhs.head(n) = -dc;
  if (me > 0) rhs.segment(n, me) = db_eq;
  for (int k = 0; k < ma; ++k) rhs(n + me + k) = db_in(pt.active_set[k]);

  Vector sol;
  try {
    sol = solve_linear(K, rhs);
  } catch (const SingularMatrixError&) {
    throw SingularMatrixError("singular KKT matrix in sensitivity solve");
  }

  KktSensitivity s;
  s.dz = sol.head(n);
  s.dlambda = sol.segment(n, me);
  s.domega_active = sol.tail(ma);
  return s;
}

}  // namespace tdcoord
