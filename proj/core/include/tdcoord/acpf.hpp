#pragma once

#include <optional>
#include <vector>

#include "tdcoord/admittance.hpp"
#include "tdcoord/types.hpp"

namespace tdcoord {

/// Polar voltage state over an id-ordered bus subset.
struct PfState {
  std::vector<int> ids;  // ascending
  Vector v_mag;
  Vector v_ang;  // radians

  static PfState flat(const std::vector<int>& ids);
  int index_of(int id) const;
  bool has(int id) const;
  Complex voltage(int id) const;
  void set(int id, double mag, double ang);
  PfState subset(const std::vector<int>& wanted) const;
  /// Union; other wins on shared ids.
  PfState merged(const PfState& other) const;
  /// Layout [v_mag; v_ang].
  Vector stacked() const;
  static PfState from_stacked(const std::vector<int>& ids, const Vector& x);
};

/// Per-boundary-bus active/reactive injection, positive from the boundary
/// bus into the slave network (adopted sign convention).
struct BoundaryInjection {
  std::vector<int> bus_ids;  // boundary order
  Vector p;
  Vector q;
  Vector stacked() const;  // [p; q]
  static BoundaryInjection from_stacked(const std::vector<int>& ids,
                                        const Vector& x);
};

/// Affine term subtracted from the boundary mismatch rows of the master
/// solve: a(x_B) = y0 + J (x_B - x_ref), with x_B and a in the stacked
/// layouts above. Carries the sensitivity-based response correction.
struct AffineBoundaryResponse {
  Vector x_ref;
  Vector y0;
  Matrix J;
};

/// Correction applied to the master-side model by the modified algorithms:
/// an equivalent shunt per boundary bus and/or an affine response term.
struct MasterCorrection {
  ComplexVector shunt;  // empty = none; boundary order
  std::optional<AffineBoundaryResponse> affine;
};

struct PfOptions {
  double tol = 1e-8;
  int max_iter = 30;
  std::optional<PfState> warm_start;
};

/// Slave-side solve: boundary buses of the DSO held as ideal voltage
/// sources at the supplied state. Returns the DSO's slave-bus state.
PfState solve_slave_pf(const ItdCase& c, const PfState& x_B, int dso,
                       const PfOptions& opt = {});

/// All DSOs, merged in boundary order.
PfState solve_all_slaves_pf(const ItdCase& c, const PfState& x_B,
                            const PfOptions& opt = {});

/// Complex power leaving each boundary bus into the slave network: coupling
/// branch flows plus DSO-owned boundary shunts/loads.
BoundaryInjection compute_fbs(const ItdCase& c, const PfState& x_B,
                              const PfState& x_S);

/// Master + boundary solve with each boundary bus treated as PQ consuming
/// f_BS_sp toward the slave side. Returns the state over master+boundary.
PfState solve_master_pf(const ItdCase& c, const BoundaryInjection& f_bs_sp,
                        const MasterCorrection& corr = {},
                        const PfOptions& opt = {});

/// Whole-system Newton solve; the oracle for the distributed algorithms.
PfState solve_centralized_pf(const ItdCase& c, const PfOptions& opt = {});

enum class PfScope { Full, Master, Slave };

/// Analytic Jacobian of the mismatch equations at a state, in the solver's
/// unknown layout ([theta of non-slack; v_mag of PQ]). Exposed for the
/// finite-difference cross checks and diagnostics.
Matrix pf_jacobian(const ItdCase& c, const PfState& state, PfScope scope,
                   int dso = 0);
/// Matching mismatch vector (same row layout as pf_jacobian).
Vector pf_mismatch(const ItdCase& c, const PfState& state, PfScope scope,
                   int dso = 0);

/// Max |mismatch| per subsystem for a full-system state; the re-verification
/// used by the security reports. Boundary rows use the whole balance
/// (master side + slave side + local injections).
struct SubsystemMismatch {
  double master = 0.0;
  double boundary = 0.0;
  double slave = 0.0;
  double overall() const;
};
SubsystemMismatch verify_full_state(const ItdCase& c, const PfState& state);

/// Loads scaled along the case's load_direction: p(lambda) = p0·(1+lambda·dir).
ItdCase scale_loads(const ItdCase& c, double lambda);

}  // namespace tdcoord
