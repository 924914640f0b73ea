#pragma once

#include "tdcoord/acpf.hpp"
#include "tdcoord/admittance.hpp"
#include "tdcoord/types.hpp"

namespace tdcoord {

/// Static network equivalent of each distribution system as seen from its
/// boundary bus. Sign convention: positive real part behaves like a
/// load-type shunt, i.e. attaching y_eq at the boundary bus of the master
/// model reproduces the slave's no-load voltage response. Zero for
/// shunt-free, nominal-tap slave networks.
struct SlaveEquivalent {
  std::vector<int> bus_ids;  // boundary order
  ComplexVector y_eq;
};

/// Equivalent admittance per boundary bus from the admittance blocks.
/// Throws SingularMatrixError if Y_SS cannot be factorized.
SlaveEquivalent equivalent_admittance(const AdmittanceBlocks& blocks,
                                      const std::vector<int>& boundary_ids);
SlaveEquivalent equivalent_admittance(const ItdCase& c);

/// Distribution-response value a_f(x_B) = [Re(diag{v_B}·conj(y_eq)·conj(v_B));
/// Im(...)], stacked in the f_BS layout [p; q].
Vector response_af(const PfState& x_B, const SlaveEquivalent& eq);

/// Fixed-slave-voltage linear power-flow model:
/// v_S = v_B (w + Y_SS^{-1} diag(conj(w))^{-1} conj(s_S) / |v_B|^2) with
/// w = -Y_SS^{-1} Y_SB, per slave component. Requires a single boundary bus
/// per component.
ComplexVector linear_pf_slave(const ItdCase& c, const ComplexVector& v_B);

/// Max deviation between the finite-difference total derivative of f_BS
/// under the linear model and the analytic derivative of a_f, over every
/// single-boundary slave component. The second term of the linear-model
/// boundary power is independent of the boundary voltage, so this is ~0 up
/// to finite-difference noise.
double verify_af_exactness(const ItdCase& c);

}  // namespace tdcoord
