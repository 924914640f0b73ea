#pragma once

#include "tdcoord/types.hpp"

namespace tdcoord {

/// Bus-admittance matrix split along the master/boundary/slave partition.
/// Fact 2 guarantees the master-slave blocks are identically zero, so they
/// are not represented. Row/column order is ascending bus id within each
/// subsystem (BusOrder).
struct AdmittanceBlocks {
  ComplexMatrix Y_MM, Y_MB, Y_BM, Y_BB, Y_BS, Y_SB, Y_SS;
  /// Slave-side share of the Y_BB diagonal: boundary-end terms of coupling
  /// branches plus DSO-owned boundary shunts. Splitting the boundary power
  /// balance between f_MB and f_BS needs it.
  ComplexVector Y_BB_slave_diag;
};

/// Standard construction: series admittance, half charging at each end, bus
/// shunts on the diagonal, off-nominal tap on the from side.
AdmittanceBlocks build_admittance(const ItdCase& c);

/// Whole-system matrix in BusOrder (master, boundary, slave) order,
/// assembled from the blocks.
ComplexMatrix full_admittance(const ItdCase& c);

}  // namespace tdcoord
