#include "tdcoord/admittance.hpp"

namespace tdcoord {

AdmittanceBlocks build_admittance(const ItdCase& c) {
  BusOrder order(c);
  const auto& M = order.master();
  const auto& B = order.boundary();
  const auto& S = order.slave();
  const int nm = static_cast<int>(M.size());
  const int nb = static_cast<int>(B.size());
  const int ns = static_cast<int>(S.size());

  AdmittanceBlocks blocks;
  blocks.Y_MM = ComplexMatrix::Zero(nm, nm);
  blocks.Y_MB = ComplexMatrix::Zero(nm, nb);
  blocks.Y_BM = ComplexMatrix::Zero(nb, nm);
  blocks.Y_BB = ComplexMatrix::Zero(nb, nb);
  blocks.Y_BS = ComplexMatrix::Zero(nb, ns);
  blocks.Y_SB = ComplexMatrix::Zero(ns, nb);
  blocks.Y_SS = ComplexMatrix::Zero(ns, ns);
  blocks.Y_BB_slave_diag = ComplexVector::Zero(nb);

  using Sub = Subsystem;
  auto block_of = [&](Sub a, Sub b) -> ComplexMatrix& {
    if (a == Sub::Master && b == Sub::Master) return blocks.Y_MM;
    if (a == Sub::Master && b == Sub::Boundary) return blocks.Y_MB;
    if (a == Sub::Boundary && b == Sub::Master) return blocks.Y_BM;
    if (a == Sub::Boundary && b == Sub::Boundary) return blocks.Y_BB;
    if (a == Sub::Boundary && b == Sub::Slave) return blocks.Y_BS;
    if (a == Sub::Slave && b == Sub::Boundary) return blocks.Y_SB;
    if (a == Sub::Slave && b == Sub::Slave) return blocks.Y_SS;
    throw ValidationError(
        "master-slave admittance coupling violates the boundary cut");
  };

  for (const auto& br : c.branches) {
    if (!br.in_service) continue;
    if (br.x == 0.0 && br.r == 0.0)
      throw ValidationError("branch " + std::to_string(br.id) +
                            ": zero impedance");
    Complex ys = br.series_admittance();
    Complex ych(0.0, br.b_charging / 2.0);
    double t = br.tap == 0.0 ? 1.0 : br.tap;

    Subsystem sf = order.subsystem(br.from);
    Subsystem st = order.subsystem(br.to);
    int i = order.local_index(br.from);
    int j = order.local_index(br.to);

    Complex y_ff = (ys + ych) / (t * t);
    Complex y_tt = ys + ych;
    Complex y_ft = -ys / t;

    block_of(sf, sf)(i, i) += y_ff;
    block_of(st, st)(j, j) += y_tt;
    block_of(sf, st)(i, j) += y_ft;
    block_of(st, sf)(j, i) += y_ft;

    // Boundary-end diagonal terms of coupling branches belong to the DSO's
    // side of the power balance.
    if (sf == Subsystem::Boundary && st == Subsystem::Slave)
      blocks.Y_BB_slave_diag(i) += y_ff;
    else if (sf == Subsystem::Slave && st == Subsystem::Boundary)
      blocks.Y_BB_slave_diag(j) += y_tt;
  }

  for (const auto& bus : c.buses) {
    Complex ysh(bus.shunt_g, bus.shunt_b);
    if (ysh == Complex(0.0, 0.0)) continue;
    Subsystem s = order.subsystem(bus.id);
    int i = order.local_index(bus.id);
    block_of(s, s)(i, i) += ysh;
    if (s == Subsystem::Boundary && bus.shunt_owner == Owner::Dso)
      blocks.Y_BB_slave_diag(i) += ysh;
  }

  return blocks;
}

ComplexMatrix full_admittance(const ItdCase& c) {
  AdmittanceBlocks b = build_admittance(c);
  const int nm = static_cast<int>(b.Y_MM.rows());
  const int nb = static_cast<int>(b.Y_BB.rows());
  const int ns = static_cast<int>(b.Y_SS.rows());
  ComplexMatrix Y = ComplexMatrix::Zero(nm + nb + ns, nm + nb + ns);
  Y.block(0, 0, nm, nm) = b.Y_MM;
  Y.block(0, nm, nm, nb) = b.Y_MB;
  Y.block(nm, 0, nb, nm) = b.Y_BM;
  Y.block(nm, nm, nb, nb) = b.Y_BB;
  Y.block(nm, nm + nb, nb, ns) = b.Y_BS;
  Y.block(nm + nb, nm, ns, nb) = b.Y_SB;
  Y.block(nm + nb, nm + nb, ns, ns) = b.Y_SS;
  return Y;
}

}  // namespace tdcoord
