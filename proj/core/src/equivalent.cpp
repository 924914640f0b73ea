#include "tdcoord/equivalent.hpp"

#include <cmath>

#include <Eigen/LU>

namespace tdcoord {

namespace {

Eigen::FullPivLU<ComplexMatrix> factor_yss(const ComplexMatrix& Y_SS) {
  Eigen::FullPivLU<ComplexMatrix> lu(Y_SS);
  if (Y_SS.rows() > 0 && !lu.isInvertible())
    throw SingularMatrixError("Y_SS is singular; cannot form the equivalent");
  return lu;
}

}  // namespace

SlaveEquivalent equivalent_admittance(const AdmittanceBlocks& blocks,
                                      const std::vector<int>& boundary_ids) {
  auto lu = factor_yss(blocks.Y_SS);
  const auto nb = blocks.Y_BS.rows();
  SlaveEquivalent eq;
  eq.bus_ids = boundary_ids;
  eq.y_eq = ComplexVector::Zero(nb);
  if (blocks.Y_SS.rows() == 0) return eq;
  // Physical equivalent = -(Y_BS 1 + Y_BS Y_SS^{-1} Y_SB) rowwise; the two
  // terms cancel exactly in shunt-free networks (row-sum conservation).
  ComplexVector term1 = blocks.Y_BS.rowwise().sum();
  ComplexMatrix inner = lu.solve(blocks.Y_SB);
  ComplexVector term2 = (blocks.Y_BS * inner).rowwise().sum();
  eq.y_eq = -(term1 + term2);
  return eq;
}

SlaveEquivalent equivalent_admittance(const ItdCase& c) {
  return equivalent_admittance(build_admittance(c),
                               c.ids_of(Subsystem::Boundary));
}

Vector response_af(const PfState& x_B, const SlaveEquivalent& eq) {
  const auto nb = static_cast<Eigen::Index>(eq.bus_ids.size());
  Vector a(2 * nb);
  for (Eigen::Index k = 0; k < nb; ++k) {
    Complex v = x_B.voltage(eq.bus_ids[k]);
    Complex s = v * std::conj(eq.y_eq(k)) * std::conj(v);
    a(k) = s.real();
    a(nb + k) = s.imag();
  }
  return a;
}

namespace {

struct ComponentModel {
  int boundary_id;
  int boundary_pos;           // position in boundary order
  std::vector<int> slave_pos; // positions in slave order
  ComplexMatrix Y_SS;
  ComplexVector Y_SB;         // column for this boundary bus
  ComplexVector Y_BS;         // row for this boundary bus
  ComplexVector s_S;          // net complex injections at slave buses
};

std::vector<ComponentModel> component_models(const ItdCase& c) {
  BusOrder order(c);
  AdmittanceBlocks blocks = build_admittance(c);
  std::vector<ComponentModel> out;
  for (const auto& comp : c.slave_components()) {
    if (comp.attached_boundary_ids.size() != 1)
      throw ValidationError(
          "slave component containing bus " +
          std::to_string(comp.slave_ids.front()) +
          " attaches to " +
          std::to_string(comp.attached_boundary_ids.size()) +
          " boundary buses; the linear model needs exactly one");
    ComponentModel m;
    m.boundary_id = comp.attached_boundary_ids.front();
    m.boundary_pos = order.local_index(m.boundary_id);
    for (int id : comp.slave_ids) m.slave_pos.push_back(order.local_index(id));
    const auto ns = static_cast<Eigen::Index>(m.slave_pos.size());
    m.Y_SS.resize(ns, ns);
    m.Y_SB.resize(ns);
    m.Y_BS.resize(ns);
    m.s_S.resize(ns);
    for (Eigen::Index i = 0; i < ns; ++i) {
      for (Eigen::Index j = 0; j < ns; ++j)
        m.Y_SS(i, j) = blocks.Y_SS(m.slave_pos[i], m.slave_pos[j]);
      m.Y_SB(i) = blocks.Y_SB(m.slave_pos[i], m.boundary_pos);
      m.Y_BS(i) = blocks.Y_BS(m.boundary_pos, m.slave_pos[i]);
      const Bus& b = c.bus(comp.slave_ids[i]);
      double pg = 0, qg = 0;
      for (const auto& g : c.generators)
        if (g.bus == b.id) {
          pg += g.p;
          qg += g.q;
        }
      m.s_S(i) = Complex(pg - b.p_load, qg - b.q_load);
    }
    out.push_back(std::move(m));
  }
  return out;
}

ComplexVector linear_component_voltages(const ComponentModel& m, Complex v_b) {
  auto lu = factor_yss(m.Y_SS);
  ComplexVector w = -lu.solve(m.Y_SB);
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (std::abs(w(i)) < 1e-12)
      throw Error("open-circuit voltage ratio has a zero component");
  ComplexVector rhs = w.conjugate().cwiseInverse().asDiagonal() * m.s_S.conjugate();
  ComplexVector corr = lu.solve(rhs) / std::norm(v_b);
  return v_b * (w + corr);
}

// Boundary power into the component's branches under the linear model,
// series terms only (the model's own bookkeeping).
Complex linear_component_sbs(const ComponentModel& m, Complex v_b) {
  ComplexVector v_s = linear_component_voltages(m, v_b);
  Complex current =
      -m.Y_BS.sum() * v_b + (m.Y_BS.array() * v_s.array()).sum();
  return v_b * std::conj(current);
}

}  // namespace

ComplexVector linear_pf_slave(const ItdCase& c, const ComplexVector& v_B) {
  BusOrder order(c);
  const auto ns = static_cast<Eigen::Index>(order.slave().size());
  ComplexVector v_s = ComplexVector::Zero(ns);
  for (const auto& m : component_models(c)) {
    ComplexVector comp_v = linear_component_voltages(m, v_B(m.boundary_pos));
    for (size_t i = 0; i < m.slave_pos.size(); ++i)
      v_s(m.slave_pos[i]) = comp_v(i);
  }
  return v_s;
}

double verify_af_exactness(const ItdCase& c) {
  const double h = 1e-6;
  SlaveEquivalent eq = equivalent_admittance(c);
  double worst = 0.0;
  for (const auto& m : component_models(c)) {
    Complex y = eq.y_eq(m.boundary_pos);
    // Probe around a representative operating voltage.
    const double V0 = 1.02, th0 = -0.03;
    auto fbs = [&](double V, double th) {
      Complex s = linear_component_sbs(m, std::polar(V, th));
      return Eigen::Vector2d(s.real(), s.imag());
    };
    Eigen::Matrix2d d_fbs;
    d_fbs.col(0) = (fbs(V0 + h, th0) - fbs(V0 - h, th0)) / (2 * h);
    d_fbs.col(1) = (fbs(V0, th0 + h) - fbs(V0, th0 - h)) / (2 * h);

    // a_f = |v|^2 (Re conj(y), Im conj(y)); the angle derivative vanishes.
    Eigen::Matrix2d d_af = Eigen::Matrix2d::Zero();
    d_af(0, 0) = 2 * V0 * y.real();
    d_af(1, 0) = -2 * V0 * y.imag();

    worst = std::max(worst, (d_fbs - d_af).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace tdcoord
