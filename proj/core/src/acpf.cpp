#include "tdcoord/acpf.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tdcoord/newton.hpp"

namespace tdcoord {

namespace {
constexpr Complex kImag(0.0, 1.0);
}

PfState PfState::flat(const std::vector<int>& ids) {
  PfState s;
  s.ids = ids;
  s.v_mag = Vector::Ones(ids.size());
  s.v_ang = Vector::Zero(ids.size());
  return s;
}

int PfState::index_of(int id) const {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id)
    throw Error("PfState: bus " + std::to_string(id) + " not covered");
  return static_cast<int>(it - ids.begin());
}

bool PfState::has(int id) const {
  return std::binary_search(ids.begin(), ids.end(), id);
}

Complex PfState::voltage(int id) const {
  int i = index_of(id);
  return std::polar(v_mag(i), v_ang(i));
}

void PfState::set(int id, double mag, double ang) {
  int i = index_of(id);
  v_mag(i) = mag;
  v_ang(i) = ang;
}

PfState PfState::subset(const std::vector<int>& wanted) const {
  PfState s;
  s.ids = wanted;
  s.v_mag.resize(wanted.size());
  s.v_ang.resize(wanted.size());
  for (size_t k = 0; k < wanted.size(); ++k) {
    int i = index_of(wanted[k]);
    s.v_mag(k) = v_mag(i);
    s.v_ang(k) = v_ang(i);
  }
  return s;
}

PfState PfState::merged(const PfState& other) const {
  std::map<int, std::pair<double, double>> all;
  for (size_t k = 0; k < ids.size(); ++k)
    all[ids[k]] = {v_mag(k), v_ang(k)};
  for (size_t k = 0; k < other.ids.size(); ++k)
    all[other.ids[k]] = {other.v_mag(k), other.v_ang(k)};
  PfState s;
  for (const auto& [id, mv] : all) {
    s.ids.push_back(id);
  }
  s.v_mag.resize(s.ids.size());
  s.v_ang.resize(s.ids.size());
  for (size_t k = 0; k < s.ids.size(); ++k) {
    auto [m, a] = all[s.ids[k]];
    s.v_mag(k) = m;
    s.v_ang(k) = a;
  }
  return s;
}

Vector PfState::stacked() const {
  Vector x(2 * ids.size());
  x << v_mag, v_ang;
  return x;
}

PfState PfState::from_stacked(const std::vector<int>& ids, const Vector& x) {
  PfState s;
  s.ids = ids;
  const auto n = static_cast<Eigen::Index>(ids.size());
  s.v_mag = x.head(n);
  s.v_ang = x.tail(n);
  return s;
}

Vector BoundaryInjection::stacked() const {
  Vector x(2 * bus_ids.size());
  x << p, q;
  return x;
}

BoundaryInjection BoundaryInjection::from_stacked(const std::vector<int>& ids,
                                                  const Vector& x) {
  BoundaryInjection f;
  f.bus_ids = ids;
  const auto n = static_cast<Eigen::Index>(ids.size());
  f.p = x.head(n);
  f.q = x.tail(n);
  return f;
}

namespace {

// A power-flow scope: unknown buses solved by Newton against fixed voltage
// sources, with optional correction terms on named (boundary) buses.
struct Scoped {
  std::vector<int> unknown_ids;
  std::vector<int> fixed_ids;
  ComplexMatrix Y_uu, Y_uf;
  ComplexVector v_fixed;
  Vector p_spec, q_spec;          // per unknown bus
  std::vector<BusKind> kind;      // PV or PQ per unknown bus
  Vector v_set;                   // PV magnitude setpoints
  Vector q_min, q_max;            // net reactive capability per unknown bus
  std::vector<int> affine_ids;    // buses the affine response applies to
  std::optional<AffineBoundaryResponse> affine;

  int n() const { return static_cast<int>(unknown_ids.size()); }
};

struct UnknownLayout {
  // x = [theta(all unknown buses); v_mag(PQ buses)]
  std::vector<int> v_col;  // per unknown bus: column of its v_mag or -1 (PV)
  int n_theta = 0;
  int n_v = 0;

  explicit UnknownLayout(const Scoped& m) {
    n_theta = m.n();
    v_col.assign(m.n(), -1);
    for (int i = 0; i < m.n(); ++i)
      if (m.kind[i] == BusKind::PQ) v_col[i] = n_theta + n_v++;
  }
  int size() const { return n_theta + n_v; }
};

ComplexVector voltages(const Scoped& m, const UnknownLayout& lay,
                       const Vector& x) {
  ComplexVector v(m.n());
  for (int i = 0; i < m.n(); ++i) {
    double mag = lay.v_col[i] >= 0 ? x(lay.v_col[i]) : m.v_set(i);
    v(i) = std::polar(mag, x(i));
  }
  return v;
}

// Rows: [dP for each unknown bus; dQ for each PQ bus], matching UnknownLayout.
Vector scoped_mismatch(const Scoped& m, const UnknownLayout& lay,
                       const Vector& x) {
  ComplexVector v = voltages(m, lay, x);
  ComplexVector inj = m.Y_uu * v;
  if (m.fixed_ids.size()) inj += m.Y_uf * m.v_fixed;
  Vector f(lay.size());
  ComplexVector s(m.n());
  for (int i = 0; i < m.n(); ++i) s(i) = v(i) * std::conj(inj(i));

  Vector a_term;
  if (m.affine) {
    const auto nb = static_cast<Eigen::Index>(m.affine_ids.size());
    Vector xb(2 * nb);
    for (Eigen::Index k = 0; k < nb; ++k) {
      int i = static_cast<int>(std::lower_bound(m.unknown_ids.begin(),
                                                m.unknown_ids.end(),
                                                m.affine_ids[k]) -
                               m.unknown_ids.begin());
      xb(k) = std::abs(v(i));
      xb(nb + k) = std::arg(v(i));
    }
    a_term = m.affine->y0 + m.affine->J * (xb - m.affine->x_ref);
  }

  for (int i = 0; i < m.n(); ++i) f(i) = m.p_spec(i) - s(i).real();
  for (int i = 0; i < m.n(); ++i)
    if (lay.v_col[i] >= 0) f(lay.v_col[i]) = m.q_spec(i) - s(i).imag();

  if (m.affine) {
    const auto nb = static_cast<Eigen::Index>(m.affine_ids.size());
    for (Eigen::Index k = 0; k < nb; ++k) {
      int i = static_cast<int>(std::lower_bound(m.unknown_ids.begin(),
                                                m.unknown_ids.end(),
                                                m.affine_ids[k]) -
                               m.unknown_ids.begin());
      f(i) -= a_term(k);
      if (lay.v_col[i] >= 0) f(lay.v_col[i]) -= a_term(nb + k);
    }
  }
  return f;
}

Matrix scoped_jacobian(const Scoped& m, const UnknownLayout& lay,
                       const Vector& x) {
  ComplexVector v = voltages(m, lay, x);
  ComplexVector inj = m.Y_uu * v;
  if (m.fixed_ids.size()) inj += m.Y_uf * m.v_fixed;

  Matrix J = Matrix::Zero(lay.size(), lay.size());
  for (int i = 0; i < m.n(); ++i) {
    for (int j = 0; j < m.n(); ++j) {
      Complex dS_dtheta, dS_dv;
      if (i == j) {
        dS_dtheta = kImag * v(i) * (std::conj(inj(i)) -
                                    std::conj(m.Y_uu(i, i) * v(i)));
        dS_dv = std::polar(1.0, x(i)) * std::conj(inj(i)) +
                v(i) * std::conj(m.Y_uu(i, i) * std::polar(1.0, x(i)));
      } else {
        if (m.Y_uu(i, j) == Complex(0.0, 0.0)) continue;
        dS_dtheta = -kImag * v(i) * std::conj(m.Y_uu(i, j) * v(j));
        dS_dv = v(i) * std::conj(m.Y_uu(i, j) * std::polar(1.0, x(j)));
      }
      // dP rows
      J(i, j) -= dS_dtheta.real();
      if (lay.v_col[j] >= 0) J(i, lay.v_col[j]) -= dS_dv.real();
      // dQ rows
      if (lay.v_col[i] >= 0) {
        J(lay.v_col[i], j) -= dS_dtheta.imag();
        if (lay.v_col[j] >= 0) J(lay.v_col[i], lay.v_col[j]) -= dS_dv.imag();
      }
    }
  }

  if (m.affine) {
    const auto nb = static_cast<Eigen::Index>(m.affine_ids.size());
    for (Eigen::Index k = 0; k < nb; ++k) {
      int i = static_cast<int>(std::lower_bound(m.unknown_ids.begin(),
                                                m.unknown_ids.end(),
                                                m.affine_ids[k]) -
                               m.unknown_ids.begin());
      for (Eigen::Index l = 0; l < nb; ++l) {
        int jbus = static_cast<int>(std::lower_bound(m.unknown_ids.begin(),
                                                     m.unknown_ids.end(),
                                                     m.affine_ids[l]) -
                                    m.unknown_ids.begin());
        // columns: v_mag of bus l, theta of bus l
        if (lay.v_col[jbus] >= 0) {
          J(i, lay.v_col[jbus]) -= m.affine->J(k, l);
          if (lay.v_col[i] >= 0)
            J(lay.v_col[i], lay.v_col[jbus]) -= m.affine->J(nb + k, l);
        }
        J(i, jbus) -= m.affine->J(k, nb + l);
        if (lay.v_col[i] >= 0)
          J(lay.v_col[i], jbus) -= m.affine->J(nb + k, nb + l);
      }
    }
  }
  return J;
}

// Newton with PV->PQ switching on violated reactive limits.
PfState solve_scoped(Scoped m, const PfOptions& opt) {
  PfState init = PfState::flat(m.unknown_ids);
  if (opt.warm_start) {
    for (size_t k = 0; k < m.unknown_ids.size(); ++k)
      if (opt.warm_start->has(m.unknown_ids[k])) {
        int i = opt.warm_start->index_of(m.unknown_ids[k]);
        init.v_mag(k) = opt.warm_start->v_mag(i);
        init.v_ang(k) = opt.warm_start->v_ang(i);
      }
  }

  for (int round = 0; round < 10; ++round) {
    UnknownLayout lay(m);
    Vector x0(lay.size());
    for (int i = 0; i < m.n(); ++i) {
      x0(i) = init.v_ang(i);
      if (lay.v_col[i] >= 0) x0(lay.v_col[i]) = init.v_mag(i);
    }

    NewtonOptions nopt;
    nopt.tol = opt.tol;
    nopt.max_iter = opt.max_iter;
    NewtonResult res = solve_newton(
        [&](const Vector& x) { return scoped_mismatch(m, lay, x); },
        [&](const Vector& x) { return scoped_jacobian(m, lay, x); }, x0, nopt);

    PfState out;
    out.ids = m.unknown_ids;
    out.v_mag.resize(m.n());
    out.v_ang.resize(m.n());
    ComplexVector v = voltages(m, lay, res.x);
    for (int i = 0; i < m.n(); ++i) {
      out.v_mag(i) = std::abs(v(i));
      out.v_ang(i) = res.x(i);
    }

    // Reactive limits on PV buses: convert violators and re-solve.
    ComplexVector inj = m.Y_uu * v;
    if (m.fixed_ids.size()) inj += m.Y_uf * m.v_fixed;
    bool switched = false;
    for (int i = 0; i < m.n(); ++i) {
      if (m.kind[i] != BusKind::PV) continue;
      double q_net = (v(i) * std::conj(inj(i))).imag();
      if (q_net > m.q_max(i) + 1e-9) {
        m.kind[i] = BusKind::PQ;
        m.q_spec(i) = m.q_max(i);
        switched = true;
      } else if (q_net < m.q_min(i) - 1e-9) {
        m.kind[i] = BusKind::PQ;
        m.q_spec(i) = m.q_min(i);
        switched = true;
      }
    }
    if (!switched) return out;
    init = out;
  }
  throw DivergenceError("PV/PQ switching did not settle in 10 rounds");
}

struct NetInjection {
  double p = 0.0, q = 0.0;
  double q_min = 0.0, q_max = 0.0;
  bool has_gen = false;
};

// Net scheduled injection at a bus. For boundary buses `side` selects which
// operator's equipment is counted.
NetInjection net_injection(const ItdCase& c, const Bus& b,
                           std::optional<Owner> side) {
  NetInjection n;
  bool count_load = b.subsystem != Subsystem::Boundary || !side ||
                    b.load_owner == *side;
  if (count_load) {
    n.p -= b.p_load;
    n.q -= b.q_load;
  }
  for (const auto& g : c.generators) {
    if (g.bus != b.id) continue;
    if (b.subsystem == Subsystem::Boundary && side && g.owner != *side)
      continue;
    n.p += g.p;
    n.q += g.q;
    n.q_min += g.q_min;
    n.q_max += g.q_max;
    n.has_gen = true;
  }
  // Reactive capability is net of the local load.
  n.q_min -= count_load ? b.q_load : 0.0;
  n.q_max -= count_load ? b.q_load : 0.0;
  if (!n.has_gen) {
    n.q_min = -1e30;
    n.q_max = 1e30;
  }
  return n;
}

ComplexMatrix slice(const ComplexMatrix& Y, const std::vector<int>& rows,
                    const std::vector<int>& cols) {
  ComplexMatrix out(rows.size(), cols.size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < cols.size(); ++j)
      out(i, j) = Y(rows[i], cols[j]);
  return out;
}

Scoped build_full(const ItdCase& c) {
  BusOrder order(c);
  ComplexMatrix Y = full_admittance(c);
  Scoped m;
  std::vector<int> u_pos, f_pos;
  for (const auto& ids :
       {order.master(), order.boundary(), order.slave()}) {
    for (int id : ids) {
      if (c.bus(id).kind == BusKind::Slack) {
        m.fixed_ids.push_back(id);
        f_pos.push_back(order.index(id));
      } else {
        m.unknown_ids.push_back(id);
        u_pos.push_back(order.index(id));
      }
    }
  }
  // Ascending ids within the unknown set (BusOrder groups by subsystem but
  // solve order only needs to be deterministic; sort for binary search).
  std::vector<size_t> perm(m.unknown_ids.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::sort(perm.begin(), perm.end(), [&](size_t a, size_t b) {
    return m.unknown_ids[a] < m.unknown_ids[b];
  });
  std::vector<int> uids, upos;
  for (size_t i : perm) {
    uids.push_back(m.unknown_ids[i]);
    upos.push_back(u_pos[i]);
  }
  m.unknown_ids = uids;
  u_pos = upos;

  m.Y_uu = slice(Y, u_pos, u_pos);
  m.Y_uf = slice(Y, u_pos, f_pos);
  m.v_fixed.resize(f_pos.size());
  for (size_t k = 0; k < m.fixed_ids.size(); ++k) {
    const Bus& b = c.bus(m.fixed_ids[k]);
    m.v_fixed(k) = std::polar(b.v_mag, b.v_ang);
  }
  const int n = m.n();
  m.p_spec.resize(n);
  m.q_spec.resize(n);
  m.v_set.resize(n);
  m.q_min.resize(n);
  m.q_max.resize(n);
  for (int i = 0; i < n; ++i) {
    const Bus& b = c.bus(m.unknown_ids[i]);
    NetInjection inj = net_injection(c, b, std::nullopt);
    m.kind.push_back(b.kind == BusKind::PV ? BusKind::PV : BusKind::PQ);
    m.p_spec(i) = inj.p;
    m.q_spec(i) = inj.q;
    m.v_set(i) = b.v_mag;
    m.q_min(i) = inj.q_min;
    m.q_max(i) = inj.q_max;
  }
  return m;
}

Scoped build_master(const ItdCase& c, const BoundaryInjection& f_bs,
                    const MasterCorrection& corr) {
  BusOrder order(c);
  AdmittanceBlocks blocks = build_admittance(c);
  const auto& M = order.master();
  const auto& B = order.boundary();
  const int nm = static_cast<int>(M.size());
  const int nb = static_cast<int>(B.size());

  // Master-side Y over [master; boundary], with the slave-side diagonal
  // share removed and the optional equivalent shunts attached.
  ComplexMatrix Y(nm + nb, nm + nb);
  Y.topLeftCorner(nm, nm) = blocks.Y_MM;
  Y.topRightCorner(nm, nb) = blocks.Y_MB;
  Y.bottomLeftCorner(nb, nm) = blocks.Y_BM;
  Y.bottomRightCorner(nb, nb) = blocks.Y_BB;
  for (int k = 0; k < nb; ++k)
    Y(nm + k, nm + k) -= blocks.Y_BB_slave_diag(k);
  if (corr.shunt.size() == nb)
    for (int k = 0; k < nb; ++k) Y(nm + k, nm + k) += corr.shunt(k);
  else if (corr.shunt.size() != 0)
    throw Error("correction shunt length does not match boundary count");

  Scoped m;
  std::vector<int> u_pos, f_pos;
  std::vector<int> scope_ids;
  scope_ids.insert(scope_ids.end(), M.begin(), M.end());
  scope_ids.insert(scope_ids.end(), B.begin(), B.end());
  std::map<int, int> pos;
  for (int k = 0; k < nm; ++k) pos[M[k]] = k;
  for (int k = 0; k < nb; ++k) pos[B[k]] = nm + k;
  std::sort(scope_ids.begin(), scope_ids.end());
  for (int id : scope_ids) {
    if (c.bus(id).kind == BusKind::Slack) {
      m.fixed_ids.push_back(id);
      f_pos.push_back(pos[id]);
    } else {
      m.unknown_ids.push_back(id);
      u_pos.push_back(pos[id]);
    }
  }
  m.Y_uu = slice(Y, u_pos, u_pos);
  m.Y_uf = slice(Y, u_pos, f_pos);
  m.v_fixed.resize(f_pos.size());
  for (size_t k = 0; k < m.fixed_ids.size(); ++k) {
    const Bus& b = c.bus(m.fixed_ids[k]);
    m.v_fixed(k) = std::polar(b.v_mag, b.v_ang);
  }

  const int n = m.n();
  m.p_spec.resize(n);
  m.q_spec.resize(n);
  m.v_set.resize(n);
  m.q_min.resize(n);
  m.q_max.resize(n);
  for (int i = 0; i < n; ++i) {
    const Bus& b = c.bus(m.unknown_ids[i]);
    bool is_boundary = b.subsystem == Subsystem::Boundary;
    NetInjection inj = net_injection(c, b, is_boundary ? std::optional(Owner::Tso)
                                                       : std::nullopt);
    m.kind.push_back(b.kind == BusKind::PV && !is_boundary ? BusKind::PV
                                                           : BusKind::PQ);
    m.p_spec(i) = inj.p;
    m.q_spec(i) = inj.q;
    if (is_boundary) {
      int k = order.local_index(b.id);
      m.p_spec(i) -= f_bs.p(k);
      m.q_spec(i) -= f_bs.q(k);
    }
    m.v_set(i) = b.v_mag;
    m.q_min(i) = inj.q_min;
    m.q_max(i) = inj.q_max;
  }

  if (corr.affine) {
    m.affine = corr.affine;
    m.affine_ids = B;
  }
  return m;
}

Scoped build_slave(const ItdCase& c, int dso, const PfState& x_B) {
  BusOrder order(c);
  ComplexMatrix Y = full_admittance(c);
  std::vector<int> sids = c.slave_ids_of_dso(dso);
  std::vector<int> bids = c.boundary_ids_of_dso(dso);
  if (sids.empty())
    throw ValidationError("DSO " + std::to_string(dso) + " has no slave buses");

  Scoped m;
  m.unknown_ids = sids;
  m.fixed_ids = bids;
  std::vector<int> u_pos, f_pos;
  for (int id : sids) u_pos.push_back(order.index(id));
  for (int id : bids) f_pos.push_back(order.index(id));
  m.Y_uu = slice(Y, u_pos, u_pos);
  m.Y_uf = slice(Y, u_pos, f_pos);
  m.v_fixed.resize(bids.size());
  for (size_t k = 0; k < bids.size(); ++k) m.v_fixed(k) = x_B.voltage(bids[k]);

  const int n = m.n();
  m.p_spec.resize(n);
  m.q_spec.resize(n);
  m.v_set.resize(n);
  m.q_min.resize(n);
  m.q_max.resize(n);
  for (int i = 0; i < n; ++i) {
    const Bus& b = c.bus(sids[i]);
    if (b.kind == BusKind::Slack)
      throw ValidationError("slack bus " + std::to_string(b.id) +
                            " inside a slave subsystem");
    NetInjection inj = net_injection(c, b, std::nullopt);
    m.kind.push_back(b.kind);
    m.p_spec(i) = inj.p;
    m.q_spec(i) = inj.q;
    m.v_set(i) = b.v_mag;
    m.q_min(i) = inj.q_min;
    m.q_max(i) = inj.q_max;
  }
  return m;
}

}  // namespace

PfState solve_slave_pf(const ItdCase& c, const PfState& x_B, int dso,
                       const PfOptions& opt) {
  return solve_scoped(build_slave(c, dso, x_B), opt);
}

PfState solve_all_slaves_pf(const ItdCase& c, const PfState& x_B,
                            const PfOptions& opt) {
  PfState out;
  for (int d = 0; d < c.num_dsos(); ++d)
    out = out.merged(solve_slave_pf(c, x_B, d, opt));
  return out;
}

BoundaryInjection compute_fbs(const ItdCase& c, const PfState& x_B,
                              const PfState& x_S) {
  BusOrder order(c);
  AdmittanceBlocks blocks = build_admittance(c);
  const auto& B = order.boundary();
  const auto& S = order.slave();

  ComplexVector v_b(B.size()), v_s(S.size());
  for (size_t k = 0; k < B.size(); ++k) v_b(k) = x_B.voltage(B[k]);
  for (size_t k = 0; k < S.size(); ++k) v_s(k) = x_S.voltage(S[k]);

  ComplexVector current =
      blocks.Y_BB_slave_diag.asDiagonal() * v_b + blocks.Y_BS * v_s;

  BoundaryInjection f;
  f.bus_ids = B;
  f.p.resize(B.size());
  f.q.resize(B.size());
  for (size_t k = 0; k < B.size(); ++k) {
    Complex s = v_b(k) * std::conj(current(k));
    const Bus& bus = c.bus(B[k]);
    if (bus.load_owner == Owner::Dso) s += Complex(bus.p_load, bus.q_load);
    for (const auto& g : c.generators)
      if (g.bus == bus.id && g.owner == Owner::Dso) s -= Complex(g.p, g.q);
    f.p(k) = s.real();
    f.q(k) = s.imag();
  }
  return f;
}

PfState solve_master_pf(const ItdCase& c, const BoundaryInjection& f_bs_sp,
                        const MasterCorrection& corr, const PfOptions& opt) {
  PfState sol = solve_scoped(build_master(c, f_bs_sp, corr), opt);
  // Slack voltage belongs in the returned picture.
  for (const auto& b : c.buses)
    if (b.kind == BusKind::Slack && b.subsystem != Subsystem::Slave) {
      PfState slack;
      slack.ids = {b.id};
      slack.v_mag = Vector::Constant(1, b.v_mag);
      slack.v_ang = Vector::Constant(1, b.v_ang);
      sol = sol.merged(slack);
    }
  return sol;
}

PfState solve_centralized_pf(const ItdCase& c, const PfOptions& opt) {
  PfOptions o = opt;
  if (o.tol == PfOptions{}.tol) o.tol = 1e-10;
  PfState sol = solve_scoped(build_full(c), o);
  for (const auto& b : c.buses)
    if (b.kind == BusKind::Slack) {
      PfState slack;
      slack.ids = {b.id};
      slack.v_mag = Vector::Constant(1, b.v_mag);
      slack.v_ang = Vector::Constant(1, b.v_ang);
      sol = sol.merged(slack);
    }
  return sol;
}

namespace {
Scoped build_scope(const ItdCase& c, PfScope scope, int dso,
                   const PfState& state) {
  switch (scope) {
    case PfScope::Full:
      return build_full(c);
    case PfScope::Slave:
      return build_slave(c, dso, state);
    case PfScope::Master: {
      BoundaryInjection zero;
      zero.bus_ids = c.ids_of(Subsystem::Boundary);
      zero.p = Vector::Zero(zero.bus_ids.size());
      zero.q = Vector::Zero(zero.bus_ids.size());
      return build_master(c, zero, {});
    }
  }
  throw Error("bad scope");
}

Vector pack_state(const Scoped& m, const UnknownLayout& lay,
                  const PfState& state) {
  Vector x(lay.size());
  for (int i = 0; i < m.n(); ++i) {
    int idx = state.index_of(m.unknown_ids[i]);
    x(i) = state.v_ang(idx);
    if (lay.v_col[i] >= 0) x(lay.v_col[i]) = state.v_mag(idx);
  }
  return x;
}
}  // namespace

Matrix pf_jacobian(const ItdCase& c, const PfState& state, PfScope scope,
                   int dso) {
  Scoped m = build_scope(c, scope, dso, state);
  UnknownLayout lay(m);
  return scoped_jacobian(m, lay, pack_state(m, lay, state));
}

Vector pf_mismatch(const ItdCase& c, const PfState& state, PfScope scope,
                   int dso) {
  Scoped m = build_scope(c, scope, dso, state);
  UnknownLayout lay(m);
  return scoped_mismatch(m, lay, pack_state(m, lay, state));
}

double SubsystemMismatch::overall() const {
  return std::max({master, boundary, slave});
}

SubsystemMismatch verify_full_state(const ItdCase& c, const PfState& state) {
  BusOrder order(c);
  ComplexMatrix Y = full_admittance(c);
  std::vector<int> all;
  for (const auto& ids : {order.master(), order.boundary(), order.slave()})
    all.insert(all.end(), ids.begin(), ids.end());
  ComplexVector v(all.size());
  for (size_t k = 0; k < all.size(); ++k)
    v(order.index(all[k])) = state.voltage(all[k]);
  ComplexVector s = v.array() * (Y * v).conjugate().array();

  SubsystemMismatch out;
  for (int id : all) {
    const Bus& b = c.bus(id);
    if (b.kind == BusKind::Slack) continue;
    NetInjection inj = net_injection(c, b, std::nullopt);
    int k = order.index(id);
    double dp = std::abs(inj.p - s(k).real());
    double dq = b.kind == BusKind::PQ ? std::abs(inj.q - s(k).imag()) : 0.0;
    double worst = std::max(dp, dq);
    switch (b.subsystem) {
      case Subsystem::Master: out.master = std::max(out.master, worst); break;
      case Subsystem::Boundary:
        out.boundary = std::max(out.boundary, worst);
        break;
      case Subsystem::Slave: out.slave = std::max(out.slave, worst); break;
    }
  }
  return out;
}

ItdCase scale_loads(const ItdCase& c, double lambda) {
  ItdCase out = c;
  for (auto& b : out.buses) {
    double f = 1.0 + lambda * c.load_direction_of(b.id);
    b.p_load *= f;
    b.q_load *= f;
  }
  return out;
}

}  // namespace tdcoord
