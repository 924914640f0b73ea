#include "tdcoord/apps_dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "tdcoord/linalg.hpp"

namespace tdcoord {

double LmpVector::price_of(int bus) const {
  for (size_t i = 0; i < bus_ids.size(); ++i)
    if (bus_ids[i] == bus) return price(i);
  throw Error("no LMP for bus " + std::to_string(bus));
}

namespace {

struct GenRef {
  int case_index;
  int bus;
  double p_min, p_max, c1, c2;
};

double dc_susceptance(const Branch& br) { return 1.0 / br.x; }

// PTDF over `bus_ids` with a reference column forced to zero.
Matrix dc_ptdf(const std::vector<int>& bus_ids,
               const std::vector<Branch>& branches, int ref_bus) {
  const int n = static_cast<int>(bus_ids.size());
  std::map<int, int> pos;
  for (int i = 0; i < n; ++i) pos[bus_ids[i]] = i;
  Matrix B = Matrix::Zero(n, n);
  for (const auto& br : branches) {
    double b = dc_susceptance(br);
    int i = pos.at(br.from), j = pos.at(br.to);
    B(i, i) += b;
    B(j, j) += b;
    B(i, j) -= b;
    B(j, i) -= b;
  }
  int r = pos.at(ref_bus);
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (i != r) keep.push_back(i);
  Matrix Br(n - 1, n - 1);
  for (int a = 0; a < n - 1; ++a)
    for (int c = 0; c < n - 1; ++c) Br(a, c) = B(keep[a], keep[c]);
  Eigen::FullPivLU<Matrix> lu(Br);
  if (!lu.isInvertible())
    throw SingularMatrixError("disconnected DC network (singular B matrix)");
  Matrix X = Matrix::Zero(n, n);
  Matrix Xr = lu.inverse();
  for (int a = 0; a < n - 1; ++a)
    for (int c = 0; c < n - 1; ++c) X(keep[a], keep[c]) = Xr(a, c);
  Matrix ptdf(branches.size(), n);
  for (size_t l = 0; l < branches.size(); ++l) {
    double b = dc_susceptance(branches[l]);
    int i = pos.at(branches[l].from), j = pos.at(branches[l].to);
    for (int k = 0; k < n; ++k) ptdf(l, k) = b * (X(i, k) - X(j, k));
  }
  return ptdf;
}

struct QpBuilder {
  explicit QpBuilder(int nvars) : n(nvars) {
    H = Matrix::Zero(n, n);
    c = Vector::Zero(n);
  }
  int n;
  Matrix H;
  Vector c;
  std::vector<Vector> eq_rows;
  std::vector<double> eq_rhs;
  std::vector<Vector> in_rows;
  std::vector<double> in_rhs;

  int add_eq(const Vector& a, double b) {
    eq_rows.push_back(a);
    eq_rhs.push_back(b);
    return static_cast<int>(eq_rows.size()) - 1;
  }
  int add_in(const Vector& a, double b) {
    in_rows.push_back(a);
    in_rhs.push_back(b);
    return static_cast<int>(in_rows.size()) - 1;
  }
  void add_gen_cost(int col, const GenRef& g) {
    H(col, col) += 2.0 * g.c2;
    c(col) += g.c1;
  }
  void add_gen_bounds(int col, const GenRef& g) {
    Vector lo = Vector::Zero(n), hi = Vector::Zero(n);
    lo(col) = 1.0;
    hi(col) = -1.0;
    add_in(lo, g.p_min);
    add_in(hi, -g.p_max);
  }
  QpProblem build() const {
    QpProblem p;
    p.H = H;
    p.c = c;
    p.A_eq = Matrix::Zero(eq_rows.size(), n);
    p.b_eq = Vector::Zero(eq_rows.size());
    for (size_t i = 0; i < eq_rows.size(); ++i) {
      p.A_eq.row(i) = eq_rows[i].transpose();
      p.b_eq(i) = eq_rhs[i];
    }
    p.A_in = Matrix::Zero(in_rows.size(), n);
    p.b_in = Vector::Zero(in_rows.size());
    for (size_t i = 0; i < in_rows.size(); ++i) {
      p.A_in.row(i) = in_rows[i].transpose();
      p.b_in(i) = in_rhs[i];
    }
    return p;
  }
};

Matrix psd_projection(const Matrix& M) {
  Matrix S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  Vector ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

std::vector<GenRef> collect_gens(const ItdCase& c,
                                 const std::set<int>& buses,
                                 std::optional<Owner> boundary_owner) {
  std::vector<GenRef> out;
  for (size_t i = 0; i < c.generators.size(); ++i) {
    const Generator& g = c.generators[i];
    if (!buses.count(g.bus)) continue;
    if (c.bus(g.bus).subsystem == Subsystem::Boundary && boundary_owner &&
        g.owner != *boundary_owner)
      continue;
    out.push_back({static_cast<int>(i), g.bus, g.p_min, g.p_max, g.cost_c1,
                   g.cost_c2});
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// TDCED (shift factors)
// ---------------------------------------------------------------------------

struct TdcedProblem::Model {
  ItdCase c;
  EtaProvider eta;
  std::vector<int> boundary;  // global boundary order
  std::map<int, int> bpos;

  // T side
  std::vector<int> mb_ids;
  std::vector<GenRef> tgens;
  double load_T = 0.0;
  std::vector<Branch> t_limited;
  Matrix t_ptdf;        // over mb_ids
  Vector t_flow0;       // per limited branch
  int slack_bus = -1;

  struct Comp {
    std::vector<int> slave_ids;
    int bid;  // its boundary bus
    double load = 0.0;
    std::vector<Branch> limited;
    Matrix ptdf;        // over slave_ids (ref = bid, col not present)
    Vector flow0;
  };
  struct Dso {
    std::vector<int> bids;
    std::vector<GenRef> gens;      // slave + dso-owned boundary gens
    std::vector<Comp> comps;
    std::map<int, double> link_limit;  // boundary bus -> |P_BD| cap
    int nvars() const {
      return static_cast<int>(gens.size() + bids.size());
    }
    int pbd_col(int k) const { return static_cast<int>(gens.size()) + k; }
  };
  std::vector<Dso> dsos;

  int nb() const { return static_cast<int>(boundary.size()); }
  int tsp_nvars() const { return static_cast<int>(tgens.size()) + nb(); }
  int pbt_col(int k) const { return static_cast<int>(tgens.size()) + k; }
};

TdcedProblem::TdcedProblem(ItdCase c, EtaProvider eta)
    : m_(std::make_unique<Model>()) {
  Model& m = *m_;
  m.c = std::move(c);
  m.eta = eta;
  m.boundary = m.c.ids_of(Subsystem::Boundary);
  for (int i = 0; i < m.nb(); ++i) m.bpos[m.boundary[i]] = i;

  std::set<int> mb;
  for (const auto& b : m.c.buses)
    if (b.subsystem != Subsystem::Slave) {
      mb.insert(b.id);
      if (b.kind == BusKind::Slack) m.slack_bus = b.id;
      bool count_load = b.subsystem != Subsystem::Boundary ||
                        b.load_owner == Owner::Tso;
      if (count_load) m.load_T += b.p_load;
    }
  m.mb_ids.assign(mb.begin(), mb.end());
  m.tgens = collect_gens(m.c, mb, Owner::Tso);
  if (m.slack_bus < 0) throw ValidationError("no master slack bus");

  std::vector<Branch> t_branches;
  for (const auto& br : m.c.branches) {
    if (!br.in_service) continue;
    if (mb.count(br.from) && mb.count(br.to)) t_branches.push_back(br);
  }
  for (const auto& br : t_branches)
    if (br.flow_limit) m.t_limited.push_back(br);
  if (!m.t_limited.empty()) {
    m.t_ptdf = dc_ptdf(m.mb_ids, t_branches, m.slack_bus);
    // rows of t_ptdf cover every t branch; keep only the limited ones
    Matrix full = m.t_ptdf;
    m.t_ptdf = Matrix::Zero(m.t_limited.size(), m.mb_ids.size());
    int r = 0;
    for (size_t l = 0; l < t_branches.size(); ++l)
      if (t_branches[l].flow_limit) m.t_ptdf.row(r++) = full.row(l);
    m.t_flow0 = Vector::Zero(m.t_limited.size());
    for (size_t l = 0; l < m.t_limited.size(); ++l) {
      double f0 = 0.0;
      for (size_t k = 0; k < m.mb_ids.size(); ++k) {
        const Bus& b = m.c.bus(m.mb_ids[k]);
        bool count_load = b.subsystem != Subsystem::Boundary ||
                          b.load_owner == Owner::Tso;
        if (count_load) f0 -= m.t_ptdf(l, k) * b.p_load;
      }
      m.t_flow0(l) = f0;
    }
  }

  m.dsos.resize(m.c.num_dsos());
  for (int d = 0; d < m.c.num_dsos(); ++d) {
    Model::Dso& dso = m.dsos[d];
    dso.bids = m.c.boundary_ids_of_dso(d);
    std::set<int> gen_buses(dso.bids.begin(), dso.bids.end());
    for (int id : m.c.slave_ids_of_dso(d)) gen_buses.insert(id);
    dso.gens = collect_gens(m.c, gen_buses, Owner::Dso);

    for (const auto& comp : m.c.slave_components()) {
      if (comp.attached_boundary_ids.size() != 1)
        throw ValidationError(
            "dispatch models need one boundary bus per slave component");
      int bid = comp.attached_boundary_ids.front();
      if (m.c.dso_of_boundary(bid) != d) continue;
      Model::Comp mc;
      mc.slave_ids = comp.slave_ids;
      mc.bid = bid;
      for (int id : comp.slave_ids) mc.load += m.c.bus(id).p_load;
      const Bus& bb = m.c.bus(bid);
      if (bb.load_owner == Owner::Dso) mc.load += bb.p_load;

      std::vector<Branch> comp_branches;
      std::set<int> comp_set(comp.slave_ids.begin(), comp.slave_ids.end());
      int coupling_count = 0;
      for (const auto& br : m.c.branches) {
        if (!br.in_service) continue;
        bool f_in = comp_set.count(br.from), t_in = comp_set.count(br.to);
        if (f_in && t_in) comp_branches.push_back(br);
        if ((f_in && br.to == bid) || (t_in && br.from == bid)) {
          ++coupling_count;
          if (br.flow_limit) {
            auto it = dso.link_limit.find(bid);
            dso.link_limit[bid] =
                it == dso.link_limit.end() ? *br.flow_limit
                                           : it->second + *br.flow_limit;
          }
        }
      }
      // Several parallel coupling branches make the aggregate cap valid only
      // if all carry limits; drop it otherwise.
      if (coupling_count > 1) dso.link_limit.erase(bid);

      std::vector<Branch> limited;
      for (const auto& br : comp_branches)
        if (br.flow_limit) limited.push_back(br);
      if (!limited.empty()) {
        // Reference at the boundary: injections at slave buses flow to it.
        std::vector<int> scope = comp.slave_ids;
        scope.push_back(bid);
        std::vector<Branch> scoped = comp_branches;
        for (const auto& br : m.c.branches) {
          if (!br.in_service) continue;
          bool f_in = comp_set.count(br.from), t_in = comp_set.count(br.to);
          if ((f_in && br.to == bid) || (t_in && br.from == bid))
            scoped.push_back(br);
        }
        std::sort(scope.begin(), scope.end());
        Matrix full = dc_ptdf(scope, scoped, bid);
        mc.ptdf = Matrix::Zero(limited.size(), comp.slave_ids.size());
        mc.flow0 = Vector::Zero(limited.size());
        int r = 0;
        for (size_t l = 0; l < scoped.size(); ++l) {
          if (!scoped[l].flow_limit) continue;
          bool is_comp_internal =
              comp_set.count(scoped[l].from) && comp_set.count(scoped[l].to);
          if (!is_comp_internal) {
            continue;  // coupling-branch limits become the P_BD cap
          }
          mc.limited.push_back(scoped[l]);
          for (size_t k = 0; k < comp.slave_ids.size(); ++k) {
            auto it = std::find(scope.begin(), scope.end(), comp.slave_ids[k]);
            mc.ptdf(r, k) = full(l, it - scope.begin());
          }
          for (size_t k = 0; k < comp.slave_ids.size(); ++k)
            mc.flow0(r) -= mc.ptdf(r, k) * m.c.bus(comp.slave_ids[k]).p_load;
          ++r;
        }
        mc.ptdf.conservativeResize(r, Eigen::NoChange);
        mc.flow0.conservativeResize(r);
      }
      dso.comps.push_back(std::move(mc));
    }
  }
}

TdcedProblem::~TdcedProblem() = default;

int TdcedProblem::lambda_size() const { return m_->nb(); }
int TdcedProblem::f_bs_size() const { return m_->nb(); }
int TdcedProblem::num_dsos() const {
  return static_cast<int>(m_->dsos.size());
}

BoundaryState TdcedProblem::initial_state() const {
  BoundaryState xi;
  xi.x_B = Vector();
  double lambda0 = 0.0;
  bool found = false;
  for (const auto& g : m_->tgens)
    if (g.bus == m_->slack_bus) {
      lambda0 = g.c1;  // marginal cost of the slack unit, cheap warm start
      found = true;
      break;
    }
  if (!found && !m_->tgens.empty()) {
    for (const auto& g : m_->tgens) lambda0 += g.c1;
    lambda0 /= static_cast<double>(m_->tgens.size());
  }
  xi.lambda_MB = Vector::Constant(m_->nb(), lambda0);
  return xi;
}

QpProblem TdcedProblem::tsp_qp(const BoundaryResponse& y) const {
  const Model& m = *m_;
  QpBuilder b(m.tsp_nvars());
  for (size_t g = 0; g < m.tgens.size(); ++g) {
    b.add_gen_cost(static_cast<int>(g), m.tgens[g]);
    b.add_gen_bounds(static_cast<int>(g), m.tgens[g]);
  }
  // System balance: sum(P_T) - sum(P_BT) = L_T.
  Vector bal = Vector::Zero(b.n);
  for (size_t g = 0; g < m.tgens.size(); ++g) bal(g) = 1.0;
  for (int k = 0; k < m.nb(); ++k) bal(m.pbt_col(k)) = -1.0;
  b.add_eq(bal, m.load_T);
  // Coupling: P_BT_b = P_BD_b^sp, dual = boundary LMP.
  for (int k = 0; k < m.nb(); ++k) {
    Vector row = Vector::Zero(b.n);
    row(m.pbt_col(k)) = 1.0;
    b.add_eq(row, y.f_BS(k));
  }
  // Branch limits via shift factors.
  for (size_t l = 0; l < m.t_limited.size(); ++l) {
    Vector coef = Vector::Zero(b.n);
    for (size_t g = 0; g < m.tgens.size(); ++g) {
      auto it = std::find(m.mb_ids.begin(), m.mb_ids.end(), m.tgens[g].bus);
      coef(g) = m.t_ptdf(l, it - m.mb_ids.begin());
    }
    for (int k = 0; k < m.nb(); ++k) {
      auto it = std::find(m.mb_ids.begin(), m.mb_ids.end(), m.boundary[k]);
      coef(m.pbt_col(k)) = -m.t_ptdf(l, it - m.mb_ids.begin());
    }
    double lim = *m.t_limited[l].flow_limit;
    b.add_in(-coef, m.t_flow0(l) - lim);
    b.add_in(coef, -lim - m.t_flow0(l));
  }
  return b.build();
}

CoordinatedProblem::TspResult TdcedProblem::interpret_tsp(
    const BoundaryResponse&, const KktPoint& pt) const {
  TspResult res;
  res.xi.x_B = Vector();
  res.xi.lambda_MB = pt.lambda.segment(1, m_->nb());
  res.point = pt;
  return res;
}

QpProblem TdcedProblem::dsp_qp(const BoundaryState& xi, int dso) const {
  const Model& m = *m_;
  const Model::Dso& D = m.dsos[dso];
  QpBuilder b(D.nvars());
  for (size_t g = 0; g < D.gens.size(); ++g) {
    b.add_gen_cost(static_cast<int>(g), D.gens[g]);
    b.add_gen_bounds(static_cast<int>(g), D.gens[g]);
  }
  // Import priced at the boundary LMP.
  for (size_t k = 0; k < D.bids.size(); ++k)
    b.c(D.pbd_col(k)) += xi.lambda_MB(m.bpos.at(D.bids[k]));
  // Component balances.
  for (const auto& comp : D.comps) {
    Vector row = Vector::Zero(b.n);
    std::set<int> comp_set(comp.slave_ids.begin(), comp.slave_ids.end());
    for (size_t g = 0; g < D.gens.size(); ++g)
      if (comp_set.count(D.gens[g].bus) || D.gens[g].bus == comp.bid)
        row(g) = 1.0;
    auto it = std::find(D.bids.begin(), D.bids.end(), comp.bid);
    row(D.pbd_col(it - D.bids.begin())) = 1.0;
    b.add_eq(row, comp.load);
  }
  // Feeder branch limits.
  for (const auto& comp : D.comps) {
    for (Eigen::Index l = 0; l < comp.ptdf.rows(); ++l) {
      Vector coef = Vector::Zero(b.n);
      for (size_t g = 0; g < D.gens.size(); ++g) {
        auto it = std::find(comp.slave_ids.begin(), comp.slave_ids.end(),
                            D.gens[g].bus);
        if (it != comp.slave_ids.end())
          coef(g) = comp.ptdf(l, it - comp.slave_ids.begin());
      }
      double lim = *comp.limited[l].flow_limit;
      b.add_in(-coef, comp.flow0(l) - lim);
      b.add_in(coef, -lim - comp.flow0(l));
    }
  }
  // Interchange caps from the coupling branch rating.
  for (size_t k = 0; k < D.bids.size(); ++k) {
    auto it = D.link_limit.find(D.bids[k]);
    if (it == D.link_limit.end()) continue;
    Vector up = Vector::Zero(b.n), lo = Vector::Zero(b.n);
    up(D.pbd_col(k)) = -1.0;
    lo(D.pbd_col(k)) = 1.0;
    b.add_in(up, -it->second);
    b.add_in(lo, -it->second);
  }
  return b.build();
}

CoordinatedProblem::DspResult TdcedProblem::interpret_dsp(
    const BoundaryState&, const std::vector<KktPoint>& pts) const {
  const Model& m = *m_;
  DspResult res;
  res.y.f_BS = Vector::Zero(m.nb());
  res.y.l_BS = Vector();
  for (size_t d = 0; d < m.dsos.size(); ++d) {
    const Model::Dso& D = m.dsos[d];
    for (size_t k = 0; k < D.bids.size(); ++k)
      res.y.f_BS(m.bpos.at(D.bids[k])) = pts[d].z(D.pbd_col(k));
  }
  res.points = pts;
  return res;
}

Matrix TdcedProblem::eta_sensitivity(const BoundaryResponse& y) const {
  const Model& m = *m_;
  QpProblem qp = tsp_qp(y);
  KktPoint pt = solve_qp(qp);
  Matrix eta(m.nb(), m.nb());
  for (int k = 0; k < m.nb(); ++k) {
    Vector db_eq = Vector::Zero(qp.num_eq());
    db_eq(1 + k) = 1.0;
    KktSensitivity s = kkt_sensitivity(qp, pt, db_eq,
                                       Vector::Zero(qp.num_in()),
                                       Vector::Zero(qp.num_vars()));
    eta.col(k) = s.dlambda.segment(1, m.nb());
  }
  return psd_projection(eta);
}

namespace {
struct EtaCorrection : TransCorrection {
  Matrix eta;
};
}  // namespace

TransCorrectionPtr TdcedProblem::trans_correction(const HgdHistory& h) const {
  const Model& m = *m_;
  auto corr = std::make_shared<EtaCorrection>();
  corr->eta = Matrix::Zero(m.nb(), m.nb());
  if (h.ys.empty()) return corr;

  if (m.eta == EtaProvider::Sensitivity) {
    try {
      corr->eta = eta_sensitivity(h.ys.back());
      return corr;
    } catch (const Error&) {
      // degenerate active set: fall through to the secant fit
    }
  }
  // Secant over the last two (lambda, P_BD) pairs; zero for the first two
  // iterations.
  if (h.ys.size() >= 2 && h.xis.size() >= 3) {
    const Vector& l1 = h.xis[h.xis.size() - 1].lambda_MB;
    const Vector& l2 = h.xis[h.xis.size() - 2].lambda_MB;
    const Vector& p1 = h.ys[h.ys.size() - 2].f_BS;
    const Vector& p2 = h.ys.size() >= 3 ? h.ys[h.ys.size() - 3].f_BS
                                        : h.ys[h.ys.size() - 2].f_BS;
    for (int k = 0; k < m.nb(); ++k) {
      double dp = p1(k) - p2(k);
      double dl = l1(k) - l2(k);
      if (std::abs(dp) < 1e-12) continue;
      double e = dl / dp;
      corr->eta(k, k) = std::clamp(e, 0.0, 1e6);
    }
  }
  return corr;
}

CoordinatedProblem::DspResult TdcedProblem::solve_dsp_modified(
    const BoundaryState& xi, const TransCorrectionPtr& corr,
    const HgdHistory& h) const {
  const Model& m = *m_;
  auto eta_corr = std::dynamic_pointer_cast<const EtaCorrection>(corr);
  if (!eta_corr) throw Error("unexpected correction type for tdced");
  const Matrix& eta = eta_corr->eta;
  Vector p_prev = h.ys.empty() ? Vector::Zero(m.nb()) : h.ys.back().f_BS;

  std::vector<KktPoint> pts;
  for (size_t d = 0; d < m.dsos.size(); ++d) {
    const Model::Dso& D = m.dsos[d];
    QpProblem qp = dsp_qp(xi, static_cast<int>(d));
    for (size_t a = 0; a < D.bids.size(); ++a) {
      int ga = m.bpos.at(D.bids[a]);
      qp.c(D.pbd_col(a)) -= eta.row(ga).dot(p_prev);
      for (size_t bcol = 0; bcol < D.bids.size(); ++bcol)
        qp.H(D.pbd_col(a), D.pbd_col(bcol)) += eta(ga, m.bpos.at(D.bids[bcol]));
    }
    pts.push_back(solve_qp(qp));
  }
  return interpret_dsp(xi, pts);
}

QpProblem TdcedProblem::global_qp() const {
  const Model& m = *m_;
  // Layout: [T vars][dso0 vars][dso1 vars]...
  int n = m.tsp_nvars();
  std::vector<int> dso_off;
  for (const auto& D : m.dsos) {
    dso_off.push_back(n);
    n += D.nvars();
  }
  QpBuilder b(n);
  for (size_t g = 0; g < m.tgens.size(); ++g) {
    b.add_gen_cost(static_cast<int>(g), m.tgens[g]);
  }
  Vector bal = Vector::Zero(n);
  for (size_t g = 0; g < m.tgens.size(); ++g) bal(g) = 1.0;
  for (int k = 0; k < m.nb(); ++k) bal(m.pbt_col(k)) = -1.0;
  b.add_eq(bal, m.load_T);
  // Interchange consistency rows carry the boundary multiplier.
  for (int k = 0; k < m.nb(); ++k) {
    Vector row = Vector::Zero(n);
    row(m.pbt_col(k)) = 1.0;
    for (size_t d = 0; d < m.dsos.size(); ++d) {
      const Model::Dso& D = m.dsos[d];
      auto it = std::find(D.bids.begin(), D.bids.end(), m.boundary[k]);
      if (it != D.bids.end())
        row(dso_off[d] + D.pbd_col(it - D.bids.begin())) = -1.0;
    }
    b.add_eq(row, 0.0);
  }
  for (size_t d = 0; d < m.dsos.size(); ++d) {
    const Model::Dso& D = m.dsos[d];
    for (size_t g = 0; g < D.gens.size(); ++g)
      b.add_gen_cost(dso_off[d] + static_cast<int>(g), D.gens[g]);
    for (const auto& comp : D.comps) {
      Vector row = Vector::Zero(n);
      std::set<int> comp_set(comp.slave_ids.begin(), comp.slave_ids.end());
      for (size_t g = 0; g < D.gens.size(); ++g)
        if (comp_set.count(D.gens[g].bus) || D.gens[g].bus == comp.bid)
          row(dso_off[d] + g) = 1.0;
      auto it = std::find(D.bids.begin(), D.bids.end(), comp.bid);
      row(dso_off[d] + D.pbd_col(it - D.bids.begin())) = 1.0;
      b.add_eq(row, comp.load);
    }
  }
  // Inequalities in subproblem order: T first, then each DSO.
  for (size_t g = 0; g < m.tgens.size(); ++g)
    b.add_gen_bounds(static_cast<int>(g), m.tgens[g]);
  for (size_t l = 0; l < m.t_limited.size(); ++l) {
    Vector coef = Vector::Zero(n);
    for (size_t g = 0; g < m.tgens.size(); ++g) {
      auto it = std::find(m.mb_ids.begin(), m.mb_ids.end(), m.tgens[g].bus);
      coef(g) = m.t_ptdf(l, it - m.mb_ids.begin());
    }
    for (int k = 0; k < m.nb(); ++k) {
      auto it = std::find(m.mb_ids.begin(), m.mb_ids.end(), m.boundary[k]);
      coef(m.pbt_col(k)) = -m.t_ptdf(l, it - m.mb_ids.begin());
    }
    double lim = *m.t_limited[l].flow_limit;
    b.add_in(-coef, m.t_flow0(l) - lim);
    b.add_in(coef, -lim - m.t_flow0(l));
  }
  for (size_t d = 0; d < m.dsos.size(); ++d) {
    const Model::Dso& D = m.dsos[d];
    for (size_t g = 0; g < D.gens.size(); ++g)
      b.add_gen_bounds(dso_off[d] + static_cast<int>(g), D.gens[g]);
    for (const auto& comp : D.comps) {
      for (Eigen::Index l = 0; l < comp.ptdf.rows(); ++l) {
        Vector coef = Vector::Zero(n);
        for (size_t g = 0; g < D.gens.size(); ++g) {
          auto it = std::find(comp.slave_ids.begin(), comp.slave_ids.end(),
                              D.gens[g].bus);
          if (it != comp.slave_ids.end())
            coef(dso_off[d] + g) = comp.ptdf(l, it - comp.slave_ids.begin());
        }
        double lim = *comp.limited[l].flow_limit;
        b.add_in(-coef, comp.flow0(l) - lim);
        b.add_in(coef, -lim - comp.flow0(l));
      }
    }
    for (size_t k = 0; k < D.bids.size(); ++k) {
      auto it = D.link_limit.find(D.bids[k]);
      if (it == D.link_limit.end()) continue;
      Vector up = Vector::Zero(n), lo = Vector::Zero(n);
      up(dso_off[d] + D.pbd_col(k)) = -1.0;
      lo(dso_off[d] + D.pbd_col(k)) = 1.0;
      b.add_in(up, -it->second);
      b.add_in(lo, -it->second);
    }
  }
  return b.build();
}

KktPoint TdcedProblem::assemble_global(const TspResult& tsp,
                                       const DspResult& dsp) const {
  const Model& m = *m_;
  QpProblem g = global_qp();
  KktPoint pt;
  pt.z = Vector::Zero(g.num_vars());
  pt.lambda = Vector::Zero(g.num_eq());
  pt.omega = Vector::Zero(g.num_in());

  const KktPoint& T = tsp.point;
  pt.z.head(m.tsp_nvars()) = T.z;
  pt.lambda(0) = T.lambda(0);
  for (int k = 0; k < m.nb(); ++k) pt.lambda(1 + k) = T.lambda(1 + k);

  int zoff = m.tsp_nvars();
  int eq_off = 1 + m.nb();
  int in_off = static_cast<int>(m.tgens.size()) * 2 +
               static_cast<int>(m.t_limited.size()) * 2;
  // T-side inequality duals land in the same order.
  pt.omega.head(in_off) = T.omega;
  for (int i : T.active_set) pt.active_set.push_back(i);

  for (size_t d = 0; d < m.dsos.size(); ++d) {
    const Model::Dso& D = m.dsos[d];
    const KktPoint& S = dsp.points[d];
    pt.z.segment(zoff, D.nvars()) = S.z;
    pt.lambda.segment(eq_off, D.comps.size()) = S.lambda;
    pt.omega.segment(in_off, S.omega.size()) = S.omega;
    for (int i : S.active_set) pt.active_set.push_back(in_off + i);
    zoff += D.nvars();
    eq_off += static_cast<int>(D.comps.size());
    in_off += static_cast<int>(S.omega.size());
  }
  std::sort(pt.active_set.begin(), pt.active_set.end());
  return pt;
}

double TdcedProblem::global_kkt_residual(const TspResult& tsp,
                                         const DspResult& dsp) const {
  return kkt_residual(global_qp(), assemble_global(tsp, dsp));
}

DispatchSolution TdcedProblem::interpret_global(const KktPoint& pt) const {
  const Model& m = *m_;
  DispatchSolution sol;
  sol.gen_p =
      Vector::Constant(m.c.generators.size(),
                       std::numeric_limits<double>::quiet_NaN());
  for (size_t g = 0; g < m.tgens.size(); ++g)
    sol.gen_p(m.tgens[g].case_index) = pt.z(g);
  sol.p_bt.resize(m.nb());
  for (int k = 0; k < m.nb(); ++k) sol.p_bt(k) = pt.z(m.pbt_col(k));
  sol.p_bd = Vector::Zero(m.nb());
  int zoff = m.tsp_nvars();
  for (size_t d = 0; d < m.dsos.size(); ++d) {
    const Model::Dso& D = m.dsos[d];
    for (size_t g = 0; g < D.gens.size(); ++g)
      sol.gen_p(D.gens[g].case_index) = pt.z(zoff + g);
    for (size_t k = 0; k < D.bids.size(); ++k)
      sol.p_bd(m.bpos.at(D.bids[k])) = pt.z(zoff + D.pbd_col(k));
    zoff += D.nvars();
  }
  sol.lambda_mb = pt.lambda.segment(1, m.nb());
  sol.objective = global_qp().objective(pt.z);
  return sol;
}

LmpVector TdcedProblem::lmps_of(const KktPoint& pt) const {
  const Model& m = *m_;
  // Envelope formula: LMP_k = dObj/d(load_k) = lambda' d(b_eq)/d(load_k)
  //                                          + omega' d(b_in)/d(load_k).
  LmpVector lmp;
  lmp.boundary_ids = m.boundary;
  lmp.boundary_lambda = pt.lambda.segment(1, m.nb());

  for (const auto& bus : m.c.buses) {
    double price = 0.0;
    bool mb_side = bus.subsystem != Subsystem::Slave;
    if (mb_side) {
      price += pt.lambda(0);  // system balance rhs
      auto it = std::find(m.mb_ids.begin(), m.mb_ids.end(), bus.id);
      int k = static_cast<int>(it - m.mb_ids.begin());
      int in_off = static_cast<int>(m.tgens.size()) * 2;
      for (size_t l = 0; l < m.t_limited.size(); ++l) {
        price += pt.omega(in_off + 2 * l) * (-m.t_ptdf(l, k));
        price += pt.omega(in_off + 2 * l + 1) * (m.t_ptdf(l, k));
      }
    } else {
      int eq_off = 1 + m.nb();
      int in_off = static_cast<int>(m.tgens.size()) * 2 +
                   static_cast<int>(m.t_limited.size()) * 2;
      for (size_t d = 0; d < m.dsos.size(); ++d) {
        const Model::Dso& D = m.dsos[d];
        for (size_t ci = 0; ci < D.comps.size(); ++ci) {
          const auto& comp = D.comps[ci];
          auto it = std::find(comp.slave_ids.begin(), comp.slave_ids.end(),
                              bus.id);
          if (it != comp.slave_ids.end()) {
            price += pt.lambda(eq_off + ci);
            int k = static_cast<int>(it - comp.slave_ids.begin());
            int row = in_off + static_cast<int>(D.gens.size()) * 2;
            for (const auto& comp2 : D.comps) {
              if (&comp2 == &comp) {
                for (Eigen::Index l = 0; l < comp.ptdf.rows(); ++l) {
                  price += pt.omega(row + 2 * l) * (-comp.ptdf(l, k));
                  price += pt.omega(row + 2 * l + 1) * (comp.ptdf(l, k));
                }
              }
              row += 2 * static_cast<int>(comp2.ptdf.rows());
            }
          }
        }
        eq_off += static_cast<int>(D.comps.size());
        in_off += static_cast<int>(D.gens.size()) * 2;
        for (const auto& comp : D.comps)
          in_off += 2 * static_cast<int>(comp.ptdf.rows());
        in_off += 2 * static_cast<int>(D.link_limit.size());
      }
    }
    lmp.bus_ids.push_back(bus.id);
    lmp.price.conservativeResize(lmp.bus_ids.size());
    lmp.price(lmp.bus_ids.size() - 1) = price;
  }
  return lmp;
}

std::shared_ptr<TdcedProblem> build_tdced(const ItdCase& c, EtaProvider eta) {
  return std::make_shared<TdcedProblem>(c, eta);
}

DispatchRun run_tdced(const ItdCase& c, HgdVariant variant, HgdConfig cfg,
                      EtaProvider eta) {
  auto p = build_tdced(c, eta);
  cfg.variant = variant;
  HgdResult r = run_hgd(*p, cfg);
  if (!r.trace.converged)
    throw DivergenceError("tdced did not converge");
  DispatchRun out;
  KktPoint g = p->assemble_global(r.tsp, r.dsp);
  out.dispatch = p->interpret_global(g);
  out.lmps = p->lmps_of(g);
  out.trace = r.trace;
  return out;
}

DispatchRun solve_tdced_centralized(const ItdCase& c) {
  auto p = build_tdced(c);
  KktPoint g = solve_qp(p->global_qp());
  DispatchRun out;
  out.dispatch = p->interpret_global(g);
  out.lmps = p->lmps_of(g);
  return out;
}

// ---------------------------------------------------------------------------
// Angle-based DC OPF
// ---------------------------------------------------------------------------

struct TdopfDcProblem::Model {
  ItdCase c;
  std::vector<int> boundary;
  std::map<int, int> bpos;
  std::vector<int> master_ids;  // non-boundary master buses, sorted
  std::vector<int> mb_ids;      // master + boundary, sorted
  std::map<int, int> mb_pos;    // bus -> theta column (T-SP)
  std::vector<GenRef> tgens;
  std::vector<Branch> t_branches;
  std::vector<Branch> t_limited;
  int slack_bus = -1;

  struct Dso {
    std::vector<int> bids;
    std::vector<int> slave_ids;
    std::map<int, int> spos;  // bus -> theta column (D-SP)
    std::vector<GenRef> gens;
    std::vector<Branch> ss_branches;   // slave-slave
    std::vector<Branch> bs_branches;   // coupling
    std::vector<Branch> limited;       // with flow_limit, ss then bs
    int nvars() const {
      return static_cast<int>(slave_ids.size() + gens.size());
    }
    int gen_col(int g) const {
      return static_cast<int>(slave_ids.size()) + g;
    }
  };
  std::vector<Dso> dsos;

  int nb() const { return static_cast<int>(boundary.size()); }
  int tsp_nvars() const {
    return static_cast<int>(mb_ids.size() + tgens.size());
  }
  int tgen_col(int g) const { return static_cast<int>(mb_ids.size()) + g; }

  // Fixed DSO-side net injection at a boundary bus (load minus fixed gens).
  double dso_boundary_load(int bid) const {
    const Bus& b = c.bus(bid);
    double v = b.load_owner == Owner::Dso ? b.p_load : 0.0;
    for (const auto& g : c.generators)
      if (g.bus == bid && g.owner == Owner::Dso) v -= g.p;
    return v;
  }
  double tso_boundary_load(int bid) const {
    const Bus& b = c.bus(bid);
    return b.load_owner == Owner::Tso ? b.p_load : 0.0;
  }
};

TdopfDcProblem::TdopfDcProblem(ItdCase c) : m_(std::make_unique<Model>()) {
  Model& m = *m_;
  m.c = std::move(c);
  m.boundary = m.c.ids_of(Subsystem::Boundary);
  for (int i = 0; i < m.nb(); ++i) m.bpos[m.boundary[i]] = i;
  m.master_ids = m.c.ids_of(Subsystem::Master);

  std::set<int> mb(m.master_ids.begin(), m.master_ids.end());
  for (int b : m.boundary) mb.insert(b);
  m.mb_ids.assign(mb.begin(), mb.end());
  for (size_t i = 0; i < m.mb_ids.size(); ++i) m.mb_pos[m.mb_ids[i]] = i;
  for (int id : m.master_ids)
    if (m.c.bus(id).kind == BusKind::Slack) m.slack_bus = id;
  if (m.slack_bus < 0) throw ValidationError("no master slack bus");
  m.tgens = collect_gens(m.c, mb, Owner::Tso);

  for (const auto& br : m.c.branches) {
    if (!br.in_service) continue;
    if (mb.count(br.from) && mb.count(br.to)) {
      m.t_branches.push_back(br);
      if (br.flow_limit) m.t_limited.push_back(br);
    }
  }

  m.dsos.resize(m.c.num_dsos());
  for (int d = 0; d < m.c.num_dsos(); ++d) {
    Model::Dso& D = m.dsos[d];
    D.bids = m.c.boundary_ids_of_dso(d);
    D.slave_ids = m.c.slave_ids_of_dso(d);
    for (size_t i = 0; i < D.slave_ids.size(); ++i)
      D.spos[D.slave_ids[i]] = i;
    std::set<int> sset(D.slave_ids.begin(), D.slave_ids.end());
    D.gens = collect_gens(m.c, sset, std::nullopt);
    for (const auto& br : m.c.branches) {
      if (!br.in_service) continue;
      bool f_s = sset.count(br.from), t_s = sset.count(br.to);
      if (f_s && t_s) {
        D.ss_branches.push_back(br);
        if (br.flow_limit) D.limited.push_back(br);
      } else if (f_s || t_s) {
        int other = f_s ? br.to : br.from;
        if (std::find(D.bids.begin(), D.bids.end(), other) != D.bids.end()) {
          D.bs_branches.push_back(br);
          if (br.flow_limit) D.limited.push_back(br);
        }
      }
    }
  }
}

TdopfDcProblem::~TdopfDcProblem() = default;

int TdopfDcProblem::x_b_size() const { return m_->nb(); }
int TdopfDcProblem::lambda_size() const { return m_->nb(); }
int TdopfDcProblem::f_bs_size() const { return m_->nb(); }
int TdopfDcProblem::l_bs_size() const { return m_->nb(); }
int TdopfDcProblem::num_dsos() const {
  return static_cast<int>(m_->dsos.size());
}

BoundaryState TdopfDcProblem::initial_state() const {
  BoundaryState xi;
  xi.x_B = Vector::Zero(m_->nb());
  xi.lambda_MB = Vector::Zero(m_->nb());
  return xi;
}

QpProblem TdopfDcProblem::tsp_qp(const BoundaryResponse& y) const {
  const Model& m = *m_;
  QpBuilder b(m.tsp_nvars());
  for (size_t g = 0; g < m.tgens.size(); ++g) {
    b.add_gen_cost(m.tgen_col(g), m.tgens[g]);
    b.add_gen_bounds(m.tgen_col(g), m.tgens[g]);
  }
  // Price-response term of the heterogeneous exchange.
  for (int k = 0; k < m.nb(); ++k)
    b.c(m.mb_pos.at(m.boundary[k])) -= y.l_BS(k);

  // Reference angle.
  Vector slack = Vector::Zero(b.n);
  slack(m.mb_pos.at(m.slack_bus)) = 1.0;
  b.add_eq(slack, 0.0);
  // Master bus balances.
  for (int id : m.master_ids) {
    Vector row = Vector::Zero(b.n);
    for (const auto& br : m.t_branches) {
      if (br.from != id && br.to != id) continue;
      double bb = dc_susceptance(br);
      int i = m.mb_pos.at(id);
      int j = m.mb_pos.at(br.from == id ? br.to : br.from);
      row(i) -= bb;
      row(j) += bb;
    }
    for (size_t g = 0; g < m.tgens.size(); ++g)
      if (m.tgens[g].bus == id) row(m.tgen_col(g)) = 1.0;
    b.add_eq(row, m.c.bus(id).p_load);
  }
  // Coupling rows f_MB = f_BS^sp, dual lambda_MB.
  for (int k = 0; k < m.nb(); ++k) {
    int id = m.boundary[k];
    Vector row = Vector::Zero(b.n);
    for (const auto& br : m.t_branches) {
      if (br.from != id && br.to != id) continue;
      double bb = dc_susceptance(br);
      row(m.mb_pos.at(id)) -= bb;
      row(m.mb_pos.at(br.from == id ? br.to : br.from)) += bb;
    }
    for (size_t g = 0; g < m.tgens.size(); ++g)
      if (m.tgens[g].bus == id) row(m.tgen_col(g)) = 1.0;
    b.add_eq(row, m.tso_boundary_load(id) + y.f_BS(k));
  }
  // Master branch limits.
  for (const auto& br : m.t_limited) {
    Vector coef = Vector::Zero(b.n);
    double bb = dc_susceptance(br);
    coef(m.mb_pos.at(br.from)) = bb;
    coef(m.mb_pos.at(br.to)) = -bb;
    b.add_in(-coef, -*br.flow_limit);
    b.add_in(coef, -*br.flow_limit);
  }
  return b.build();
}

CoordinatedProblem::TspResult TdopfDcProblem::interpret_tsp(
    const BoundaryResponse&, const KktPoint& pt) const {
  const Model& m = *m_;
  TspResult res;
  res.xi.x_B.resize(m.nb());
  for (int k = 0; k < m.nb(); ++k)
    res.xi.x_B(k) = pt.z(m.mb_pos.at(m.boundary[k]));
  res.xi.lambda_MB =
      pt.lambda.segment(1 + m.master_ids.size(), m.nb());
  res.point = pt;
  return res;
}

QpProblem TdopfDcProblem::dsp_qp(const BoundaryState& xi, int dso) const {
  const Model& m = *m_;
  const Model::Dso& D = m.dsos[dso];
  QpBuilder b(D.nvars());
  for (size_t g = 0; g < D.gens.size(); ++g) {
    b.add_gen_cost(D.gen_col(g), D.gens[g]);
    b.add_gen_bounds(D.gen_col(g), D.gens[g]);
  }
  // lambda^sp-priced boundary power: the theta_S part of lambda' f_BS.
  for (const auto& br : D.bs_branches) {
    bool from_is_b = !D.spos.count(br.from);
    int bid = from_is_b ? br.from : br.to;
    int sid = from_is_b ? br.to : br.from;
    double bb = dc_susceptance(br);
    b.c(D.spos.at(sid)) -= xi.lambda_MB(m.bpos.at(bid)) * bb;
  }
  // Slave balances with the boundary angles pinned.
  for (size_t i = 0; i < D.slave_ids.size(); ++i) {
    int id = D.slave_ids[i];
    Vector row = Vector::Zero(b.n);
    double rhs = m.c.bus(id).p_load;
    for (const auto& br : D.ss_branches) {
      if (br.from != id && br.to != id) continue;
      double bb = dc_susceptance(br);
      row(D.spos.at(id)) -= bb;
      row(D.spos.at(br.from == id ? br.to : br.from)) += bb;
    }
    for (const auto& br : D.bs_branches) {
      bool mine = (br.from == id && !D.spos.count(br.to)) ||
                  (br.to == id && !D.spos.count(br.from));
      if (!mine) continue;
      int bid = D.spos.count(br.from) ? br.to : br.from;
      double bb = dc_susceptance(br);
      row(D.spos.at(id)) -= bb;
      rhs -= bb * xi.x_B(m.bpos.at(bid));
    }
    for (size_t g = 0; g < D.gens.size(); ++g)
      if (D.gens[g].bus == id) row(D.gen_col(g)) = 1.0;
    b.add_eq(row, rhs);
  }
  // Branch limits (slave-slave then coupling, as collected).
  for (const auto& br : D.limited) {
    double bb = dc_susceptance(br);
    bool from_slave = D.spos.count(br.from) > 0;
    bool to_slave = D.spos.count(br.to) > 0;
    Vector coef = Vector::Zero(b.n);
    double c0 = 0.0;
    if (from_slave) coef(D.spos.at(br.from)) += bb;
    else c0 += bb * xi.x_B(m.bpos.at(br.from));
    if (to_slave) coef(D.spos.at(br.to)) -= bb;
    else c0 -= bb * xi.x_B(m.bpos.at(br.to));
    b.add_in(-coef, c0 - *br.flow_limit);
    b.add_in(coef, -*br.flow_limit - c0);
  }
  return b.build();
}

CoordinatedProblem::DspResult TdopfDcProblem::interpret_dsp(
    const BoundaryState& xi, const std::vector<KktPoint>& pts) const {
  const Model& m = *m_;
  DspResult res;
  res.y.f_BS = Vector::Zero(m.nb());
  res.y.l_BS = Vector::Zero(m.nb());
  for (int k = 0; k < m.nb(); ++k)
    res.y.f_BS(k) = m.dso_boundary_load(m.boundary[k]);

  for (size_t d = 0; d < m.dsos.size(); ++d) {
    const Model::Dso& D = m.dsos[d];
    const KktPoint& pt = pts[d];
    // f_BS: coupling branch flows from the solved angles.
    for (const auto& br : D.bs_branches) {
      bool from_is_b = !D.spos.count(br.from);
      int bid = from_is_b ? br.from : br.to;
      int sid = from_is_b ? br.to : br.from;
      double bb = dc_susceptance(br);
      double flow = bb * (xi.x_B(m.bpos.at(bid)) - pt.z(D.spos.at(sid)));
      res.y.f_BS(m.bpos.at(bid)) += flow;
    }
    // l_BS: -(df_BS/dxB)' lambda^sp + (df_S/dxB)' lambda_S + (dg/dxB)' omega.
    for (const auto& br : D.bs_branches) {
      bool from_is_b = !D.spos.count(br.from);
      int bid = from_is_b ? br.from : br.to;
      int k = m.bpos.at(bid);
      double bb = dc_susceptance(br);
      res.y.l_BS(k) -= bb * xi.lambda_MB(k);
      int sid = from_is_b ? br.to : br.from;
      res.y.l_BS(k) += bb * pt.lambda(D.spos.at(sid));
    }
    int row = static_cast<int>(D.gens.size()) * 2;
    for (const auto& br : D.limited) {
      bool from_slave = D.spos.count(br.from) > 0;
      bool to_slave = D.spos.count(br.to) > 0;
      double bb = dc_susceptance(br);
      if (!from_slave || !to_slave) {
        int bid = from_slave ? br.to : br.from;
        int k = m.bpos.at(bid);
        double dflow_dxb = from_slave ? -bb : bb;
        // upper row: g = lim - flow; lower row: g = flow + lim
        res.y.l_BS(k) += pt.omega(row) * (-dflow_dxb);
        res.y.l_BS(k) += pt.omega(row + 1) * (dflow_dxb);
      }
      row += 2;
    }
  }
  res.points = pts;
  return res;
}

namespace {

// Affine distribution response for QP instances, finite-differenced around
// the previous iterate. Only the x_B block of the derivative is usable in
// the corrected T-SP, so the multiplier columns are zeroed.
struct QpDistCorrection : DistCorrection {
  Vector x_ref;       // x_B at expansion
  Vector y0;          // response value there
  Matrix J;           // d(stacked y)/d(x_B)
  Vector lambda_prev;
  int nf = 0;
  Vector value(const BoundaryState& xi) const override {
    return y0 + J * (xi.x_B - x_ref);
  }
};

}  // namespace

DistCorrectionPtr TdopfDcProblem::dist_correction(const BoundaryState& xi_prev,
                                                  const DspResult& at) const {
  auto corr = std::make_shared<QpDistCorrection>();
  corr->x_ref = xi_prev.x_B;
  corr->y0 = at.y.stacked();
  corr->lambda_prev = xi_prev.lambda_MB;
  corr->nf = f_bs_size();
  const int nx = x_b_size();
  corr->J = Matrix::Zero(corr->y0.size(), nx);
  const double h = 1e-6;
  for (int j = 0; j < nx; ++j) {
    BoundaryState p = xi_prev, q = xi_prev;
    p.x_B(j) += h;
    q.x_B(j) -= h;
    corr->J.col(j) =
        (solve_dsp(p).y.stacked() - solve_dsp(q).y.stacked()) / (2 * h);
  }
  // a_f-only correction: an l-response would need a symmetric potential in
  // the T-SP objective, which convexity rarely admits here. Zeroing it keeps
  // the fixed point exact.
  corr->y0.tail(corr->y0.size() - corr->nf).setZero();
  corr->J.bottomRows(corr->J.rows() - corr->nf).setZero();
  return corr;
}

CoordinatedProblem::TspResult TdopfDcProblem::solve_tsp_modified(
    const BoundaryResponse& y_corr, const DistCorrectionPtr& corr) const {
  const Model& m = *m_;
  auto qc = std::dynamic_pointer_cast<const QpDistCorrection>(corr);
  if (!qc) throw Error("unexpected correction type for tdopf");

  QpProblem qp = tsp_qp(y_corr);
  // a_f(x_B) = a0_f + A_f x_B.
  Matrix A_f = qc->J.topRows(qc->nf);
  Vector a0_f = (qc->y0 - qc->J * qc->x_ref).head(qc->nf);

  std::vector<int> xb_cols;
  for (int k = 0; k < m.nb(); ++k)
    xb_cols.push_back(m.mb_pos.at(m.boundary[k]));
  int coup0 = 1 + static_cast<int>(m.master_ids.size());

  // Constraint becomes f_MB(z) - a_f(x_B) = f'_BS; the objective gains
  // -(lambda_prev)' a_f(x_B), which restores the plain KKT point at the
  // fixed point.
  for (int r = 0; r < qc->nf; ++r) {
    for (int j = 0; j < m.nb(); ++j)
      qp.A_eq(coup0 + r, xb_cols[j]) -= A_f(r, j);
    qp.b_eq(coup0 + r) += a0_f(r);
  }
  for (int j = 0; j < m.nb(); ++j)
    qp.c(xb_cols[j]) -= A_f.col(j).dot(qc->lambda_prev);

  return interpret_tsp(y_corr, solve_qp(qp));
}

QpProblem TdopfDcProblem::global_qp() const {
  const Model& m = *m_;
  std::vector<int> all_ids;
  for (const auto& b : m.c.buses) all_ids.push_back(b.id);
  std::sort(all_ids.begin(), all_ids.end());
  std::map<int, int> apos;
  for (size_t i = 0; i < all_ids.size(); ++i) apos[all_ids[i]] = i;

  int n = static_cast<int>(all_ids.size() + m.tgens.size());
  std::vector<int> dso_gen_off;
  for (const auto& D : m.dsos) {
    dso_gen_off.push_back(n);
    n += static_cast<int>(D.gens.size());
  }
  QpBuilder b(n);
  int tg0 = static_cast<int>(all_ids.size());
  for (size_t g = 0; g < m.tgens.size(); ++g)
    b.add_gen_cost(tg0 + g, m.tgens[g]);
  for (size_t d = 0; d < m.dsos.size(); ++d)
    for (size_t g = 0; g < m.dsos[d].gens.size(); ++g)
      b.add_gen_cost(dso_gen_off[d] + g, m.dsos[d].gens[g]);

  auto add_balance_row = [&](int id, double extra_load) {
    Vector row = Vector::Zero(n);
    double rhs = m.c.bus(id).p_load + extra_load;
    for (const auto& br : m.c.branches) {
      if (!br.in_service) continue;
      if (br.from != id && br.to != id) continue;
      double bb = dc_susceptance(br);
      row(apos.at(id)) -= bb;
      row(apos.at(br.from == id ? br.to : br.from)) += bb;
    }
    for (size_t g = 0; g < m.tgens.size(); ++g)
      if (m.tgens[g].bus == id) row(tg0 + g) = 1.0;
    for (size_t d = 0; d < m.dsos.size(); ++d)
      for (size_t g = 0; g < m.dsos[d].gens.size(); ++g)
        if (m.dsos[d].gens[g].bus == id) row(dso_gen_off[d] + g) = 1.0;
    b.add_eq(row, rhs);
  };

  Vector slack = Vector::Zero(n);
  slack(apos.at(m.slack_bus)) = 1.0;
  b.add_eq(slack, 0.0);
  for (int id : m.master_ids) add_balance_row(id, 0.0);
  for (int k = 0; k < m.nb(); ++k) {
    int id = m.boundary[k];
    // Whole-bus balance f_MB - f_BS = 0: fixed DSO-side generation enters
    // through dso_boundary_load, and the local load is counted once.
    const Bus& bus = m.c.bus(id);
    double extra = m.dso_boundary_load(id);
    if (bus.load_owner == Owner::Dso) extra -= bus.p_load;
    add_balance_row(id, extra);
  }
  for (const auto& D : m.dsos)
    for (int id : D.slave_ids) add_balance_row(id, 0.0);

  // Inequalities: T gens, T branches, then per dso gens + branches.
  for (size_t g = 0; g < m.tgens.size(); ++g)
    b.add_gen_bounds(tg0 + g, m.tgens[g]);
  for (const auto& br : m.t_limited) {
    Vector coef = Vector::Zero(n);
    double bb = dc_susceptance(br);
    coef(apos.at(br.from)) = bb;
    coef(apos.at(br.to)) = -bb;
    b.add_in(-coef, -*br.flow_limit);
    b.add_in(coef, -*br.flow_limit);
  }
  for (size_t d = 0; d < m.dsos.size(); ++d) {
    const Model::Dso& D = m.dsos[d];
    for (size_t g = 0; g < D.gens.size(); ++g)
      b.add_gen_bounds(dso_gen_off[d] + g, D.gens[g]);
    for (const auto& br : D.limited) {
      Vector coef = Vector::Zero(n);
      double bb = dc_susceptance(br);
      coef(apos.at(br.from)) = bb;
      coef(apos.at(br.to)) = -bb;
      b.add_in(-coef, -*br.flow_limit);
      b.add_in(coef, -*br.flow_limit);
    }
  }
  return b.build();
}

KktPoint TdopfDcProblem::assemble_global(const TspResult& tsp,
                                         const DspResult& dsp) const {
  const Model& m = *m_;
  QpProblem g = global_qp();
  std::vector<int> all_ids;
  for (const auto& bus : m.c.buses) all_ids.push_back(bus.id);
  std::sort(all_ids.begin(), all_ids.end());
  std::map<int, int> apos;
  for (size_t i = 0; i < all_ids.size(); ++i) apos[all_ids[i]] = i;

  KktPoint pt;
  pt.z = Vector::Zero(g.num_vars());
  pt.lambda = Vector::Zero(g.num_eq());
  pt.omega = Vector::Zero(g.num_in());

  const KktPoint& T = tsp.point;
  int tg0 = static_cast<int>(all_ids.size());
  for (size_t i = 0; i < m.mb_ids.size(); ++i)
    pt.z(apos.at(m.mb_ids[i])) = T.z(i);
  for (size_t gidx = 0; gidx < m.tgens.size(); ++gidx)
    pt.z(tg0 + gidx) = T.z(m.tgen_col(gidx));

  const int nM = static_cast<int>(m.master_ids.size());
  pt.lambda(0) = T.lambda(0);
  for (int i = 0; i < nM; ++i) pt.lambda(1 + i) = T.lambda(1 + i);
  for (int k = 0; k < m.nb(); ++k)
    pt.lambda(1 + nM + k) = T.lambda(1 + nM + k);

  int in_off = static_cast<int>(m.tgens.size()) * 2 +
               static_cast<int>(m.t_limited.size()) * 2;
  pt.omega.head(in_off) = T.omega;
  for (int i : T.active_set) pt.active_set.push_back(i);

  int eq_off = 1 + nM + m.nb();
  int zoff = tg0 + static_cast<int>(m.tgens.size());
  for (size_t d = 0; d < m.dsos.size(); ++d) {
    const Model::Dso& D = m.dsos[d];
    const KktPoint& S = dsp.points[d];
    for (size_t i = 0; i < D.slave_ids.size(); ++i)
      pt.z(apos.at(D.slave_ids[i])) = S.z(i);
    for (size_t gidx = 0; gidx < D.gens.size(); ++gidx)
      pt.z(zoff + gidx) = S.z(D.gen_col(gidx));
    pt.lambda.segment(eq_off, D.slave_ids.size()) = S.lambda;
    pt.omega.segment(in_off, S.omega.size()) = S.omega;
    for (int i : S.active_set) pt.active_set.push_back(in_off + i);
    zoff += static_cast<int>(D.gens.size());
    eq_off += static_cast<int>(D.slave_ids.size());
    in_off += static_cast<int>(S.omega.size());
  }
  std::sort(pt.active_set.begin(), pt.active_set.end());
  return pt;
}

double TdopfDcProblem::global_kkt_residual(const TspResult& tsp,
                                           const DspResult& dsp) const {
  return kkt_residual(global_qp(), assemble_global(tsp, dsp));
}

DispatchSolution TdopfDcProblem::interpret_global(const KktPoint& pt) const {
  const Model& m = *m_;
  std::vector<int> all_ids;
  for (const auto& bus : m.c.buses) all_ids.push_back(bus.id);
  std::sort(all_ids.begin(), all_ids.end());
  std::map<int, int> apos;
  for (size_t i = 0; i < all_ids.size(); ++i) apos[all_ids[i]] = i;

  DispatchSolution sol;
  sol.gen_p = Vector::Constant(m.c.generators.size(),
                               std::numeric_limits<double>::quiet_NaN());
  int tg0 = static_cast<int>(all_ids.size());
  for (size_t g = 0; g < m.tgens.size(); ++g)
    sol.gen_p(m.tgens[g].case_index) = pt.z(tg0 + g);
  int zoff = tg0 + static_cast<int>(m.tgens.size());
  for (const auto& D : m.dsos) {
    for (size_t g = 0; g < D.gens.size(); ++g)
      sol.gen_p(D.gens[g].case_index) = pt.z(zoff + g);
    zoff += static_cast<int>(D.gens.size());
  }
  // Interchange from the coupling-branch flows at the solved angles.
  sol.p_bd = Vector::Zero(m.nb());
  for (int k = 0; k < m.nb(); ++k) {
    int id = m.boundary[k];
    double f = m.dso_boundary_load(id);
    for (const auto& D : m.dsos)
      for (const auto& br : D.bs_branches) {
        bool from_is_b = br.from == id, to_is_b = br.to == id;
        if (!from_is_b && !to_is_b) continue;
        int sid = from_is_b ? br.to : br.from;
        double bb = dc_susceptance(br);
        f += bb * (pt.z(apos.at(id)) - pt.z(apos.at(sid)));
      }
    sol.p_bd(k) = f;
  }
  sol.p_bt = sol.p_bd;
  const int nM = static_cast<int>(m.master_ids.size());
  sol.lambda_mb = pt.lambda.segment(1 + nM, m.nb());
  sol.objective = global_qp().objective(pt.z);
  return sol;
}

LmpVector TdopfDcProblem::lmps_of(const KktPoint& pt) const {
  const Model& m = *m_;
  LmpVector lmp;
  lmp.boundary_ids = m.boundary;
  const int nM = static_cast<int>(m.master_ids.size());
  lmp.boundary_lambda = pt.lambda.segment(1 + nM, m.nb());
  int eq_off = 1 + nM + m.nb();
  std::map<int, double> price;
  for (int i = 0; i < nM; ++i) price[m.master_ids[i]] = pt.lambda(1 + i);
  for (int k = 0; k < m.nb(); ++k)
    price[m.boundary[k]] = pt.lambda(1 + nM + k);
  for (const auto& D : m.dsos) {
    for (size_t i = 0; i < D.slave_ids.size(); ++i)
      price[D.slave_ids[i]] = pt.lambda(eq_off + i);
    eq_off += static_cast<int>(D.slave_ids.size());
  }
  for (const auto& [bus, p] : price) {
    lmp.bus_ids.push_back(bus);
    lmp.price.conservativeResize(lmp.bus_ids.size());
    lmp.price(lmp.bus_ids.size() - 1) = p;
  }
  return lmp;
}

std::shared_ptr<TdopfDcProblem> build_tdopf_dc(const ItdCase& c) {
  return std::make_shared<TdopfDcProblem>(c);
}

DispatchRun run_tdopf_dc(const ItdCase& c, HgdVariant variant, HgdConfig cfg) {
  auto p = build_tdopf_dc(c);
  cfg.variant = variant;
  HgdResult r = run_hgd(*p, cfg);
  if (!r.trace.converged)
    throw DivergenceError("tdopf-dc did not converge");
  DispatchRun out;
  KktPoint g = p->assemble_global(r.tsp, r.dsp);
  out.dispatch = p->interpret_global(g);
  out.lmps = p->lmps_of(g);
  out.trace = r.trace;
  // Record the exchanged response in p_bd/lambda for callers.
  out.dispatch.lambda_mb = r.xi.lambda_MB;
  return out;
}

DispatchRun solve_tdopf_dc_centralized(const ItdCase& c) {
  auto p = build_tdopf_dc(c);
  KktPoint g = solve_qp(p->global_qp());
  DispatchRun out;
  out.dispatch = p->interpret_global(g);
  out.lmps = p->lmps_of(g);
  return out;
}

// ---------------------------------------------------------------------------
// TDSE (linear measurement model)
// ---------------------------------------------------------------------------

struct TdseProblem::Model {
  ItdCase c;
  std::vector<int> state_ids;  // non-slack buses, ascending
  std::map<int, int> spos;     // bus -> state column
  std::vector<int> xm_ids, xb_ids, xs_ids;
  std::map<int, int> xm_pos, xb_pos, xs_pos;  // bus -> partition-local col

  struct Row {
    int case_index;
    double z, w;
    Vector coef;      // over full state
    int category;     // 0 = ZM, 1 = ZB, 2 = ZS
    Vector coef_mb;   // ZB only: master-side share
    Vector coef_bs;   // ZB only: slave-side share
    int dso = -1;     // ZB/ZS rows
  };
  std::vector<Row> rows;
  std::vector<int> zm, zb, zs;  // row indices by category

  int n_state() const { return static_cast<int>(state_ids.size()); }
  int nm() const { return static_cast<int>(xm_ids.size()); }
  int nb() const { return static_cast<int>(xb_ids.size()); }
  int nzb() const { return static_cast<int>(zb.size()); }

  // T-SP layout: [x_M; nu_B; x_B]
  int tsp_nvars() const { return nm() + nzb() + nb(); }
  int nu_col(int r) const { return nm() + r; }
  int xb_col(int k) const { return nm() + nzb() + k; }

  std::vector<int> dso_of_slave;  // per slave bus in xs order
  std::vector<std::vector<int>> dso_states;  // slave state cols per dso
  std::vector<std::vector<int>> dso_zs, dso_zb;
};

TdseProblem::TdseProblem(ItdCase c) : m_(std::make_unique<Model>()) {
  Model& m = *m_;
  m.c = std::move(c);
  if (m.c.measurements.empty())
    throw ValidationError("state estimation needs a measurement set");

  for (const auto& b : m.c.buses) {
    if (b.kind == BusKind::Slack) continue;
    m.state_ids.push_back(b.id);
  }
  std::sort(m.state_ids.begin(), m.state_ids.end());
  for (size_t i = 0; i < m.state_ids.size(); ++i)
    m.spos[m.state_ids[i]] = static_cast<int>(i);
  for (int id : m.state_ids) {
    switch (m.c.bus(id).subsystem) {
      case Subsystem::Master:
        m.xm_pos[id] = static_cast<int>(m.xm_ids.size());
        m.xm_ids.push_back(id);
        break;
      case Subsystem::Boundary:
        m.xb_pos[id] = static_cast<int>(m.xb_ids.size());
        m.xb_ids.push_back(id);
        break;
      case Subsystem::Slave:
        m.xs_pos[id] = static_cast<int>(m.xs_ids.size());
        m.xs_ids.push_back(id);
        break;
    }
  }

  auto add_term = [&](Vector& coef, int bus, double v) {
    if (m.spos.count(bus)) coef(m.spos.at(bus)) += v;
  };
  auto slave_side = [&](const Branch& br) {
    return m.c.bus(br.from).subsystem == Subsystem::Slave ||
           m.c.bus(br.to).subsystem == Subsystem::Slave;
  };
  auto dso_of_branch = [&](const Branch& br) {
    int sid = m.c.bus(br.from).subsystem == Subsystem::Slave ? br.from : br.to;
    for (int d = 0; d < m.c.num_dsos(); ++d) {
      auto ids = m.c.slave_ids_of_dso(d);
      if (std::binary_search(ids.begin(), ids.end(), sid)) return d;
    }
    return 0;
  };

  for (size_t mi = 0; mi < m.c.measurements.size(); ++mi) {
    const Measurement& meas = m.c.measurements[mi];
    Model::Row row;
    row.case_index = static_cast<int>(mi);
    row.z = meas.value;
    row.w = 1.0 / (meas.sigma * meas.sigma);
    row.coef = Vector::Zero(m.n_state());
    Vector coef_m = Vector::Zero(m.n_state());
    Vector coef_s = Vector::Zero(m.n_state());
    bool touches_master = false, touches_slave = false;
    int dso = -1;

    auto add_flow = [&](const Branch& br, double sign) {
      double bb = dc_susceptance(br);
      Vector& side = slave_side(br) ? coef_s : coef_m;
      add_term(side, br.from, sign * bb);
      add_term(side, br.to, -sign * bb);
      Subsystem sf = m.c.bus(br.from).subsystem;
      Subsystem st = m.c.bus(br.to).subsystem;
      if (sf == Subsystem::Master || st == Subsystem::Master)
        touches_master = true;
      if (slave_side(br)) {
        touches_slave = true;
        dso = dso_of_branch(br);
      }
    };

    switch (meas.kind) {
      case MeasurementKind::Angle: {
        const Bus& bus = m.c.bus(meas.target);
        Vector& side =
            bus.subsystem == Subsystem::Slave ? coef_s : coef_m;
        add_term(side, meas.target, 1.0);
        touches_master = bus.subsystem == Subsystem::Master;
        touches_slave = bus.subsystem == Subsystem::Slave;
        if (touches_slave) {
          for (int d = 0; d < m.c.num_dsos(); ++d) {
            auto ids = m.c.slave_ids_of_dso(d);
            if (std::binary_search(ids.begin(), ids.end(), meas.target))
              dso = d;
          }
        }
        break;
      }
      case MeasurementKind::Flow: {
        const Branch& br = m.c.branch(meas.target);
        if (!br.in_service)
          throw ValidationError("flow measurement on out-of-service branch " +
                                std::to_string(br.id));
        add_flow(br, 1.0);
        break;
      }
      case MeasurementKind::Injection: {
        for (const auto& br : m.c.branches) {
          if (!br.in_service) continue;
          if (br.from == meas.target) add_flow(br, 1.0);
          else if (br.to == meas.target) add_flow(br, -1.0);
        }
        break;
      }
    }

    row.coef = coef_m + coef_s;
    if (touches_master && touches_slave) {
      row.category = 1;
      row.coef_mb = coef_m;
      row.coef_bs = coef_s;
      row.dso = dso;
      m.zb.push_back(static_cast<int>(m.rows.size()));
    } else if (touches_slave) {
      row.category = 2;
      row.dso = dso;
      m.zs.push_back(static_cast<int>(m.rows.size()));
    } else {
      row.category = 0;
      m.zm.push_back(static_cast<int>(m.rows.size()));
    }
    m.rows.push_back(std::move(row));
  }

  const int ndso = m.c.num_dsos();
  m.dso_states.resize(ndso);
  m.dso_zs.resize(ndso);
  m.dso_zb.resize(ndso);
  for (int d = 0; d < ndso; ++d)
    for (int id : m.c.slave_ids_of_dso(d))
      if (m.spos.count(id)) m.dso_states[d].push_back(m.spos.at(id));
  for (int r : m.zs) m.dso_zs[m.rows[r].dso].push_back(r);
  for (int r : m.zb) m.dso_zb[m.rows[r].dso].push_back(r);

  // Observability of the subsystem normal equations.
  {
    Matrix HM(m.zm.size() + m.zb.size(), m.nm() + m.nb());
    int r = 0;
    auto fill = [&](int row_idx, const Vector& coef) {
      for (int i = 0; i < m.nm(); ++i)
        HM(row_idx, i) = coef(m.spos.at(m.xm_ids[i]));
      for (int k = 0; k < m.nb(); ++k)
        HM(row_idx, m.nm() + k) = coef(m.spos.at(m.xb_ids[k]));
    };
    for (int i : m.zm) fill(r++, m.rows[i].coef);
    for (int i : m.zb) fill(r++, m.rows[i].coef_mb);
    Eigen::FullPivLU<Matrix> lu(HM);
    lu.setThreshold(1e-9);
    if (lu.rank() < m.nm() + m.nb())
      throw Error("master subsystem unobservable (rank " +
                  std::to_string(lu.rank()) + " of " +
                  std::to_string(m.nm() + m.nb()) + ")");
  }
  for (int d = 0; d < ndso; ++d) {
    const auto& cols = m.dso_states[d];
    Matrix HS(m.dso_zs[d].size(), cols.size());
    for (size_t r = 0; r < m.dso_zs[d].size(); ++r)
      for (size_t j = 0; j < cols.size(); ++j)
        HS(r, j) = m.rows[m.dso_zs[d][r]].coef(cols[j]);
    Eigen::FullPivLU<Matrix> lu(HS);
    lu.setThreshold(1e-9);
    if (lu.rank() < static_cast<Eigen::Index>(cols.size()))
      throw Error("slave subsystem of DSO " + std::to_string(d) +
                  " unobservable");
  }
}

TdseProblem::~TdseProblem() = default;

int TdseProblem::x_b_size() const { return m_->nb(); }
int TdseProblem::lambda_size() const { return m_->nzb(); }
int TdseProblem::f_bs_size() const { return m_->nzb(); }
int TdseProblem::l_bs_size() const { return m_->nb(); }
int TdseProblem::num_dsos() const { return m_->c.num_dsos(); }

BoundaryState TdseProblem::initial_state() const {
  BoundaryState xi;
  xi.x_B = Vector::Zero(m_->nb());
  xi.lambda_MB = Vector::Zero(m_->nzb());
  return xi;
}

const std::vector<int>& TdseProblem::state_ids() const {
  return m_->state_ids;
}

QpProblem TdseProblem::tsp_qp(const BoundaryResponse& y) const {
  const Model& m = *m_;
  QpBuilder b(m.tsp_nvars());

  auto u_cols = [&](const Vector& coef, Vector& row) {
    for (int i = 0; i < m.nm(); ++i) row(i) = coef(m.spos.at(m.xm_ids[i]));
    for (int k = 0; k < m.nb(); ++k)
      row(m.xb_col(k)) = coef(m.spos.at(m.xb_ids[k]));
  };

  // Master WLS terms.
  for (int i : m.zm) {
    Vector h = Vector::Zero(b.n);
    u_cols(m.rows[i].coef, h);
    b.H += 2.0 * m.rows[i].w * h * h.transpose();
    b.c += -2.0 * m.rows[i].w * m.rows[i].z * h;
  }
  // Boundary residual variables.
  for (int r = 0; r < m.nzb(); ++r) {
    int row = m.zb[r];
    b.H(m.nu_col(r), m.nu_col(r)) += 2.0 * m.rows[row].w;
  }
  // Price-response term.
  for (int k = 0; k < m.nb(); ++k) b.c(m.xb_col(k)) -= y.l_BS(k);

  // Coupling rows: nu_r + h_MB,r(u) = Z_r + f_BS^sp,r.
  for (int r = 0; r < m.nzb(); ++r) {
    int row_idx = m.zb[r];
    Vector row = Vector::Zero(b.n);
    row(m.nu_col(r)) = 1.0;
    Vector mb_part = Vector::Zero(b.n);
    u_cols(m.rows[row_idx].coef_mb, mb_part);
    row += mb_part;
    b.add_eq(row, m.rows[row_idx].z + y.f_BS(r));
  }
  return b.build();
}

CoordinatedProblem::TspResult TdseProblem::interpret_tsp(
    const BoundaryResponse&, const KktPoint& pt) const {
  const Model& m = *m_;
  TspResult res;
  res.xi.x_B.resize(m.nb());
  for (int k = 0; k < m.nb(); ++k) res.xi.x_B(k) = pt.z(m.xb_col(k));
  res.xi.lambda_MB = pt.lambda;
  res.point = pt;
  return res;
}

QpProblem TdseProblem::dsp_qp(const BoundaryState& xi, int dso) const {
  const Model& m = *m_;
  const auto& cols = m.dso_states[dso];
  QpBuilder b(static_cast<int>(cols.size()));

  auto local = [&](const Vector& coef) {
    Vector v = Vector::Zero(b.n);
    for (size_t j = 0; j < cols.size(); ++j) v(j) = coef(cols[j]);
    return v;
  };
  auto xb_val = [&](const Vector& coef) {
    double v = 0.0;
    for (int k = 0; k < m.nb(); ++k)
      v += coef(m.spos.at(m.xb_ids[k])) * xi.x_B(k);
    return v;
  };

  for (int i : m.dso_zs[dso]) {
    const Model::Row& row = m.rows[i];
    Vector h = local(row.coef);
    double z_eff = row.z - xb_val(row.coef);
    b.H += 2.0 * row.w * h * h.transpose();
    b.c += -2.0 * row.w * z_eff * h;
  }
  // lambda' f_BS with f_BS = -h_BS: the x_S part.
  for (size_t r = 0; r < m.dso_zb[dso].size(); ++r) {
    int row_idx = m.dso_zb[dso][r];
    auto it = std::find(m.zb.begin(), m.zb.end(), row_idx);
    int global_r = static_cast<int>(it - m.zb.begin());
    b.c += -xi.lambda_MB(global_r) * local(m.rows[row_idx].coef_bs);
  }
  return b.build();
}

CoordinatedProblem::DspResult TdseProblem::interpret_dsp(
    const BoundaryState& xi, const std::vector<KktPoint>& pts) const {
  const Model& m = *m_;
  DspResult res;
  res.y.f_BS = Vector::Zero(m.nzb());
  res.y.l_BS = Vector::Zero(m.nb());

  for (int d = 0; d < num_dsos(); ++d) {
    const auto& cols = m.dso_states[d];
    const Vector& xs = pts[d].z;
    auto eval_state = [&](const Vector& coef) {
      double v = 0.0;
      for (size_t j = 0; j < cols.size(); ++j) v += coef(cols[j]) * xs(j);
      for (int k = 0; k < m.nb(); ++k)
        v += coef(m.spos.at(m.xb_ids[k])) * xi.x_B(k);
      return v;
    };

    // f_BS rows: -h_BS.
    for (int row_idx : m.dso_zb[d]) {
      auto it = std::find(m.zb.begin(), m.zb.end(), row_idx);
      int r = static_cast<int>(it - m.zb.begin());
      res.y.f_BS(r) = -eval_state(m.rows[row_idx].coef_bs);
    }
    // l_BS = 2 H_S,B' W (Z_S - h_S) + H_BS,B' lambda^sp.
    for (int row_idx : m.dso_zs[d]) {
      const Model::Row& row = m.rows[row_idx];
      double resid = row.z - eval_state(row.coef);
      for (int k = 0; k < m.nb(); ++k)
        res.y.l_BS(k) += 2.0 * row.w * resid * row.coef(m.spos.at(m.xb_ids[k]));
    }
    for (int row_idx : m.dso_zb[d]) {
      auto it = std::find(m.zb.begin(), m.zb.end(), row_idx);
      int r = static_cast<int>(it - m.zb.begin());
      for (int k = 0; k < m.nb(); ++k)
        res.y.l_BS(k) += m.rows[row_idx].coef_bs(m.spos.at(m.xb_ids[k])) *
                         xi.lambda_MB(r);
    }
  }
  res.points = pts;
  return res;
}

double TdseProblem::global_kkt_residual(const TspResult& tsp,
                                        const DspResult& dsp) const {
  const Model& m = *m_;
  // Global WLS QP over [x_M; nu_B; x_B; x_S...].
  int n = m.nm() + m.nzb() + m.nb() + static_cast<int>(m.xs_ids.size());
  QpBuilder b(n);
  auto col_of = [&](int bus) {
    const Bus& bb = m.c.bus(bus);
    if (bb.subsystem == Subsystem::Master) return m.xm_pos.at(bus);
    if (bb.subsystem == Subsystem::Boundary)
      return m.nm() + m.nzb() + m.xb_pos.at(bus);
    return m.nm() + m.nzb() + m.nb() + m.xs_pos.at(bus);
  };
  auto full_row = [&](const Vector& coef) {
    Vector v = Vector::Zero(n);
    for (int i = 0; i < m.n_state(); ++i)
      if (coef(i) != 0.0) v(col_of(m.state_ids[i])) = coef(i);
    return v;
  };

  for (int i : m.zm) {
    Vector h = full_row(m.rows[i].coef);
    b.H += 2.0 * m.rows[i].w * h * h.transpose();
    b.c += -2.0 * m.rows[i].w * m.rows[i].z * h;
  }
  for (int i : m.zs) {
    Vector h = full_row(m.rows[i].coef);
    b.H += 2.0 * m.rows[i].w * h * h.transpose();
    b.c += -2.0 * m.rows[i].w * m.rows[i].z * h;
  }
  for (int r = 0; r < m.nzb(); ++r)
    b.H(m.nm() + r, m.nm() + r) += 2.0 * m.rows[m.zb[r]].w;
  for (int r = 0; r < m.nzb(); ++r) {
    Vector row = full_row(m.rows[m.zb[r]].coef);
    row(m.nm() + r) = 1.0;
    b.add_eq(row, m.rows[m.zb[r]].z);
  }
  QpProblem g = b.build();

  KktPoint pt;
  pt.z = Vector::Zero(n);
  const KktPoint& T = tsp.point;
  for (int i = 0; i < m.nm(); ++i) pt.z(i) = T.z(i);
  for (int r = 0; r < m.nzb(); ++r) pt.z(m.nm() + r) = T.z(m.nu_col(r));
  for (int k = 0; k < m.nb(); ++k)
    pt.z(m.nm() + m.nzb() + k) = T.z(m.xb_col(k));
  for (int d = 0; d < num_dsos(); ++d) {
    const auto& cols = m.dso_states[d];
    for (size_t j = 0; j < cols.size(); ++j) {
      int bus = m.state_ids[cols[j]];
      pt.z(m.nm() + m.nzb() + m.nb() + m.xs_pos.at(bus)) =
          dsp.points[d].z(j);
    }
  }
  pt.lambda = T.lambda;
  pt.omega = Vector::Zero(0);
  return kkt_residual(g, pt);
}

Vector TdseProblem::centralized_estimate() const {
  const Model& m = *m_;
  Matrix H(m.rows.size(), m.n_state());
  Vector z(m.rows.size());
  Matrix W = Matrix::Zero(m.rows.size(), m.rows.size());
  for (size_t i = 0; i < m.rows.size(); ++i) {
    H.row(i) = m.rows[i].coef.transpose();
    z(i) = m.rows[i].z;
    W(i, i) = m.rows[i].w;
  }
  Matrix N = H.transpose() * W * H;
  Eigen::FullPivLU<Matrix> lu(N);
  lu.setThreshold(1e-9);
  if (lu.rank() < m.n_state())
    throw Error("system unobservable (rank-deficient normal equations)");
  return solve_linear(N, H.transpose() * W * z);
}

Vector TdseProblem::assemble_state(const TspResult& tsp,
                                   const DspResult& dsp) const {
  const Model& m = *m_;
  Vector x = Vector::Zero(m.n_state());
  for (int i = 0; i < m.nm(); ++i) x(m.spos.at(m.xm_ids[i])) = tsp.point.z(i);
  for (int k = 0; k < m.nb(); ++k)
    x(m.spos.at(m.xb_ids[k])) = tsp.point.z(m.xb_col(k));
  for (int d = 0; d < num_dsos(); ++d) {
    const auto& cols = m.dso_states[d];
    for (size_t j = 0; j < cols.size(); ++j)
      x(cols[j]) = dsp.points[d].z(j);
  }
  return x;
}

Vector TdseProblem::nu_b_of(const TspResult& tsp) const {
  const Model& m = *m_;
  Vector nu(m.nzb());
  for (int r = 0; r < m.nzb(); ++r) nu(r) = tsp.point.z(m.nu_col(r));
  return nu;
}

Vector TdseProblem::weighted_residuals(const Vector& state) const {
  const Model& m = *m_;
  Vector out(m.rows.size());
  for (size_t i = 0; i < m.rows.size(); ++i)
    out(i) = std::abs(m.rows[i].z - m.rows[i].coef.dot(state)) *
             std::sqrt(m.rows[i].w);
  return out;
}

Vector TdseProblem::predicted(const Vector& state) const {
  const Model& m = *m_;
  Vector out(m.rows.size());
  for (size_t i = 0; i < m.rows.size(); ++i)
    out(i) = m.rows[i].coef.dot(state);
  return out;
}

std::shared_ptr<TdseProblem> build_tdse(const ItdCase& c) {
  return std::make_shared<TdseProblem>(c);
}

SeRun run_tdse(const ItdCase& c, HgdConfig cfg) {
  auto p = build_tdse(c);
  cfg.variant = HgdVariant::Basic;
  HgdResult r = run_hgd(*p, cfg);
  if (!r.trace.converged) throw DivergenceError("tdse did not converge");
  SeRun out;
  out.estimate.state_ids = p->state_ids();
  out.estimate.angles = p->assemble_state(r.tsp, r.dsp);
  out.estimate.nu_b = p->nu_b_of(r.tsp);
  out.estimate.weighted_residuals =
      p->weighted_residuals(out.estimate.angles);
  if (out.estimate.weighted_residuals.size() > 0) {
    Eigen::Index worst;
    out.estimate.weighted_residuals.maxCoeff(&worst);
    out.estimate.worst_measurement = static_cast<int>(worst);
  }
  out.trace = r.trace;
  return out;
}

}  // namespace tdcoord
