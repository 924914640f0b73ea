#include "tdcoord/apps_pf.hpp"

#include <algorithm>
#include <cmath>

#include "tdcoord/case_ops.hpp"
#include "tdcoord/newton.hpp"

namespace tdcoord {

namespace {

struct EquivalentCorrection : DistCorrection {
  SlaveEquivalent eq;
  std::vector<int> boundary_ids;
  Vector value(const BoundaryState& xi) const override {
    PfState x_b = PfState::from_stacked(boundary_ids, xi.x_B);
    return response_af(x_b, eq);
  }
};

struct AffineCorrection : DistCorrection {
  AffineBoundaryResponse affine;
  Vector value(const BoundaryState& xi) const override {
    return affine.y0 + affine.J * (xi.x_B - affine.x_ref);
  }
};

}  // namespace

TdpfProblem::TdpfProblem(ItdCase c, TdpfOptions opt)
    : case_(std::move(c)),
      opt_(std::move(opt)),
      boundary_ids_(case_.ids_of(Subsystem::Boundary)),
      equivalent_(equivalent_admittance(case_)) {}

int TdpfProblem::x_b_size() const {
  return 2 * static_cast<int>(boundary_ids_.size());
}

int TdpfProblem::f_bs_size() const {
  return 2 * static_cast<int>(boundary_ids_.size());
}

int TdpfProblem::num_dsos() const { return case_.num_dsos(); }

BoundaryState TdpfProblem::initial_state() const {
  BoundaryState xi;
  if (opt_.warm_start) {
    PfState warm = opt_.warm_start->subset(boundary_ids_);
    xi.x_B = warm.stacked();
  } else {
    xi.x_B = PfState::flat(boundary_ids_).stacked();
  }
  xi.lambda_MB = Vector();
  return xi;
}

PfState TdpfProblem::boundary_state_of(const BoundaryState& xi) const {
  return PfState::from_stacked(boundary_ids_, xi.x_B);
}

BoundaryState TdpfProblem::to_boundary_state(const PfState& x_B) const {
  BoundaryState xi;
  xi.x_B = x_B.subset(boundary_ids_).stacked();
  return xi;
}

CoordinatedProblem::DspResult TdpfProblem::solve_dsp(
    const BoundaryState& xi) const {
  PfState x_b = boundary_state_of(xi);
  PfOptions popt;
  popt.tol = opt_.pf_tol;
  popt.max_iter = opt_.pf_max_iter;
  popt.warm_start = opt_.warm_start;
  PfState x_s;
  for (int d = 0; d < case_.num_dsos(); ++d)
    x_s = x_s.merged(solve_slave_pf(case_, x_b, d, popt));
  BoundaryInjection f = compute_fbs(case_, x_b, x_s);

  DspResult res;
  res.y.f_BS = f.stacked();
  res.y.l_BS = Vector();
  res.points.resize(case_.num_dsos());
  res.detail = x_s;
  return res;
}

CoordinatedProblem::TspResult TdpfProblem::solve_tsp(
    const BoundaryResponse& y) const {
  BoundaryInjection f = BoundaryInjection::from_stacked(boundary_ids_, y.f_BS);
  PfOptions popt;
  popt.tol = opt_.pf_tol;
  popt.max_iter = opt_.pf_max_iter;
  popt.warm_start = opt_.warm_start;
  PfState master = solve_master_pf(case_, f, {}, popt);

  TspResult res;
  res.xi = to_boundary_state(master);
  res.detail = master;
  return res;
}

DistCorrectionPtr TdpfProblem::dist_correction(const BoundaryState& xi_prev,
                                               const DspResult& at) const {
  if (opt_.response == PfResponseProvider::Equivalent) {
    auto corr = std::make_shared<EquivalentCorrection>();
    corr->eq = equivalent_;
    corr->boundary_ids = boundary_ids_;
    return corr;
  }
  // Sensitivity: probe the D-SP response around the current iterate.
  auto corr = std::make_shared<AffineCorrection>();
  corr->affine.x_ref = xi_prev.x_B;
  corr->affine.y0 = at.y.stacked();
  corr->affine.J = finite_difference_jacobian(
      [&](const Vector& xb) {
        BoundaryState probe;
        probe.x_B = xb;
        return solve_dsp(probe).y.stacked();
      },
      xi_prev.x_B);
  return corr;
}

CoordinatedProblem::TspResult TdpfProblem::solve_tsp_modified(
    const BoundaryResponse& y_corr, const DistCorrectionPtr& corr) const {
  BoundaryInjection f =
      BoundaryInjection::from_stacked(boundary_ids_, y_corr.f_BS);
  MasterCorrection mc;
  if (auto eqc = std::dynamic_pointer_cast<const EquivalentCorrection>(corr)) {
    mc.shunt = eqc->eq.y_eq;
  } else if (auto afc =
                 std::dynamic_pointer_cast<const AffineCorrection>(corr)) {
    mc.affine = afc->affine;
  } else {
    throw Error("unknown correction type for tdpf");
  }
  PfOptions popt;
  popt.tol = opt_.pf_tol;
  popt.max_iter = opt_.pf_max_iter;
  popt.warm_start = opt_.warm_start;
  PfState master = solve_master_pf(case_, f, mc, popt);

  TspResult res;
  res.xi = to_boundary_state(master);
  res.detail = master;
  return res;
}

double TdpfProblem::global_kkt_residual(const TspResult& tsp,
                                        const DspResult& dsp) const {
  return verify_full_state(case_, assemble(tsp, dsp)).overall();
}

PfState TdpfProblem::assemble(const TspResult& tsp,
                              const DspResult& dsp) const {
  const PfState& master = std::any_cast<const PfState&>(tsp.detail);
  const PfState& slave = std::any_cast<const PfState&>(dsp.detail);
  return master.merged(slave);
}

TdpfResult run_tdpf(const ItdCase& c, HgdVariant variant, HgdConfig cfg,
                    TdpfOptions opt) {
  TdpfProblem p(c, opt);
  cfg.variant = variant;
  HgdResult r = run_hgd(p, cfg);
  if (!r.trace.converged)
    throw DivergenceError("tdpf did not converge in " +
                          std::to_string(cfg.max_iter) + " iterations");
  TdpfResult out;
  out.state = p.assemble(r.tsp, r.dsp);
  out.trace = r.trace;
  return out;
}

namespace {

// Worst-end MVA loading of the pi model.
double branch_loading(const Branch& br, const PfState& state) {
  Complex vf = state.voltage(br.from);
  Complex vt = state.voltage(br.to);
  Complex ys = br.series_admittance();
  Complex ych(0.0, br.b_charging / 2.0);
  double t = br.tap == 0.0 ? 1.0 : br.tap;
  Complex i_f = (ys + ych) * vf / (t * t) - ys / t * vt;
  Complex i_t = (ys + ych) * vt - ys / t * vf;
  return std::max(std::abs(vf * std::conj(i_f)),
                  std::abs(vt * std::conj(i_t)));
}

Subsystem branch_side(const ItdCase& c, const Branch& br) {
  Subsystem sf = c.bus(br.from).subsystem;
  Subsystem st = c.bus(br.to).subsystem;
  if (sf == Subsystem::Slave || st == Subsystem::Slave) return Subsystem::Slave;
  if (sf == Subsystem::Boundary && st == Subsystem::Boundary)
    return Subsystem::Boundary;
  return Subsystem::Master;
}

std::pair<std::optional<WorstVoltage>, std::optional<WorstFlow>> scan_state(
    const ItdCase& c, const PfState& state) {
  std::optional<WorstVoltage> wv;
  double wv_severity = 0.0;
  std::optional<WorstFlow> wf;
  for (int id : state.ids) {
    const Bus& b = c.bus(id);
    double v = state.v_mag(state.index_of(id));
    double over = v - c.v_max, under = c.v_min - v;
    double sev = std::max(over, under);
    if (sev <= 1e-9) continue;
    if (!wv || sev > wv_severity) {
      WorstVoltage w;
      w.bus = id;
      w.v = v;
      w.limit = over > under ? c.v_max : c.v_min;
      w.where = b.subsystem;
      wv = w;
      wv_severity = sev;
    }
  }
  for (const auto& br : c.branches) {
    if (!br.in_service || !br.flow_limit) continue;
    if (!state.has(br.from) || !state.has(br.to)) continue;
    double frac = branch_loading(br, state) / *br.flow_limit;
    if (frac <= 1.0 + 1e-9) continue;
    if (!wf || frac > wf->fraction) {
      WorstFlow w;
      w.branch = br.id;
      w.fraction = frac;
      w.where = branch_side(c, br);
      wf = w;
    }
  }
  return {wv, wf};
}

}  // namespace

SecurityReport run_ca(const ItdCase& c, HgdVariant variant, HgdConfig cfg,
                      TdpfOptions opt) {
  SecurityReport report;
  if (c.contingencies.empty()) return report;

  // Base-case interchange for the frozen-f_BS baseline.
  TdpfResult base = run_tdpf(c, variant, cfg, opt);
  BoundaryInjection f_base =
      compute_fbs(c, base.state.subset(c.ids_of(Subsystem::Boundary)),
                  base.state.subset(c.ids_of(Subsystem::Slave)));

  for (int branch_id : c.contingencies) {
    CaEntry entry;
    entry.branch = branch_id;

    ItdCase cont;
    try {
      cont = apply_contingency(c, branch_id);
    } catch (const IslandingError&) {
      entry.tdpf_status = "islanded";
      entry.baseline_status = "islanded";
      report.entries.push_back(entry);
      continue;
    }

    try {
      TdpfResult r = run_tdpf(cont, variant, cfg, opt);
      entry.verified = verify_full_state(cont, r.state);
      auto [wv, wf] = scan_state(cont, r.state);
      entry.tdpf_voltage = wv;
      entry.tdpf_flow = wf;
    } catch (const Error&) {
      entry.tdpf_status = "diverged";
    }

    // Conventional practice: the slave is a constant-power load at the
    // pre-contingency interchange; only master-side quantities are visible.
    try {
      PfOptions popt;
      popt.tol = opt.pf_tol;
      popt.max_iter = opt.pf_max_iter;
      PfState master = solve_master_pf(cont, f_base, {}, popt);
      auto [wv, wf] = scan_state(cont, master);
      entry.baseline_voltage = wv;
      entry.baseline_flow = wf;
    } catch (const Error&) {
      entry.baseline_status = "diverged";
    }

    report.entries.push_back(entry);
  }
  return report;
}

namespace {

// Step-halving natural continuation over a solver callback.
template <typename Solver>
VsaResult continuation(const VsaOptions& opt, Solver&& solve_at) {
  VsaResult res;
  std::optional<PfState> state = solve_at(0.0, std::optional<PfState>{});
  if (!state) throw DivergenceError("vsa: base case does not converge");
  res.last_state = *state;
  res.margin = 0.0;

  double step = opt.step0;
  if (step <= opt.min_step || opt.min_step <= 0.0)
    throw Error("vsa: require step0 > min_step > 0");

  while (step >= opt.min_step && res.margin < opt.max_lambda) {
    double trial = res.margin + step;
    std::optional<PfState> next = solve_at(trial, state);
    res.step_history.emplace_back(trial, next.has_value());
    if (next) {
      res.margin = trial;
      state = next;
      res.last_state = *next;
    } else {
      step /= 2.0;
    }
  }
  return res;
}

}  // namespace

VsaResult run_vsa(const ItdCase& c, const VsaOptions& opt) {
  return continuation(
      opt,
      [&](double lam,
          const std::optional<PfState>& warm) -> std::optional<PfState> {
        ItdCase scaled = scale_loads(c, lam);
        TdpfOptions pf = opt.pf;
        pf.warm_start = warm;
        try {
          return run_tdpf(scaled, opt.variant, opt.hgd, pf).state;
        } catch (const Error&) {
          return std::nullopt;
        }
      });
}

VsaResult run_vsa_centralized(const ItdCase& c, const VsaOptions& opt) {
  return continuation(
      opt,
      [&](double lam,
          const std::optional<PfState>& warm) -> std::optional<PfState> {
        ItdCase scaled = scale_loads(c, lam);
        PfOptions popt;
        popt.tol = opt.pf.pf_tol;
        popt.max_iter = opt.pf.pf_max_iter;
        popt.warm_start = warm;
        try {
          return solve_centralized_pf(scaled, popt);
        } catch (const Error&) {
          return std::nullopt;
        }
      });
}

VsaResult run_vsa_frozen(const ItdCase& c, const VsaOptions& opt) {
  TdpfResult base = run_tdpf(c, opt.variant, opt.hgd, opt.pf);
  BoundaryInjection f_base =
      compute_fbs(c, base.state.subset(c.ids_of(Subsystem::Boundary)),
                  base.state.subset(c.ids_of(Subsystem::Slave)));
  return continuation(
      opt,
      [&](double lam,
          const std::optional<PfState>& warm) -> std::optional<PfState> {
        ItdCase scaled = scale_loads(c, lam);
        // The frozen estimate never rescales the slave side.
        for (auto& b : scaled.buses)
          if (b.subsystem == Subsystem::Slave) {
            b.p_load = c.bus(b.id).p_load;
            b.q_load = c.bus(b.id).q_load;
          }
        PfOptions popt;
        popt.tol = opt.pf.pf_tol;
        popt.max_iter = opt.pf.pf_max_iter;
        popt.warm_start = warm;
        try {
          return solve_master_pf(scaled, f_base, {}, popt);
        } catch (const Error&) {
          return std::nullopt;
        }
      });
}

}  // namespace tdcoord
