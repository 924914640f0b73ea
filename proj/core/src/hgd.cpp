#include "tdcoord/hgd.hpp"

#include <chrono>
#include <cmath>
#include <set>

#include <Eigen/Eigenvalues>

namespace tdcoord {

Vector BoundaryState::stacked() const {
  Vector v(x_B.size() + lambda_MB.size());
  if (v.size()) v << x_B, lambda_MB;
  return v;
}

BoundaryState BoundaryState::from_stacked(const Vector& v, int nx) {
  BoundaryState s;
  s.x_B = v.head(nx);
  s.lambda_MB = v.tail(v.size() - nx);
  return s;
}

Vector BoundaryResponse::stacked() const {
  Vector v(f_BS.size() + l_BS.size());
  if (v.size()) v << f_BS, l_BS;
  return v;
}

BoundaryResponse BoundaryResponse::from_stacked(const Vector& v, int nf) {
  BoundaryResponse r;
  r.f_BS = v.head(nf);
  r.l_BS = v.tail(v.size() - nf);
  return r;
}

std::string to_string(HgdVariant v) {
  switch (v) {
    case HgdVariant::Basic: return "basic";
    case HgdVariant::ModifiedDist: return "modified-dist";
    case HgdVariant::ModifiedTrans: return "modified-trans";
  }
  return "?";
}

DistCorrectionPtr CoordinatedProblem::dist_correction(const BoundaryState&,
                                                      const DspResult&) const {
  throw Error(name() + " has no distribution-response function");
}

CoordinatedProblem::TspResult CoordinatedProblem::solve_tsp_modified(
    const BoundaryResponse&, const DistCorrectionPtr&) const {
  throw Error(name() + " has no corrected T-SP");
}

TransCorrectionPtr CoordinatedProblem::trans_correction(
    const HgdHistory&) const {
  throw Error(name() + " has no transmission-response function");
}

CoordinatedProblem::DspResult CoordinatedProblem::solve_dsp_modified(
    const BoundaryState&, const TransCorrectionPtr&, const HgdHistory&) const {
  throw Error(name() + " has no corrected D-SP");
}

std::vector<double> HgdTrace::residuals() const {
  std::vector<double> r;
  for (const auto& it : iterations) r.push_back(it.residual);
  return r;
}

namespace {

double scaled_delta(const BoundaryState& a, const BoundaryState& b,
                    double lambda_scale) {
  double d = 0.0;
  if (a.x_B.size())
    d = (a.x_B - b.x_B).cwiseAbs().maxCoeff();
  if (a.lambda_MB.size())
    d = std::max(d, (a.lambda_MB - b.lambda_MB).cwiseAbs().maxCoeff() /
                        lambda_scale);
  return d;
}

}  // namespace

HgdResult run_hgd(const CoordinatedProblem& p, const HgdConfig& cfg) {
  if (cfg.epsilon <= 0.0) throw Error("epsilon must be positive");
  if (cfg.max_iter < 1) throw Error("max_iter must be at least 1");
  if (cfg.variant != HgdVariant::Basic && !p.supports(cfg.variant))
    throw Error(p.name() + " does not support " + to_string(cfg.variant));

  BoundaryState xi = cfg.initial_state.value_or(p.initial_state());
  double lambda_scale =
      xi.lambda_MB.size()
          ? std::max(1.0, xi.lambda_MB.cwiseAbs().maxCoeff())
          : 1.0;

  HgdResult res;
  HgdHistory history;
  history.xis.push_back(xi);

  // FromTsp: one leading T-SP solve seeds xi from an initial response.
  if (cfg.start_side == StartSide::FromTsp) {
    BoundaryResponse y0 = cfg.initial_response.value_or(BoundaryResponse{
        Vector::Zero(p.f_bs_size()), Vector::Zero(p.l_bs_size())});
    try {
      res.tsp = p.solve_tsp(y0);
    } catch (const Error& e) {
      throw SubproblemError(0, "T-SP", e.what());
    }
    xi = res.tsp.xi;
    history.xis.back() = xi;
  }

  for (int k = 1; k <= cfg.max_iter; ++k) {
    auto t0 = std::chrono::steady_clock::now();
    HgdIterationRecord rec;
    rec.k = k;

    DistCorrectionPtr dist_corr;
    try {
      switch (cfg.variant) {
        case HgdVariant::Basic:
          res.dsp = p.solve_dsp(xi);
          break;
        case HgdVariant::ModifiedDist:
          res.dsp = p.solve_dsp(xi);
          break;
        case HgdVariant::ModifiedTrans: {
          TransCorrectionPtr tc = p.trans_correction(history);
          res.dsp = p.solve_dsp_modified(xi, tc, history);
          break;
        }
      }
    } catch (const SubproblemError&) {
      throw;
    } catch (const Error& e) {
      throw SubproblemError(k, "D-SP", e.what());
    }
    rec.dsp_status = "ok";
    rec.max_slack = res.dsp.max_slack;

    BoundaryResponse y_sent = res.dsp.y;
    try {
      if (cfg.variant == HgdVariant::ModifiedDist) {
        dist_corr = p.dist_correction(xi, res.dsp);
        Vector a_prev = dist_corr->value(xi);
        Vector corrected = res.dsp.y.stacked() - a_prev;
        y_sent = BoundaryResponse::from_stacked(corrected, p.f_bs_size());
        res.tsp = p.solve_tsp_modified(y_sent, dist_corr);
      } else {
        res.tsp = p.solve_tsp(y_sent);
      }
    } catch (const SubproblemError&) {
      throw;
    } catch (const Error& e) {
      throw SubproblemError(k, "T-SP", e.what());
    }
    rec.tsp_status = "ok";
    rec.max_slack = std::max(rec.max_slack, res.tsp.max_slack);

    BoundaryState xi_next = res.tsp.xi;
    rec.residual = scaled_delta(xi_next, xi, lambda_scale);
    rec.xi = xi_next.stacked();
    rec.y = y_sent.stacked();
    rec.ms = std::chrono::duration<double, std::milli>(
                 std::chrono::steady_clock::now() - t0)
                 .count();
    res.trace.iterations.push_back(rec);

    history.xis.push_back(xi_next);
    history.ys.push_back(res.dsp.y);

    xi = xi_next;
    res.xi = xi;
    res.y = res.dsp.y;

    if (rec.residual < cfg.epsilon) {
      res.trace.converged = true;
      break;
    }
  }

  if (res.trace.converged)
    res.trace.global_kkt_residual = p.global_kkt_residual(res.tsp, res.dsp);
  return res;
}

HgdResult run_basic_hgd(const CoordinatedProblem& p, HgdConfig cfg) {
  cfg.variant = HgdVariant::Basic;
  return run_hgd(p, cfg);
}

HgdResult run_modified_hgd_dist(const CoordinatedProblem& p, HgdConfig cfg) {
  cfg.variant = HgdVariant::ModifiedDist;
  return run_hgd(p, cfg);
}

HgdResult run_modified_hgd_trans(const CoordinatedProblem& p, HgdConfig cfg) {
  cfg.variant = HgdVariant::ModifiedTrans;
  return run_hgd(p, cfg);
}

namespace {

std::set<std::vector<int>> active_sets_of(
    const CoordinatedProblem::TspResult& tsp,
    const CoordinatedProblem::DspResult& dsp) {
  std::set<std::vector<int>> s;
  s.insert(tsp.point.active_set);
  std::vector<int> merged;
  for (const auto& pt : dsp.points) {
    merged.push_back(-1);  // separator keeps per-DSO sets distinct
    merged.insert(merged.end(), pt.active_set.begin(), pt.active_set.end());
  }
  s.insert(merged);
  return s;
}

}  // namespace

SpectralDiagnostic composite_map_spectral_radius(const CoordinatedProblem& p,
                                                 const BoundaryState& xi_star) {
  const double h = 1e-6;
  const int nx = p.x_b_size();
  const int n = nx + p.lambda_size();

  auto sweep = [&](const Vector& stacked)
      -> std::pair<Vector, std::set<std::vector<int>>> {
    BoundaryState xi = BoundaryState::from_stacked(stacked, nx);
    auto dsp = p.solve_dsp(xi);
    auto tsp = p.solve_tsp(dsp.y);
    return {tsp.xi.stacked(), active_sets_of(tsp, dsp)};
  };

  Vector base = xi_star.stacked();
  auto [f0, as0] = sweep(base);
  SpectralDiagnostic diag;
  diag.jacobian = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    Vector bp = base, bm = base;
    bp(j) += h;
    bm(j) -= h;
    auto [fp, asp] = sweep(bp);
    auto [fm, asm_] = sweep(bm);
    diag.jacobian.col(j) = (fp - fm) / (2 * h);
    if (asp != as0 || asm_ != as0) diag.active_set_changed = true;
  }

  if (n > 0) {
    Eigen::EigenSolver<Matrix> es(diag.jacobian);
    diag.rho = es.eigenvalues().cwiseAbs().maxCoeff();
  }
  return diag;
}

RateEstimate estimate_rate(const HgdTrace& trace) {
  std::vector<double> r = trace.residuals();
  if (r.size() < 4)
    throw Error("estimate_rate needs at least 4 iterations, got " +
                std::to_string(r.size()));
  size_t start = r.size() / 2;
  if (start == 0) start = 1;
  RateEstimate est;
  double log_sum = 0.0;
  int count = 0;
  for (size_t i = std::max<size_t>(start, 1); i < r.size(); ++i) {
    if (r[i - 1] <= 0.0 || r[i] <= 0.0) {
      est.monotone_tail = false;
      continue;
    }
    double ratio = r[i] / r[i - 1];
    if (ratio >= 1.0) est.monotone_tail = false;
    log_sum += std::log(ratio);
    ++count;
  }
  if (count == 0) throw Error("estimate_rate: no usable residual ratios");
  est.rate = std::exp(log_sum / count);
  return est;
}

}  // namespace tdcoord
