#pragma once

#include <memory>
#include <optional>

#include "tdcoord/acpf.hpp"
#include "tdcoord/equivalent.hpp"
#include "tdcoord/hgd.hpp"

namespace tdcoord {

/// How the modified variant obtains the distribution response: the static
/// network equivalent (topology only, shared once) or finite-difference
/// sensitivities of the D-SP probed around the current iterate.
enum class PfResponseProvider { Equivalent, Sensitivity };

struct TdpfOptions {
  PfResponseProvider response = PfResponseProvider::Equivalent;
  double pf_tol = 1e-8;
  int pf_max_iter = 30;
  std::optional<PfState> warm_start;
};

/// Distributed power flow as a coordinated instance: x_B is the boundary
/// voltage (magnitudes then angles), the response is f_BS; no multipliers
/// are exchanged.
class TdpfProblem : public CoordinatedProblem {
 public:
  TdpfProblem(ItdCase c, TdpfOptions opt = {});

  std::string name() const override { return "tdpf"; }
  int x_b_size() const override;
  int lambda_size() const override { return 0; }
  int f_bs_size() const override;
  int l_bs_size() const override { return 0; }
  int num_dsos() const override;
  BoundaryState initial_state() const override;

  DspResult solve_dsp(const BoundaryState& xi) const override;
  TspResult solve_tsp(const BoundaryResponse& y) const override;

  bool supports(HgdVariant v) const override {
    return v != HgdVariant::ModifiedTrans;
  }
  DistCorrectionPtr dist_correction(const BoundaryState& xi_prev,
                                    const DspResult& at) const override;
  TspResult solve_tsp_modified(const BoundaryResponse& y_corr,
                               const DistCorrectionPtr& corr) const override;

  double global_kkt_residual(const TspResult& tsp,
                             const DspResult& dsp) const override;

  /// Full-system state assembled from the two last subproblem solutions.
  PfState assemble(const TspResult& tsp, const DspResult& dsp) const;

  const ItdCase& itd_case() const { return case_; }

  PfState boundary_state_of(const BoundaryState& xi) const;
  BoundaryState to_boundary_state(const PfState& x_B) const;

 private:
  ItdCase case_;
  TdpfOptions opt_;
  std::vector<int> boundary_ids_;
  SlaveEquivalent equivalent_;
};

struct TdpfResult {
  PfState state;  // full system
  HgdTrace trace;
};

TdpfResult run_tdpf(const ItdCase& c, HgdVariant variant, HgdConfig cfg = {},
                    TdpfOptions opt = {});

struct WorstVoltage {
  int bus = 0;
  double v = 0.0;
  double limit = 0.0;
  Subsystem where = Subsystem::Master;
};

struct WorstFlow {
  int branch = 0;
  double fraction = 0.0;  // of the limit
  Subsystem where = Subsystem::Master;
};

struct CaEntry {
  int branch = 0;
  std::string tdpf_status = "converged";  // converged|diverged|islanded
  std::optional<WorstVoltage> tdpf_voltage;
  std::optional<WorstFlow> tdpf_flow;
  std::string baseline_status = "converged";
  std::optional<WorstVoltage> baseline_voltage;
  std::optional<WorstFlow> baseline_flow;
  SubsystemMismatch verified;  // of the TDPF post-contingency state

  bool tdpf_secure() const {
    return tdpf_status == "converged" && !tdpf_voltage && !tdpf_flow;
  }
  bool baseline_secure() const {
    return baseline_status == "converged" && !baseline_voltage &&
           !baseline_flow;
  }
};

struct SecurityReport {
  std::vector<CaEntry> entries;  // ordered by contingency list index
};

/// Post-contingency screening of the whole ITD system, with a
/// transmission-only baseline (slave frozen at the base-case f_BS) run
/// alongside for the detection/false-alarm comparison.
SecurityReport run_ca(const ItdCase& c, HgdVariant variant = HgdVariant::ModifiedDist,
                      HgdConfig cfg = {}, TdpfOptions opt = {});

struct VsaOptions {
  double step0 = 0.25;
  double min_step = 1.0 / 64.0;
  double max_lambda = 20.0;
  HgdVariant variant = HgdVariant::ModifiedDist;
  HgdConfig hgd;
  TdpfOptions pf;
};

struct VsaResult {
  double margin = 0.0;
  PfState last_state;
  std::vector<std::pair<double, bool>> step_history;  // (lambda tried, ok)
};

/// Natural continuation with step halving on failure, warm-started from the
/// previous converged state; loads scale along the case's load_direction.
VsaResult run_vsa(const ItdCase& c, const VsaOptions& opt = {});

/// Same stepping on the centralized solver (the margin oracle).
VsaResult run_vsa_centralized(const ItdCase& c, const VsaOptions& opt = {});

/// Transmission-only estimate: slave replaced by the base-case f_BS, master
/// and boundary loads scaled.
VsaResult run_vsa_frozen(const ItdCase& c, const VsaOptions& opt = {});

}  // namespace tdcoord
