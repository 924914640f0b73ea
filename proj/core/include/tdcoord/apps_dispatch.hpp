#pragma once

#include <map>
#include <memory>

#include "tdcoord/elastic.hpp"
#include "tdcoord/hgd.hpp"
#include "tdcoord/types.hpp"

namespace tdcoord {

/// How the modified dispatch obtains eta = d(lambda_MB)/d(P_BD): sensitivity
/// equations of the T-SP or a secant fit of the last two exchanges.
enum class EtaProvider { Sensitivity, Fitting };

struct LmpVector {
  std::vector<int> bus_ids;
  Vector price;
  std::vector<int> boundary_ids;
  Vector boundary_lambda;
  double price_of(int bus) const;
};

struct DispatchSolution {
  Vector gen_p;       // per case.generators index; NaN = not dispatchable here
  Vector p_bt;        // boundary order (TSO-side interchange)
  Vector p_bd;        // boundary order (DSO-side interchange)
  Vector lambda_mb;   // boundary order
  double objective = 0.0;
};

struct DispatchRun {
  DispatchSolution dispatch;
  LmpVector lmps;
  HgdTrace trace;
};

/// Shift-factor coordinated economic dispatch. Exchanges exactly
/// (lambda_MB, P_BD): x_B is the dummy zero state, l_BS vanishes
/// identically.
class TdcedProblem : public QpCoordinatedProblem {
 public:
  TdcedProblem(ItdCase c, EtaProvider eta = EtaProvider::Sensitivity);
  ~TdcedProblem() override;

  std::string name() const override { return "tdced"; }
  int x_b_size() const override { return 0; }
  int lambda_size() const override;
  int f_bs_size() const override;
  int l_bs_size() const override { return 0; }
  int num_dsos() const override;
  BoundaryState initial_state() const override;
  bool supports(HgdVariant v) const override {
    return v != HgdVariant::ModifiedDist;
  }

  QpProblem tsp_qp(const BoundaryResponse& y) const override;
  TspResult interpret_tsp(const BoundaryResponse& y,
                          const KktPoint& pt) const override;
  QpProblem dsp_qp(const BoundaryState& xi, int dso) const override;
  DspResult interpret_dsp(const BoundaryState& xi,
                          const std::vector<KktPoint>& pts) const override;

  TransCorrectionPtr trans_correction(const HgdHistory& h) const override;
  DspResult solve_dsp_modified(const BoundaryState& xi,
                               const TransCorrectionPtr& corr,
                               const HgdHistory& h) const override;

  double global_kkt_residual(const TspResult& tsp,
                             const DspResult& dsp) const override;

  /// Whole-system QP (the P_BT - P_BD = 0 form); the centralized oracle
  /// solves exactly this.
  QpProblem global_qp() const;
  KktPoint assemble_global(const TspResult& tsp, const DspResult& dsp) const;
  DispatchSolution interpret_global(const KktPoint& pt) const;
  LmpVector lmps_of(const KktPoint& global_pt) const;
  /// d(lambda_MB)/d(P_BD) of the T-SP at a response point, via the KKT
  /// sensitivity equations.
  Matrix eta_sensitivity(const BoundaryResponse& y) const;

 private:
  struct Model;
  std::unique_ptr<Model> m_;
};

std::shared_ptr<TdcedProblem> build_tdced(
    const ItdCase& c, EtaProvider eta = EtaProvider::Sensitivity);
DispatchRun run_tdced(const ItdCase& c, HgdVariant variant, HgdConfig cfg = {},
                      EtaProvider eta = EtaProvider::Sensitivity);
DispatchRun solve_tdced_centralized(const ItdCase& c);

/// Angle-based DC optimal power flow: the full heterogeneous exchange.
/// x_B is the boundary angle vector and l_BS is generally nonzero.
class TdopfDcProblem : public QpCoordinatedProblem {
 public:
  explicit TdopfDcProblem(ItdCase c);
  ~TdopfDcProblem() override;

  std::string name() const override { return "tdopf-dc"; }
  int x_b_size() const override;
  int lambda_size() const override;
  int f_bs_size() const override;
  int l_bs_size() const override;
  int num_dsos() const override;
  BoundaryState initial_state() const override;
  bool supports(HgdVariant v) const override {
    return v != HgdVariant::ModifiedTrans;
  }

  QpProblem tsp_qp(const BoundaryResponse& y) const override;
  TspResult interpret_tsp(const BoundaryResponse& y,
                          const KktPoint& pt) const override;
  QpProblem dsp_qp(const BoundaryState& xi, int dso) const override;
  DspResult interpret_dsp(const BoundaryState& xi,
                          const std::vector<KktPoint>& pts) const override;

  DistCorrectionPtr dist_correction(const BoundaryState& xi_prev,
                                    const DspResult& at) const override;
  TspResult solve_tsp_modified(const BoundaryResponse& y_corr,
                               const DistCorrectionPtr& corr) const override;

  double global_kkt_residual(const TspResult& tsp,
                             const DspResult& dsp) const override;

  QpProblem global_qp() const;
  KktPoint assemble_global(const TspResult& tsp, const DspResult& dsp) const;
  DispatchSolution interpret_global(const KktPoint& pt) const;
  LmpVector lmps_of(const KktPoint& global_pt) const;

 private:
  struct Model;
  std::unique_ptr<Model> m_;
};

std::shared_ptr<TdopfDcProblem> build_tdopf_dc(const ItdCase& c);
DispatchRun run_tdopf_dc(const ItdCase& c, HgdVariant variant,
                         HgdConfig cfg = {});
DispatchRun solve_tdopf_dc_centralized(const ItdCase& c);

/// Linear (DC-model) state estimation in the G-TDCM shape of the dummy
/// boundary-residual variable nu_B.
class TdseProblem : public QpCoordinatedProblem {
 public:
  explicit TdseProblem(ItdCase c);
  ~TdseProblem() override;

  std::string name() const override { return "tdse"; }
  int x_b_size() const override;
  int lambda_size() const override;  // one per boundary measurement
  int f_bs_size() const override;
  int l_bs_size() const override;
  int num_dsos() const override;
  BoundaryState initial_state() const override;

  QpProblem tsp_qp(const BoundaryResponse& y) const override;
  TspResult interpret_tsp(const BoundaryResponse& y,
                          const KktPoint& pt) const override;
  QpProblem dsp_qp(const BoundaryState& xi, int dso) const override;
  DspResult interpret_dsp(const BoundaryState& xi,
                          const std::vector<KktPoint>& pts) const override;

  double global_kkt_residual(const TspResult& tsp,
                             const DspResult& dsp) const override;

  /// Estimation state: angles at all non-slack buses, ascending id.
  const std::vector<int>& state_ids() const;
  /// Centralized WLS solution (normal equations) over every measurement.
  Vector centralized_estimate() const;
  Vector assemble_state(const TspResult& tsp, const DspResult& dsp) const;
  Vector nu_b_of(const TspResult& tsp) const;
  /// |z - h(x)| / sigma per measurement.
  Vector weighted_residuals(const Vector& state) const;
  /// Measurement value vector h(x) for a state (used to fabricate fixtures).
  Vector predicted(const Vector& state) const;

 private:
  struct Model;
  std::unique_ptr<Model> m_;
};

std::shared_ptr<TdseProblem> build_tdse(const ItdCase& c);

struct SeSolution {
  std::vector<int> state_ids;
  Vector angles;
  Vector nu_b;
  Vector weighted_residuals;
  int worst_measurement = -1;
};

struct SeRun {
  SeSolution estimate;
  HgdTrace trace;
};

SeRun run_tdse(const ItdCase& c, HgdConfig cfg = {});

}  // namespace tdcoord
