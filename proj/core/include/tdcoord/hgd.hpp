#pragma once

#include <any>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tdcoord/qp.hpp"
#include "tdcoord/types.hpp"

namespace tdcoord {

/// TSO -> DSO payload: boundary state x_B plus the boundary multipliers.
/// Either part may be empty (pure power flow carries no multipliers; the
/// shift-factor dispatch model has a dummy x_B).
struct BoundaryState {
  Vector x_B;
  Vector lambda_MB;
  Vector stacked() const;
  static BoundaryState from_stacked(const Vector& v, int nx);
  int size() const { return static_cast<int>(x_B.size() + lambda_MB.size()); }
};

/// DSO -> TSO payload: boundary injection f_BS plus the slave Lagrangian
/// derivative l_BS.
struct BoundaryResponse {
  Vector f_BS;
  Vector l_BS;
  Vector stacked() const;
  static BoundaryResponse from_stacked(const Vector& v, int nf);
  int size() const { return static_cast<int>(f_BS.size() + l_BS.size()); }
};

enum class HgdVariant { Basic, ModifiedDist, ModifiedTrans };
enum class StartSide { FromDsp, FromTsp };

std::string to_string(HgdVariant v);

/// Distribution-response correction a(xi_B), built by the problem for one
/// iteration. The engine uses value(); the corrected T-SP interprets the
/// concrete subtype it created.
struct DistCorrection {
  virtual ~DistCorrection() = default;
  virtual Vector value(const BoundaryState& xi) const = 0;
};
using DistCorrectionPtr = std::shared_ptr<const DistCorrection>;

/// Transmission-response correction (eta and friends), built TSO-side.
struct TransCorrection {
  virtual ~TransCorrection() = default;
};
using TransCorrectionPtr = std::shared_ptr<const TransCorrection>;

struct HgdHistory {
  std::vector<BoundaryState> xis;      // xi_0, xi_1, ...
  std::vector<BoundaryResponse> ys;    // y_1, y_2, ... (ys[k-1] from iter k)
};

/// One coordinated instance: the two subproblems plus the optional response
/// machinery. Implementations are immutable; every solve is a pure function
/// of its arguments.
class CoordinatedProblem {
 public:
  virtual ~CoordinatedProblem() = default;
  virtual std::string name() const = 0;

  virtual int x_b_size() const = 0;
  virtual int lambda_size() const = 0;
  virtual int f_bs_size() const = 0;
  virtual int l_bs_size() const = 0;
  virtual int num_dsos() const { return 1; }
  virtual BoundaryState initial_state() const = 0;

  struct TspResult {
    BoundaryState xi;
    KktPoint point;          // empty for Newton-type subproblems
    double max_slack = 0.0;  // elastic usage
    std::any detail;         // app-specific assembly data
  };
  struct DspResult {
    BoundaryResponse y;
    std::vector<KktPoint> points;  // per DSO
    double max_slack = 0.0;
    std::any detail;
  };

  virtual DspResult solve_dsp(const BoundaryState& xi) const = 0;
  virtual TspResult solve_tsp(const BoundaryResponse& y) const = 0;

  virtual bool supports(HgdVariant v) const { return v == HgdVariant::Basic; }

  /// ModifiedDist: build the correction for the iteration whose D-SP ran at
  /// xi_prev, then solve the corrected T-SP with y' = y - a(xi_prev).
  virtual DistCorrectionPtr dist_correction(const BoundaryState& xi_prev,
                                            const DspResult& at) const;
  virtual TspResult solve_tsp_modified(const BoundaryResponse& y_corr,
                                       const DistCorrectionPtr& corr) const;

  /// ModifiedTrans: TSO-side response info from the exchange history, then
  /// the corrected D-SP.
  virtual TransCorrectionPtr trans_correction(const HgdHistory& h) const;
  virtual DspResult solve_dsp_modified(const BoundaryState& xi,
                                       const TransCorrectionPtr& corr,
                                       const HgdHistory& h) const;

  /// KKT residual of the assembled global candidate (problem-specific
  /// evaluators; for pure feasibility problems this is the mismatch norm).
  virtual double global_kkt_residual(const TspResult& tsp,
                                     const DspResult& dsp) const = 0;
};

struct HgdConfig {
  double epsilon = 1e-6;
  int max_iter = 50;
  HgdVariant variant = HgdVariant::Basic;
  StartSide start_side = StartSide::FromDsp;
  std::optional<BoundaryState> initial_state;      // FromDsp
  std::optional<BoundaryResponse> initial_response;  // FromTsp
};

struct HgdIterationRecord {
  int k = 0;
  Vector xi;       // stacked
  Vector y;        // stacked
  double residual = 0.0;  // scaled ||delta xi||_inf
  std::string tsp_status = "ok";
  std::string dsp_status = "ok";
  double ms = 0.0;
  double max_slack = 0.0;
};

struct HgdTrace {
  std::vector<HgdIterationRecord> iterations;
  bool converged = false;
  double global_kkt_residual = std::numeric_limits<double>::quiet_NaN();
  int count() const { return static_cast<int>(iterations.size()); }
  std::vector<double> residuals() const;
};

struct HgdResult {
  BoundaryState xi;
  BoundaryResponse y;
  CoordinatedProblem::TspResult tsp;
  CoordinatedProblem::DspResult dsp;
  HgdTrace trace;
};

/// Subproblem failure wrapped with the iteration index and side.
struct SubproblemError : Error {
  SubproblemError(int k, std::string side_, const std::string& what)
      : Error("iteration " + std::to_string(k) + " " + side_ + ": " + what),
        iteration(k),
        side(std::move(side_)) {}
  int iteration;
  std::string side;
};

/// The alternating fixed-point loop. Non-convergence at max_iter returns a
/// trace with converged=false; subproblem failures throw SubproblemError.
HgdResult run_hgd(const CoordinatedProblem& p, const HgdConfig& cfg);
HgdResult run_basic_hgd(const CoordinatedProblem& p, HgdConfig cfg);
HgdResult run_modified_hgd_dist(const CoordinatedProblem& p, HgdConfig cfg);
HgdResult run_modified_hgd_trans(const CoordinatedProblem& p, HgdConfig cfg);

struct SpectralDiagnostic {
  double rho = 0.0;
  Matrix jacobian;
  bool active_set_changed = false;
};

/// Finite-difference Jacobian (step 1e-6) of one full D-SP -> T-SP sweep at
/// xi_star, and its spectral radius.
SpectralDiagnostic composite_map_spectral_radius(const CoordinatedProblem& p,
                                                 const BoundaryState& xi_star);

struct RateEstimate {
  double rate = 0.0;
  bool monotone_tail = true;
};

/// Geometric mean of successive residual ratios over the last half of the
/// iterations. Throws Error on traces shorter than 4 iterations.
RateEstimate estimate_rate(const HgdTrace& trace);

}  // namespace tdcoord
