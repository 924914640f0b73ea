#pragma once

#include <memory>

#include "tdcoord/hgd.hpp"
#include "tdcoord/qp.hpp"

namespace tdcoord {

/// Base for instances whose subproblems are QPs. Implementations provide
/// the builders and interpreters; the solve plumbing (and the elastic
/// decorator below) is shared.
class QpCoordinatedProblem : public CoordinatedProblem {
 public:
  virtual QpProblem tsp_qp(const BoundaryResponse& y) const = 0;
  virtual TspResult interpret_tsp(const BoundaryResponse& y,
                                  const KktPoint& pt) const = 0;
  virtual QpProblem dsp_qp(const BoundaryState& xi, int dso) const = 0;
  virtual DspResult interpret_dsp(const BoundaryState& xi,
                                  const std::vector<KktPoint>& pts) const = 0;

  DspResult solve_dsp(const BoundaryState& xi) const override;
  TspResult solve_tsp(const BoundaryResponse& y) const override;
};

/// Inequalities gain nonnegative slacks with a linear penalty:
/// A_in z + s >= b_in, s >= 0, objective += penalty * sum(s).
QpProblem add_elastic_slacks(const QpProblem& p, double penalty);

/// Decorates the subproblem QPs of a coordinated instance with elastic
/// slacks so infeasible subproblems keep the iteration alive. Slack usage
/// is reported through max_slack in the results (and thus the trace).
std::shared_ptr<CoordinatedProblem> wrap_with_elastic_slacks(
    std::shared_ptr<const QpCoordinatedProblem> p, double penalty);

}  // namespace tdcoord
