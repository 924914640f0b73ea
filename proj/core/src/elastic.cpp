#include "tdcoord/elastic.hpp"

namespace tdcoord {

CoordinatedProblem::DspResult QpCoordinatedProblem::solve_dsp(
    const BoundaryState& xi) const {
  std::vector<KktPoint> pts;
  for (int d = 0; d < num_dsos(); ++d) pts.push_back(solve_qp(dsp_qp(xi, d)));
  return interpret_dsp(xi, pts);
}

CoordinatedProblem::TspResult QpCoordinatedProblem::solve_tsp(
    const BoundaryResponse& y) const {
  return interpret_tsp(y, solve_qp(tsp_qp(y)));
}

QpProblem add_elastic_slacks(const QpProblem& p, double penalty) {
  if (penalty <= 0.0) throw Error("elastic penalty must be positive");
  const int n = p.num_vars();
  const int m = p.num_in();
  QpProblem e;
  e.H = Matrix::Zero(n + m, n + m);
  e.H.topLeftCorner(n, n) = p.H;
  e.c = Vector::Zero(n + m);
  e.c.head(n) = p.c;
  e.c.tail(m).setConstant(penalty);
  e.A_eq = Matrix::Zero(p.num_eq(), n + m);
  if (p.num_eq() > 0) e.A_eq.leftCols(n) = p.A_eq;
  e.b_eq = p.b_eq;
  e.A_in = Matrix::Zero(2 * m, n + m);
  if (m > 0) {
    e.A_in.topLeftCorner(m, n) = p.A_in;
    e.A_in.topRightCorner(m, m) = Matrix::Identity(m, m);
    e.A_in.bottomRightCorner(m, m) = Matrix::Identity(m, m);
  }
  e.b_in = Vector::Zero(2 * m);
  if (m > 0) e.b_in.head(m) = p.b_in;
  return e;
}

namespace {

struct Stripped {
  KktPoint pt;
  double max_slack = 0.0;
};

Stripped strip_slacks(const QpProblem& original, const KktPoint& pt) {
  const int n = original.num_vars();
  const int m = original.num_in();
  Stripped out;
  out.pt.z = pt.z.head(n);
  out.pt.lambda = pt.lambda;
  out.pt.omega = pt.omega.head(m);
  for (int i : pt.active_set)
    if (i < m) out.pt.active_set.push_back(i);
  out.max_slack = m > 0 ? std::max(0.0, pt.z.tail(m).maxCoeff()) : 0.0;
  return out;
}

class ElasticProblem : public CoordinatedProblem {
 public:
  ElasticProblem(std::shared_ptr<const QpCoordinatedProblem> inner,
                 double penalty)
      : inner_(std::move(inner)), penalty_(penalty) {}

  std::string name() const override { return inner_->name() + "+elastic"; }
  int x_b_size() const override { return inner_->x_b_size(); }
  int lambda_size() const override { return inner_->lambda_size(); }
  int f_bs_size() const override { return inner_->f_bs_size(); }
  int l_bs_size() const override { return inner_->l_bs_size(); }
  int num_dsos() const override { return inner_->num_dsos(); }
  BoundaryState initial_state() const override {
    return inner_->initial_state();
  }

  DspResult solve_dsp(const BoundaryState& xi) const override {
    std::vector<KktPoint> pts;
    double smax = 0.0;
    for (int d = 0; d < inner_->num_dsos(); ++d) {
      QpProblem qp = inner_->dsp_qp(xi, d);
      Stripped s = strip_slacks(qp, solve_qp(add_elastic_slacks(qp, penalty_)));
      smax = std::max(smax, s.max_slack);
      pts.push_back(std::move(s.pt));
    }
    DspResult res = inner_->interpret_dsp(xi, pts);
    res.max_slack = smax;
    return res;
  }

  TspResult solve_tsp(const BoundaryResponse& y) const override {
    QpProblem qp = inner_->tsp_qp(y);
    Stripped s = strip_slacks(qp, solve_qp(add_elastic_slacks(qp, penalty_)));
    TspResult res = inner_->interpret_tsp(y, s.pt);
    res.max_slack = s.max_slack;
    return res;
  }

  double global_kkt_residual(const TspResult& tsp,
                             const DspResult& dsp) const override {
    return inner_->global_kkt_residual(tsp, dsp);
  }

 private:
  std::shared_ptr<const QpCoordinatedProblem> inner_;
  double penalty_;
};

}  // namespace

std::shared_ptr<CoordinatedProblem> wrap_with_elastic_slacks(
    std::shared_ptr<const QpCoordinatedProblem> p, double penalty) {
  if (penalty <= 0.0) throw Error("elastic penalty must be positive");
  return std::make_shared<ElasticProblem>(std::move(p), penalty);
}

}  // namespace tdcoord
