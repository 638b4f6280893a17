#include "resmpc/condensed.hpp"

#include <stdexcept>

namespace resmpc {
namespace {

Mat block_diag(const Mat& block, int count) {
  Mat out = Mat::Zero(block.rows() * count, block.cols() * count);
  for (int k = 0; k < count; ++k) {
    out.block(k * block.rows(), k * block.cols(), block.rows(), block.cols()) = block;
  }
  return out;
}

struct RowStack {
  std::vector<Mat> G, Gx;
  std::vector<Vec> g;
  Index cols = 0;

  // Adds H (Sx x + Sv V) <= b.
  void add(const Mat& H, const Vec& b, const Mat& Sx_block, const Mat& Sv_block) {
    if (H.rows() == 0) return;
    G.push_back(H * Sv_block);
    Gx.push_back(H * Sx_block);
    g.push_back(b);
  }
};

}  // namespace

CondensedPrediction condense(const Mat& A, const Mat& B, const Mat& K, int horizon) {
  if (horizon < 1) throw std::invalid_argument("condense: horizon must be >= 1");
  const Index n = A.rows();
  const Index m = B.cols();
  if (A.cols() != n || B.rows() != n || K.rows() != m || K.cols() != n) {
    throw DimensionError("condense: dimension mismatch");
  }
  const Mat Acl = A + B * K;
  CondensedPrediction p;
  p.n = n;
  p.m = m;
  p.horizon = horizon;
  p.Sx = Mat::Zero(n * (horizon + 1), n);
  p.Sv = Mat::Zero(n * (horizon + 1), m * horizon);
  p.Sx.topRows(n).setIdentity();
  for (int k = 0; k < horizon; ++k) {
    p.Sx.middleRows(n * (k + 1), n) = Acl * p.Sx.middleRows(n * k, n);
    p.Sv.middleRows(n * (k + 1), n) = Acl * p.Sv.middleRows(n * k, n);
    p.Sv.block(n * (k + 1), m * k, n, m) += B;
  }
  p.Kx = Mat::Zero(m * horizon, n);
  p.Kv = Mat::Zero(m * horizon, m * horizon);
  for (int k = 0; k < horizon; ++k) {
    p.Kx.middleRows(m * k, m) = K * p.Sx.middleRows(n * k, n);
    p.Kv.middleRows(m * k, m) = K * p.Sv.middleRows(n * k, n);
    p.Kv.block(m * k, m * k, m, m) += Mat::Identity(m, m);
  }
  return p;
}

HorizonQp::HorizonQp(const Spec& spec) : pred_(condense(spec.A, spec.B, spec.K, spec.horizon)) {
  const Index n = pred_.n;
  const Index m = pred_.m;
  const int N = spec.horizon;
  if (!spec.tube.empty() && static_cast<int>(spec.tube.size()) < N + 1) {
    throw std::invalid_argument("HorizonQp: tube shorter than horizon");
  }
  Mat Qbar = block_diag(spec.Q, N + 1);
  Qbar.bottomRightCorner(n, n) = spec.Q_N;
  const Mat Rbar = block_diag(spec.R, N);

  Mat H = 2.0 * (pred_.Sv.transpose() * Qbar * pred_.Sv + pred_.Kv.transpose() * Rbar * pred_.Kv);
  H_ = 0.5 * (H + H.transpose());
  F_ = 2.0 * (pred_.Sv.transpose() * Qbar * pred_.Sx + pred_.Kv.transpose() * Rbar * pred_.Kx);
  C_ = pred_.Sx.transpose() * Qbar * pred_.Sx + pred_.Kx.transpose() * Rbar * pred_.Kx;

  auto tube_at = [&](int k) { return spec.tube.empty() ? Box::zero(n) : spec.tube[static_cast<std::size_t>(k)]; };

  RowStack rows;
  for (int k = 0; k < N; ++k) {
    const Box E = tube_at(k);
    const Box KE = affine_map_box(spec.K, E);
    const HPolytope& U = spec.input_set;
    Vec b = U.g();
    for (Index i = 0; i < U.num_facets(); ++i) b(i) -= support(KE, U.H().row(i).transpose());
    rows.add(U.H(), b, pred_.Kx.middleRows(m * k, m), pred_.Kv.middleRows(m * k, m));
  }
  for (int k = 1; k <= N; ++k) {
    const Box E = tube_at(k);
    const HPolytope& D = spec.state_set;
    Vec b = D.g();
    for (Index i = 0; i < D.num_facets(); ++i) b(i) -= support(E, D.H().row(i).transpose());
    rows.add(D.H(), b, pred_.Sx.middleRows(n * k, n), pred_.Sv.middleRows(n * k, n));
  }
  {
    const Box E = tube_at(N);
    const HPolytope& T = spec.terminal_set;
    if (T.is_empty()) trivially_infeasible_ = true;
    Vec b = T.g();
    for (Index i = 0; i < T.num_facets(); ++i) b(i) -= support(E, T.H().row(i).transpose());
    rows.add(T.H(), b, pred_.Sx.middleRows(n * N, n), pred_.Sv.middleRows(n * N, n));
  }

  Index total = 0;
  for (const auto& g : rows.g) total += g.size();
  G_.resize(total, m * N);
  Gx_.resize(total, n);
  g0_.resize(total);
  Index r = 0;
  for (std::size_t b = 0; b < rows.g.size(); ++b) {
    const Index cnt = rows.g[b].size();
    G_.middleRows(r, cnt) = rows.G[b];
    Gx_.middleRows(r, cnt) = rows.Gx[b];
    g0_.segment(r, cnt) = rows.g[b];
    r += cnt;
  }
  // A row with no dependence on V or x that is violated can never be met.
  for (Index i = 0; i < total; ++i) {
    if (G_.row(i).cwiseAbs().maxCoeff() < 1e-14 && Gx_.row(i).cwiseAbs().maxCoeff() < 1e-14 && g0_(i) < 0.0) {
      trivially_infeasible_ = true;
    }
  }
}

HorizonQp::Result HorizonQp::solve(const Vec& x, const QpSettings& settings) const {
  if (x.size() != pred_.n) throw DimensionError("HorizonQp::solve: state dimension");
  Result res;
  if (trivially_infeasible_) {
    res.status = QpStatus::PrimalInfeasible;
    return res;
  }
  const Vec q = F_ * x;
  const Vec upper = g0_ - Gx_ * x;
  const Vec lower = Vec::Constant(upper.size(), -kInf);
  const QpProblem problem(H_, q, G_, lower, upper);
  const QpSolution sol = solve_qp(problem, settings);
  res.status = sol.status;
  if (sol.status == QpStatus::PrimalInfeasible) return res;
  if (sol.status != QpStatus::Solved) {
    throw QpError(std::string("horizon QP failed: ") + to_string(sol.status));
  }
  res.feasible = true;
  res.moves = sol.x;
  const Vec U = pred_.Kx * x + pred_.Kv * sol.x;
  const Vec X = pred_.Sx * x + pred_.Sv * sol.x;
  res.inputs = Eigen::Map<const Mat>(U.data(), pred_.m, pred_.horizon);
  res.states = Eigen::Map<const Mat>(X.data(), pred_.n, pred_.horizon + 1);
  res.u0 = U.head(pred_.m);
  res.cost = 0.5 * sol.x.dot(H_ * sol.x) + q.dot(sol.x) + x.dot(C_ * x);
  return res;
}

}  // namespace resmpc
