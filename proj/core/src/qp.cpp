#include "resmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace resmpc {
namespace {

constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kEqualityRhoScale = 1e3;
constexpr double kMinTighten = 1e-4;
constexpr double kPolishWindow = 1e3;

double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

bool is_equality(double l, double u) {
  return std::isfinite(l) && std::isfinite(u) && u - l <= 1e-12 * std::max(1.0, std::abs(u));
}

Vec row_rho(const QpProblem& p, double rho) {
  Vec r(p.num_constraints());
  for (Index i = 0; i < r.size(); ++i) {
    const double l = p.l()(i);
    const double u = p.u()(i);
    if (!std::isfinite(l) && !std::isfinite(u)) {
      r(i) = kRhoMin;
    } else if (is_equality(l, u)) {
      r(i) = kEqualityRhoScale * rho;
    } else {
      r(i) = rho;
    }
  }
  return r;
}

double objective(const QpProblem& p, const Vec& x) { return 0.5 * x.dot(p.P() * x) + p.q().dot(x); }

double duality_gap(const QpProblem& p, const Vec& x, const Vec& y) {
  double support = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    if (y(i) > 0.0 && std::isfinite(p.u()(i))) support += p.u()(i) * y(i);
    if (y(i) < 0.0 && std::isfinite(p.l()(i))) support += p.l()(i) * y(i);
  }
  return std::abs(x.dot(p.P() * x) + p.q().dot(x) + support);
}

bool primal_infeasibility_certificate(const QpProblem& p, Vec dy, double eps) {
  for (Index i = 0; i < dy.size(); ++i) {
    if (!std::isfinite(p.u()(i))) dy(i) = std::min(dy(i), 0.0);
    if (!std::isfinite(p.l()(i))) dy(i) = std::max(dy(i), 0.0);
  }
  const double norm = inf_norm(dy);
  if (norm < 1e-30) return false;
  if (inf_norm(p.A().transpose() * dy) > eps * norm) return false;
  double support = 0.0;
  for (Index i = 0; i < dy.size(); ++i) {
    if (dy(i) > 0.0) support += p.u()(i) * dy(i);
    if (dy(i) < 0.0) support += p.l()(i) * dy(i);
  }
  return support < -eps * norm;
}

bool dual_infeasibility_certificate(const QpProblem& p, const Vec& dx, double eps) {
  const double norm = inf_norm(dx);
  if (norm < 1e-30) return false;
  if (inf_norm(p.P() * dx) > eps * norm) return false;
  if (p.q().dot(dx) > -eps * norm) return false;
  const Vec adx = p.A() * dx;
  for (Index i = 0; i < adx.size(); ++i) {
    if (std::isfinite(p.u()(i)) && adx(i) > eps * norm) return false;
    if (std::isfinite(p.l()(i)) && adx(i) < -eps * norm) return false;
  }
  return true;
}

// Solves the equality-constrained KKT system on a guessed active set and
// returns true when the result satisfies every optimality condition.
// -1 lower, +1 upper, 2 equality, 0 inactive
std::vector<int> guess_active(const QpProblem& p, const Vec& z, const Vec& y) {
  std::vector<int> side(static_cast<std::size_t>(p.num_constraints()), 0);
  for (Index i = 0; i < p.num_constraints(); ++i) {
    const double l = p.l()(i);
    const double u = p.u()(i);
    auto& s = side[static_cast<std::size_t>(i)];
    if (is_equality(l, u)) {
      s = 2;
    } else if (std::isfinite(l) && z(i) - l < -y(i)) {
      s = -1;
    } else if (std::isfinite(u) && u - z(i) < y(i)) {
      s = 1;
    }
  }
  return side;
}

bool polish(const QpProblem& p, const std::vector<int>& guess, double tol, Vec& x_out, Vec& y_out) {
  const Index n = p.num_variables();
  const Index m = p.num_constraints();
  std::vector<Index> active;
  std::vector<double> bound;
  std::vector<int> side;
  for (Index i = 0; i < m; ++i) {
    const int g = guess[static_cast<std::size_t>(i)];
    if (g == 0) continue;
    active.push_back(i);
    bound.push_back(g == -1 ? p.l()(i) : p.u()(i));
    side.push_back(g == 2 ? 0 : g);
  }
  const Index k = static_cast<Index>(active.size());
  Mat kkt = Mat::Zero(n + k, n + k);
  Vec rhs(n + k);
  kkt.topLeftCorner(n, n) = p.P();
  rhs.head(n) = -p.q();
  for (Index j = 0; j < k; ++j) {
    kkt.block(n + j, 0, 1, n) = p.A().row(active[static_cast<std::size_t>(j)]);
    kkt.block(0, n + j, n, 1) = p.A().row(active[static_cast<std::size_t>(j)]).transpose();
    rhs(n + j) = bound[static_cast<std::size_t>(j)];
  }
  constexpr double delta = 1e-9;
  Mat reg = kkt;
  reg.topLeftCorner(n, n).diagonal().array() += delta;
  if (k > 0) reg.bottomRightCorner(k, k).diagonal().array() -= delta;
  Eigen::PartialPivLU<Mat> lu(reg);
  Vec sol = lu.solve(rhs);
  for (int it = 0; it < 5; ++it) {
    const Vec res = rhs - kkt * sol;
    if (!res.allFinite()) return false;
    sol += lu.solve(res);
  }
  if (!sol.allFinite()) return false;

  Vec x = sol.head(n);
  Vec yy = Vec::Zero(m);
  for (Index j = 0; j < k; ++j) {
    const double mult = sol(n + j);
    const int s = side[static_cast<std::size_t>(j)];
    if (s == 1 && mult < -tol) return false;
    if (s == -1 && mult > tol) return false;
    yy(active[static_cast<std::size_t>(j)]) = mult;
  }
  const KktResiduals r = kkt_residuals(p, x, yy);
  if (r.primal > tol || r.dual > tol) return false;
  x_out = std::move(x);
  y_out = std::move(yy);
  return true;
}

void validate(const Mat& P, const Vec& q, const Mat& A, const Vec& l, const Vec& u) {
  const Index n = q.size();
  if (P.rows() != n || P.cols() != n) throw QpError("QpProblem: P must be n x n");
  if (A.cols() != n) throw QpError("QpProblem: A column count differs from P");
  if (l.size() != A.rows() || u.size() != A.rows()) throw QpError("QpProblem: bound length differs from A rows");
  if (!P.allFinite() || !q.allFinite() || !A.allFinite()) throw QpError("QpProblem: non-finite data");
  if (l.hasNaN() || u.hasNaN()) throw QpError("QpProblem: NaN bound");
  for (Index i = 0; i < l.size(); ++i) {
    if (l(i) > u(i)) throw QpError("QpProblem: l > u in row " + std::to_string(i));
  }
}

}  // namespace

QpProblem::QpProblem(Mat P, Vec q, Mat A, Vec l, Vec u)
    : P_(std::move(P)), q_(std::move(q)), A_(std::move(A)), l_(std::move(l)), u_(std::move(u)) {
  validate(P_, q_, A_, l_, u_);
  P_ = 0.5 * (P_ + P_.transpose()).eval();
}

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Solved: return "solved";
    case QpStatus::PrimalInfeasible: return "primal_infeasible";
    case QpStatus::DualInfeasible: return "dual_infeasible";
    case QpStatus::MaxIter: return "max_iter";
  }
  return "unknown";
}

KktResiduals kkt_residuals(const QpProblem& p, const Vec& x, const Vec& y) {
  KktResiduals r;
  const Vec ax = p.A() * x;
  for (Index i = 0; i < ax.size(); ++i) {
    const double viol = std::max(ax(i) - p.u()(i), 0.0) + std::max(p.l()(i) - ax(i), 0.0);
    r.primal = std::max(r.primal, viol);
  }
  r.dual = inf_norm(p.P() * x + p.q() + p.A().transpose() * y);
  return r;
}

QpSolution solve_qp(const QpProblem& p, const QpSettings& s) {
  const Index n = p.num_variables();
  const Index m = p.num_constraints();
  const Mat& P = p.P();
  const Mat& A = p.A();

  {
    Mat shifted = P;
    shifted.diagonal().array() += s.sigma;
    Eigen::LLT<Mat> check(shifted);
    if (check.info() != Eigen::Success) throw QpError("solve_qp: P is not positive semidefinite");
  }

  double rho = s.rho;
  Vec rho_vec = row_rho(p, rho);
  auto factor = [&]() {
    Mat K = P + A.transpose() * rho_vec.asDiagonal() * A;
    K.diagonal().array() += s.sigma;
    Eigen::LLT<Mat> llt(K);
    if (llt.info() != Eigen::Success) throw QpError("solve_qp: KKT factorization failed");
    return llt;
  };
  Eigen::LLT<Mat> llt = factor();

  Vec x = Vec::Zero(n);
  Vec z = Vec::Zero(m);
  Vec y = Vec::Zero(m);
  Vec x_prev = x;
  Vec y_prev = y;

  QpSolution sol;
  double tighten = 1.0;
  int adapt_gap = std::max(s.adapt_interval, 1);
  int next_adapt = adapt_gap;
  Vec fallback_x;
  Vec fallback_y;
  bool have_fallback = false;
  std::vector<int> last_guess;
  auto finish = [&](const KktResiduals& kr, int iter) {
    sol.status = QpStatus::Solved;
    sol.primal_residual = kr.primal;
    sol.dual_residual = kr.dual;
    sol.duality_gap = duality_gap(p, sol.x, sol.y);
    sol.objective = objective(p, sol.x);
    sol.iterations = iter;
    return sol;
  };
  for (int iter = 1; iter <= s.max_iter; ++iter) {
    x_prev = x;
    y_prev = y;
    const Vec rhs = s.sigma * x - p.q() + A.transpose() * (rho_vec.cwiseProduct(z) - y);
    const Vec x_tilde = llt.solve(rhs);
    const Vec z_tilde = A * x_tilde;
    x = s.alpha * x_tilde + (1.0 - s.alpha) * x_prev;
    const Vec z_relaxed = s.alpha * z_tilde + (1.0 - s.alpha) * z;
    Vec z_new = z_relaxed + y.cwiseQuotient(rho_vec);
    z_new = z_new.cwiseMax(p.l()).cwiseMin(p.u());
    y += rho_vec.cwiseProduct(z_relaxed - z_new);
    z = std::move(z_new);

    const bool check = iter % s.check_interval == 0 || iter == s.max_iter;
    if (!check) continue;

    const Vec ax = A * x;
    const Vec px = P * x;
    const Vec aty = A.transpose() * y;
    const double r_prim = inf_norm(ax - z);
    const double r_dual = inf_norm(px + p.q() + aty);
    const double eps_prim = s.eps_abs + s.eps_rel * std::max(inf_norm(ax), inf_norm(z));
    const double eps_dual =
        s.eps_abs + s.eps_rel * std::max({inf_norm(px), inf_norm(aty), inf_norm(p.q())});

    const bool near = r_prim <= kPolishWindow * eps_prim && r_dual <= kPolishWindow * eps_dual;
    const bool converged = r_prim <= tighten * eps_prim && r_dual <= tighten * eps_dual;
    if (s.polish && (near || converged)) {
      std::vector<int> guess = guess_active(p, z, y);
      if (guess != last_guess) {
        Vec xp;
        Vec yp;
        if (polish(p, guess, 0.1 * s.eps_abs, xp, yp)) {
          const KktResiduals kr = kkt_residuals(p, xp, yp);
          sol.x = std::move(xp);
          sol.y = std::move(yp);
          sol.polished = true;
          return finish(kr, iter);
        }
        last_guess = std::move(guess);
      }
    }
    if (converged) {
      const KktResiduals kr = kkt_residuals(p, x, y);
      if (kr.primal <= s.eps_abs && kr.dual <= s.eps_abs) {
        fallback_x = x;
        fallback_y = y;
        have_fallback = true;
        if (!s.polish || tighten <= kMinTighten) {
          sol.x = x;
          sol.y = y;
          return finish(kr, iter);
        }
      }
      tighten = std::max(0.1 * tighten, kMinTighten);
    }

    if (primal_infeasibility_certificate(p, y - y_prev, s.eps_prim_inf)) {
      sol.status = QpStatus::PrimalInfeasible;
      sol.x = x;
      sol.y = y - y_prev;
      sol.iterations = iter;
      return sol;
    }
    if (dual_infeasibility_certificate(p, x - x_prev, s.eps_dual_inf)) {
      sol.status = QpStatus::DualInfeasible;
      sol.x = x - x_prev;
      sol.y = y;
      sol.iterations = iter;
      return sol;
    }

    if (s.adapt_interval > 0 && iter >= next_adapt && m > 0) {
      next_adapt = iter + adapt_gap;
      const double prim_scale = std::max({inf_norm(ax), inf_norm(z), 1e-30});
      const double dual_scale = std::max({inf_norm(px), inf_norm(aty), inf_norm(p.q()), 1e-30});
      const double num = r_prim / prim_scale;
      const double den = std::max(r_dual / dual_scale, 1e-30);
      const double ratio = std::clamp(std::sqrt(num / den), 0.1, 10.0);
      const double rho_new = std::clamp(rho * ratio, kRhoMin, kRhoMax);
      if (rho_new > 5.0 * rho || rho_new < 0.2 * rho) {
        adapt_gap *= 2;
        next_adapt = iter + adapt_gap;
        rho = rho_new;
        rho_vec = row_rho(p, rho);
        llt = factor();
      }
    }
  }

  if (have_fallback) {
    sol.x = fallback_x;
    sol.y = fallback_y;
    return finish(kkt_residuals(p, sol.x, sol.y), s.max_iter);
  }
  sol.status = QpStatus::MaxIter;
  sol.x = x;
  sol.y = y;
  const KktResiduals kr = kkt_residuals(p, x, y);
  sol.primal_residual = kr.primal;
  sol.dual_residual = kr.dual;
  sol.duality_gap = duality_gap(p, x, y);
  sol.objective = objective(p, x);
  sol.iterations = s.max_iter;
  return sol;
}

}  // namespace resmpc
