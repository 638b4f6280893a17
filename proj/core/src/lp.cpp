#include <algorithm>
#include <cmath>
#include <vector>

#include "resmpc/qp.hpp"

namespace resmpc {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class SimplexOutcome { Optimal, Unbounded, IterationLimit };

// Tableau simplex for  min cost'y  s.t.  T y = rhs, y >= 0,  with the basis
// kept in canonical form. The last column of `tab` is the right-hand side.
class Tableau {
 public:
  Tableau(RowMat tab, std::vector<Index> basis)
      : tab_(std::move(tab)), basis_(std::move(basis)) {}

  Index rows() const { return tab_.rows(); }
  Index cols() const { return tab_.cols() - 1; }
  const std::vector<Index>& basis() const { return basis_; }
  double rhs(Index i) const { return tab_(i, tab_.cols() - 1); }
  double entry(Index i, Index j) const { return tab_(i, j); }

  SimplexOutcome run(const Vec& cost, Index allowed_cols, int max_pivots) {
    Eigen::RowVectorXd reduced = cost.head(cols()).transpose();
    for (Index i = 0; i < rows(); ++i) {
      const double cb = cost(basis_[i]);
      if (cb != 0.0) reduced -= cb * tab_.row(i).head(cols());
    }
    const double cost_scale = std::max(1.0, cost.head(allowed_cols).cwiseAbs().maxCoeff());
    const double tol_reduced = 1e-10 * cost_scale;
    const double tol_pivot = 1e-11;

    int degenerate_run = 0;
    for (int pivots = 0; pivots < max_pivots; ++pivots) {
      const bool bland = degenerate_run > 30;
      Index enter = -1;
      double best = -tol_reduced;
      for (Index j = 0; j < allowed_cols; ++j) {
        if (reduced(j) < best) {
          enter = j;
          if (bland) break;
          best = reduced(j);
        }
      }
      if (enter < 0) return SimplexOutcome::Optimal;

      Index leave = -1;
      double best_ratio = kInf;
      for (Index i = 0; i < rows(); ++i) {
        const double a = tab_(i, enter);
        if (a <= tol_pivot) continue;
        const double ratio = std::max(rhs(i), 0.0) / a;
        if (leave < 0 || ratio < best_ratio - 1e-12 * (1.0 + best_ratio)) {
          leave = i;
          best_ratio = ratio;
        } else if (ratio <= best_ratio + 1e-12 * (1.0 + best_ratio)) {
          const bool prefer = bland ? basis_[i] < basis_[leave]
                                    : a > tab_(leave, enter);
          if (prefer) {
            leave = i;
            best_ratio = std::min(best_ratio, ratio);
          }
        }
      }
      if (leave < 0) return SimplexOutcome::Unbounded;

      degenerate_run = best_ratio <= 1e-14 ? degenerate_run + 1 : 0;
      pivot(leave, enter);
      const double r = reduced(enter);
      reduced -= r * tab_.row(leave).head(cols());
      reduced(enter) = 0.0;
    }
    return SimplexOutcome::IterationLimit;
  }

  void pivot(Index r, Index j) {
    tab_.row(r) /= tab_(r, j);
    for (Index i = 0; i < rows(); ++i) {
      if (i == r) continue;
      const double f = tab_(i, j);
      if (f != 0.0) tab_.row(i) -= f * tab_.row(r);
      tab_(i, j) = 0.0;
    }
    tab_(r, j) = 1.0;
    basis_[r] = j;
  }

  void drop_row(Index r) {
    const Index last = rows() - 1;
    if (r != last) {
      tab_.row(r) = tab_.row(last);
      basis_[r] = basis_[last];
    }
    tab_.conservativeResize(last, Eigen::NoChange);
    basis_.pop_back();
  }

 private:
  RowMat tab_;
  std::vector<Index> basis_;
};

struct DualResult {
  SimplexOutcome outcome = SimplexOutcome::Optimal;
  bool dual_feasible = true;
  std::vector<Index> active;  // rows of H in the final basis
};

// Solves  min g'y  s.t.  H'y = b, y >= 0.
DualResult solve_dual(const Mat& H, const Vec& g, const Vec& b) {
  const Index m = H.rows();
  const Index n = H.cols();
  RowMat tab = RowMat::Zero(n, m + n + 1);
  std::vector<Index> basis(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const double sign = b(i) < 0.0 ? -1.0 : 1.0;
    tab.row(i).head(m) = sign * H.col(i).transpose();
    tab(i, m + i) = 1.0;
    tab(i, m + n) = sign * b(i);
    basis[static_cast<std::size_t>(i)] = m + i;
  }
  Tableau tableau(std::move(tab), std::move(basis));
  const int max_pivots = static_cast<int>(50 * (m + n) + 1000);

  DualResult result;
  Vec phase1_cost = Vec::Zero(m + n);
  phase1_cost.tail(n).setOnes();
  if (tableau.run(phase1_cost, m + n, max_pivots) == SimplexOutcome::IterationLimit) {
    result.outcome = SimplexOutcome::IterationLimit;
    return result;
  }
  double infeas = 0.0;
  for (Index i = 0; i < tableau.rows(); ++i) {
    if (tableau.basis()[static_cast<std::size_t>(i)] >= m) infeas += tableau.rhs(i);
  }
  if (infeas > 1e-9 * std::max(1.0, b.cwiseAbs().maxCoeff())) {
    result.dual_feasible = false;
    return result;
  }

  // Drive remaining artificials out of the basis; rows that cannot be
  // pivoted are linearly dependent and are dropped.
  for (Index i = tableau.rows() - 1; i >= 0; --i) {
    if (tableau.basis()[static_cast<std::size_t>(i)] < m) continue;
    Index j_best = -1;
    double a_best = 1e-9;
    for (Index j = 0; j < m; ++j) {
      const double a = std::abs(tableau.entry(i, j));
      if (a > a_best) {
        a_best = a;
        j_best = j;
      }
    }
    if (j_best >= 0) {
      tableau.pivot(i, j_best);
    } else {
      tableau.drop_row(i);
    }
  }

  Vec phase2_cost = Vec::Zero(m + n);
  phase2_cost.head(m) = g;
  result.outcome = tableau.run(phase2_cost, m, max_pivots);
  for (Index j : tableau.basis()) result.active.push_back(j);
  return result;
}

Vec primal_from_basis(const Mat& H, const Vec& g, const std::vector<Index>& active) {
  const Index n = H.cols();
  if (active.empty()) return Vec::Zero(n);
  Mat HB(static_cast<Index>(active.size()), n);
  Vec gB(static_cast<Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k) {
    HB.row(static_cast<Index>(k)) = H.row(active[k]);
    gB(static_cast<Index>(k)) = g(active[k]);
  }
  if (HB.rows() == n) {
    Eigen::FullPivLU<Mat> lu(HB);
    if (lu.isInvertible()) return lu.solve(gB);
  }
  return HB.completeOrthogonalDecomposition().solve(gB);
}

bool all_finite(const Mat& M) { return M.allFinite(); }

}  // namespace

LpSolution solve_lp_halfspaces(const Vec& c, const Mat& H, const Vec& g) {
  if (H.cols() != c.size() || H.rows() != g.size()) {
    throw QpError("solve_lp: dimension mismatch");
  }
  if (!all_finite(c) || !all_finite(H) || !all_finite(g)) {
    throw QpError("solve_lp: non-finite input");
  }
  LpSolution sol;
  const DualResult dual = solve_dual(H, g, -c);
  if (dual.outcome == SimplexOutcome::IterationLimit) {
    sol.status = QpStatus::MaxIter;
    sol.x = Vec::Zero(c.size());
    return sol;
  }
  if (!dual.dual_feasible) {
    // Primal is unbounded or infeasible; decide with a pure feasibility LP.
    const DualResult feas = solve_dual(H, g, Vec::Zero(c.size()));
    sol.x = Vec::Zero(c.size());
    if (feas.outcome == SimplexOutcome::Unbounded) {
      sol.status = QpStatus::PrimalInfeasible;
    } else {
      sol.status = QpStatus::DualInfeasible;
      sol.value = -kInf;
    }
    return sol;
  }
  if (dual.outcome == SimplexOutcome::Unbounded) {
    sol.status = QpStatus::PrimalInfeasible;
    sol.x = Vec::Zero(c.size());
    return sol;
  }
  sol.x = primal_from_basis(H, g, dual.active);
  sol.value = c.dot(sol.x);
  sol.status = QpStatus::Solved;
  return sol;
}

LpSolution solve_lp(const Vec& c, const Mat& A, const Vec& l, const Vec& u) {
  if (A.cols() != c.size() || A.rows() != l.size() || A.rows() != u.size()) {
    throw QpError("solve_lp: dimension mismatch");
  }
  if (l.hasNaN() || u.hasNaN()) throw QpError("solve_lp: NaN bound");
  Index rows = 0;
  for (Index i = 0; i < A.rows(); ++i) {
    if (l(i) > u(i)) throw QpError("solve_lp: lower bound exceeds upper bound");
    rows += std::isfinite(u(i)) ? 1 : 0;
    rows += std::isfinite(l(i)) ? 1 : 0;
  }
  Mat H(rows, A.cols());
  Vec g(rows);
  Index k = 0;
  for (Index i = 0; i < A.rows(); ++i) {
    if (std::isfinite(u(i))) {
      H.row(k) = A.row(i);
      g(k++) = u(i);
    }
    if (std::isfinite(l(i))) {
      H.row(k) = -A.row(i);
      g(k++) = -l(i);
    }
  }
  return solve_lp_halfspaces(c, H, g);
}

}  // namespace resmpc
