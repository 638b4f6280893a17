#pragma once

#include <stdexcept>
#include <string>

#include "resmpc/types.hpp"

namespace resmpc {

/// Dense convex QP
///
///   minimize    0.5 x'Px + q'x
///   subject to  l <= Ax <= u
///
/// Rows with l == u are equalities; infinite bounds are allowed on either side.
/// P is symmetrized on construction.
class QpProblem {
 public:
  QpProblem() = default;
  QpProblem(Mat P, Vec q, Mat A, Vec l, Vec u);

  const Mat& P() const { return P_; }
  const Vec& q() const { return q_; }
  const Mat& A() const { return A_; }
  const Vec& l() const { return l_; }
  const Vec& u() const { return u_; }

  Index num_variables() const { return q_.size(); }
  Index num_constraints() const { return A_.rows(); }

 private:
  Mat P_;
  Vec q_;
  Mat A_;
  Vec l_;
  Vec u_;
};

enum class QpStatus { Solved, PrimalInfeasible, DualInfeasible, MaxIter };

const char* to_string(QpStatus status);

struct QpSettings {
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  int max_iter = 20000;
  double sigma = 1e-6;
  double rho = 0.1;
  double alpha = 1.6;
  double eps_prim_inf = 1e-7;
  double eps_dual_inf = 1e-7;
  int check_interval = 10;
  int adapt_interval = 50;
  bool polish = true;
};

struct QpSolution {
  Vec x;
  /// One multiplier per row; positive when the upper bound is active.
  /// For PrimalInfeasible this holds the infeasibility certificate.
  Vec y;
  QpStatus status = QpStatus::MaxIter;
  double primal_residual = kInf;
  double dual_residual = kInf;
  double duality_gap = kInf;
  double objective = kInf;
  int iterations = 0;
  bool polished = false;
};

/// Thrown for malformed input (non-finite data, non-PSD P, l > u).
class QpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operator-splitting solver with over-relaxation, residual-balanced rho
/// updates and an active-set polish. Deterministic for identical inputs.
QpSolution solve_qp(const QpProblem& problem, const QpSettings& settings = {});

struct KktResiduals {
  double primal = 0.0;
  double dual = 0.0;
};

/// primal = ||max(Ax-u,0) + max(l-Ax,0)||_inf, dual = ||Px + q + A'y||_inf.
KktResiduals kkt_residuals(const QpProblem& problem, const Vec& x, const Vec& y);

struct LpSolution {
  Vec x;
  double value = kInf;
  QpStatus status = QpStatus::MaxIter;
};

/// minimize c'x subject to l <= Ax <= u. Unbounded problems report
/// DualInfeasible, infeasible ones PrimalInfeasible.
///
/// Solved exactly (up to pivoting tolerances) with a dense simplex on the
/// dual problem, whose basis has only as many rows as there are variables.
LpSolution solve_lp(const Vec& c, const Mat& A, const Vec& l, const Vec& u);

/// Same as solve_lp for the halfspace form Hx <= g.
LpSolution solve_lp_halfspaces(const Vec& c, const Mat& H, const Vec& g);

}  // namespace resmpc
