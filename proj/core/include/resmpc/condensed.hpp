#pragma once

#include <vector>

#include "resmpc/polytope.hpp"
#include "resmpc/qp.hpp"
#include "resmpc/types.hpp"

namespace resmpc {

/// Stacked nominal prediction under u_k = K xbar_k + v_k:
///   X = Sx x + Sv V   (states k = 0..N, n(N+1) rows)
///   U = Kx x + Kv V   (inputs k = 0..N-1, mN rows)
struct CondensedPrediction {
  Mat Sx;
  Mat Sv;
  Mat Kx;
  Mat Kv;
  Index n = 0;
  Index m = 0;
  int horizon = 0;
};

CondensedPrediction condense(const Mat& A, const Mat& B, const Mat& K, int horizon);

/// Horizon QP in the free moves V with all x-dependence split off:
///   J(x, V) = 0.5 V'HV + (F x)'V + x'Cx
///   G V <= g0 - Gx x
class HorizonQp {
 public:
  struct Spec {
    Mat A, B, K;
    Mat Q, R, Q_N;
    HPolytope state_set;
    HPolytope input_set;
    HPolytope terminal_set;
    /// Tightening boxes E_0..E_N; empty means no tightening.
    std::vector<Box> tube;
    int horizon = 1;
  };

  explicit HorizonQp(const Spec& spec);

  struct Result {
    bool feasible = false;
    Vec u0;
    Vec moves;
    Mat inputs;  ///< m x N applied inputs
    Mat states;  ///< n x (N+1) nominal states
    double cost = kInf;
    QpStatus status = QpStatus::MaxIter;
  };

  /// Infeasible problems are reported in the result; other solver failures
  /// throw QpError.
  Result solve(const Vec& x, const QpSettings& settings = {}) const;

  int horizon() const { return pred_.horizon; }
  /// False when some tightened row is violated by every V (detected offline).
  bool structurally_feasible() const { return !trivially_infeasible_; }
  Index num_rows() const { return G_.rows(); }

 private:
  CondensedPrediction pred_;
  Mat H_, F_, C_;
  Mat G_, Gx_;
  Vec g0_;
  bool trivially_infeasible_ = false;
};

}  // namespace resmpc
