#pragma once

#include <cstddef>
#include <vector>

#include "resmpc/polytope.hpp"
#include "resmpc/types.hpp"

namespace resmpc {

/// Continuous-time plant  xdot = A x + Delta(x) + B u  with
/// |Delta_i(x) - Delta_i(y)| <= eta_i ||x - y||, x in domain, u in input_set.
struct ContinuousPlant {
  Mat A;
  Mat B;
  Vec eta;
  HPolytope domain;
  HPolytope input_set;

  Index state_dim() const { return A.rows(); }
  Index input_dim() const { return B.cols(); }
  void validate() const;
};

/// Measurement y = (I + chi) x + eps with |chi| <= chi_bar (diagonal),
/// |eps| <= eps_bar, and lumped process disturbance |d| <= d_bar.
struct NoiseSpec {
  Mat chi_bar;
  Vec eps_bar;
  Vec d_bar;

  static NoiseSpec zero(Index n);
  void validate() const;
};

struct DiscreteModel {
  Mat A_tau;
  Mat B_tau;
  double tau = 0.0;
};

/// Forward Euler: A_tau = I + A tau, B_tau = B tau.
DiscreteModel discretize(const ContinuousPlant& plant, double tau);

struct ParametricVertices {
  std::vector<Mat> pi_a;
  std::vector<Mat> pi_b;
};

/// Vertices of the matrix polytopes
///   pi_a = { S chi_bar A_tau }
///   pi_b = { (S chi_bar - (I + S chi_bar) w) B_tau : w in {0, omega_bar} }
/// over all sign matrices S = diag(+-1). Vertex k uses bit i of k for the
/// sign of row i (set bit = +1); pi_b lists w = 0 first.
ParametricVertices parametric_vertices(const Mat& A_tau, const Mat& B_tau, const Mat& chi_bar,
                                       double omega_bar);

/// Componentwise bound on the additive disturbance of the equivalent model:
///   delta_i = (1 + chi_i) tau ||(I - chi)^-1||_2 (y_norm + ||eps_bar||_2) eta_i
///             + (1 + chi_i) d_bar_i + eps_bar_i
Vec additive_bound(const NoiseSpec& noise, const Vec& eta, double tau, double y_norm_bound);

/// Uncertain discrete model  x+ = (A_tau + dA) x + (B_tau + dB) u + d,
/// dA in conv(pi_a), dB in conv(pi_b(omega_bar)), |d| <= delta_hat(||y||).
class UncertainModel {
 public:
  UncertainModel(const ContinuousPlant& plant, NoiseSpec noise, double tau);

  const Mat& A_tau() const { return discrete_.A_tau; }
  const Mat& B_tau() const { return discrete_.B_tau; }
  double tau() const { return discrete_.tau; }
  const ContinuousPlant& plant() const { return plant_; }
  const NoiseSpec& noise() const { return noise_; }
  const std::vector<Mat>& pi_a_vertices() const { return pi_a_; }

  std::vector<Mat> pi_b_vertices_at(double omega_bar) const;
  Vec delta_hat(double y_norm_bound) const;

  /// (1 + max chi_i) max_{x in D} ||x|| + ||eps_bar||, over the vertices of D.
  double measurement_norm_sup() const;

 private:
  ContinuousPlant plant_;
  NoiseSpec noise_;
  DiscreteModel discrete_;
  std::vector<Mat> pi_a_;
};

struct GridEntry {
  std::size_t q = 0;  ///< 1-based
  std::size_t omega_index = 0;
  std::size_t ynorm_index = 0;
  double omega_level = 0.0;
  double ynorm_level = 0.0;
};

/// Grid of (attack-intensity, measurement-norm) bound pairs, enumerated
/// omega-major with q starting at 1.
struct BoundGrid {
  std::vector<double> omega_levels;
  std::vector<double> ynorm_levels;

  std::size_t size() const { return omega_levels.size() * ynorm_levels.size(); }
  GridEntry entry(std::size_t q) const;
  std::size_t index_of(std::size_t omega_index, std::size_t ynorm_index) const {
    return omega_index * ynorm_levels.size() + ynorm_index + 1;
  }
  double omega_bar() const { return omega_levels.back(); }
  double y_sup() const { return ynorm_levels.back(); }
};

/// Inclusive linspace in both directions. A single level sits at the upper
/// bound.
BoundGrid build_grid(double omega_bar, double y_sup, int n_omega, int n_ynorm);

struct GridSelection {
  std::size_t q = 0;
  bool omega_clamped = false;
  bool ynorm_saturated = false;
};

/// Least conservative entry with omega level >= omega_hat and norm level >=
/// y_norm. Out-of-range values are clamped to the top level and logged.
GridSelection select_grid(const BoundGrid& grid, double omega_hat, double y_norm);
std::size_t select_grid_index(const BoundGrid& grid, double omega_hat, double y_norm);

}  // namespace resmpc
