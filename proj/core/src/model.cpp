#include "resmpc/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "resmpc/log.hpp"

namespace resmpc {
namespace {

bool is_diagonal(const Mat& M) {
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) {
      if (i != j && M(i, j) != 0.0) return false;
    }
  }
  return true;
}

void check_chi_bar(const Mat& chi_bar, Index n) {
  if (chi_bar.rows() != n || chi_bar.cols() != n) throw DimensionError("chi_bar must be n x n");
  if (!is_diagonal(chi_bar)) throw std::invalid_argument("chi_bar must be diagonal");
  for (Index i = 0; i < n; ++i) {
    const double c = chi_bar(i, i);
    if (!(c >= 0.0 && c < 1.0)) {
      throw std::invalid_argument("chi_bar entries must lie in [0, 1)");
    }
  }
}

Mat sign_matrix(std::size_t mask, Index n) {
  Mat S = Mat::Zero(n, n);
  for (Index i = 0; i < n; ++i) S(i, i) = (mask >> static_cast<std::size_t>(i)) & 1U ? 1.0 : -1.0;
  return S;
}

// Smallest level >= value, allowing for rounding in the level arithmetic.
std::size_t ceil_level(const std::vector<double>& levels, double value) {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double slack = 1e-12 * std::max(1.0, std::abs(levels[i]));
    if (value <= levels[i] + slack) return i;
  }
  return levels.size() - 1;
}

std::vector<double> linspace(double lo, double hi, int count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = hi;
    return out;
  }
  for (int k = 0; k < count; ++k) {
    out[static_cast<std::size_t>(k)] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  }
  out.back() = hi;
  return out;
}

}  // namespace

void ContinuousPlant::validate() const {
  const Index n = A.rows();
  if (A.cols() != n) throw DimensionError("plant: A must be square");
  if (B.rows() != n) throw DimensionError("plant: B row count must match A");
  if (eta.size() != n) throw DimensionError("plant: eta must have n entries");
  if ((eta.array() < 0.0).any()) throw std::invalid_argument("plant: eta must be nonnegative");
  if (domain.dim() != n) throw DimensionError("plant: domain dimension must be n");
  if (input_set.dim() != B.cols()) throw DimensionError("plant: input set dimension must be m");
  if (check_empty(domain) || check_empty(input_set)) throw std::invalid_argument("plant: D and U must be nonempty");
}

NoiseSpec NoiseSpec::zero(Index n) { return {Mat::Zero(n, n), Vec::Zero(n), Vec::Zero(n)}; }

void NoiseSpec::validate() const {
  const Index n = eps_bar.size();
  check_chi_bar(chi_bar, n);
  if (d_bar.size() != n) throw DimensionError("noise: d_bar must have n entries");
  if ((eps_bar.array() < 0.0).any() || (d_bar.array() < 0.0).any()) {
    throw std::invalid_argument("noise: bounds must be nonnegative");
  }
}

DiscreteModel discretize(const ContinuousPlant& plant, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("discretize: tau must be positive");
  const Index n = plant.A.rows();
  return {Mat::Identity(n, n) + plant.A * tau, plant.B * tau, tau};
}

ParametricVertices parametric_vertices(const Mat& A_tau, const Mat& B_tau, const Mat& chi_bar,
                                       double omega_bar) {
  const Index n = A_tau.rows();
  check_chi_bar(chi_bar, n);
  if (B_tau.rows() != n) throw DimensionError("parametric_vertices: B_tau rows");
  if (!(omega_bar >= 0.0 && omega_bar <= 1.0)) {
    throw std::invalid_argument("parametric_vertices: omega_bar must lie in [0, 1]");
  }
  const std::size_t count = std::size_t{1} << static_cast<std::size_t>(n);
  const Mat I = Mat::Identity(n, n);
  ParametricVertices out;
  out.pi_a.reserve(count);
  out.pi_b.reserve(2 * count);
  for (std::size_t mask = 0; mask < count; ++mask) {
    const Mat chi = sign_matrix(mask, n) * chi_bar;
    out.pi_a.push_back(chi * A_tau);
  }
  for (double w : {0.0, omega_bar}) {
    for (std::size_t mask = 0; mask < count; ++mask) {
      const Mat chi = sign_matrix(mask, n) * chi_bar;
      out.pi_b.push_back((chi - (I + chi) * w) * B_tau);
    }
  }
  return out;
}

Vec additive_bound(const NoiseSpec& noise, const Vec& eta, double tau, double y_norm_bound) {
  const Index n = eta.size();
  if (noise.chi_bar.rows() != n || noise.eps_bar.size() != n || noise.d_bar.size() != n) {
    throw DimensionError("additive_bound: dimension mismatch");
  }
  if (!(y_norm_bound >= 0.0)) throw std::invalid_argument("additive_bound: y_norm_bound must be >= 0");
  double inv_norm = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double c = noise.chi_bar(i, i);
    if (!(c < 1.0)) throw std::invalid_argument("additive_bound: chi_bar entries must be < 1");
    inv_norm = std::max(inv_norm, 1.0 / (1.0 - c));
  }
  const double state_norm = inv_norm * (y_norm_bound + noise.eps_bar.norm());
  Vec delta(n);
  for (Index i = 0; i < n; ++i) {
    const double gain = 1.0 + noise.chi_bar(i, i);
    delta(i) = gain * tau * state_norm * eta(i) + gain * noise.d_bar(i) + noise.eps_bar(i);
  }
  return delta;
}

UncertainModel::UncertainModel(const ContinuousPlant& plant, NoiseSpec noise, double tau)
    : plant_(plant), noise_(std::move(noise)), discrete_(discretize(plant, tau)) {
  plant_.validate();
  noise_.validate();
  if (noise_.eps_bar.size() != plant_.state_dim()) throw DimensionError("noise dimension differs from plant");
  pi_a_ = parametric_vertices(discrete_.A_tau, discrete_.B_tau, noise_.chi_bar, 0.0).pi_a;
}

std::vector<Mat> UncertainModel::pi_b_vertices_at(double omega_bar) const {
  return parametric_vertices(discrete_.A_tau, discrete_.B_tau, noise_.chi_bar, omega_bar).pi_b;
}

Vec UncertainModel::delta_hat(double y_norm_bound) const {
  return additive_bound(noise_, plant_.eta, discrete_.tau, y_norm_bound);
}

double UncertainModel::measurement_norm_sup() const {
  const auto vertices = enumerate_vertices(plant_.domain);
  if (vertices.empty()) throw std::invalid_argument("measurement_norm_sup: domain has no vertices");
  double max_norm = 0.0;
  for (const Vec& v : vertices) max_norm = std::max(max_norm, v.norm());
  return (1.0 + noise_.chi_bar.diagonal().maxCoeff()) * max_norm + noise_.eps_bar.norm();
}

GridEntry BoundGrid::entry(std::size_t q) const {
  if (q < 1 || q > size()) throw std::out_of_range("BoundGrid::entry: q out of range");
  GridEntry e;
  e.q = q;
  e.omega_index = (q - 1) / ynorm_levels.size();
  e.ynorm_index = (q - 1) % ynorm_levels.size();
  e.omega_level = omega_levels[e.omega_index];
  e.ynorm_level = ynorm_levels[e.ynorm_index];
  return e;
}

BoundGrid build_grid(double omega_bar, double y_sup, int n_omega, int n_ynorm) {
  if (n_omega < 1 || n_ynorm < 1) throw std::invalid_argument("build_grid: grid sizes must be positive");
  if (!(omega_bar >= 0.0 && omega_bar <= 1.0)) throw std::invalid_argument("build_grid: omega_bar must lie in [0, 1]");
  if (!(y_sup >= 0.0)) throw std::invalid_argument("build_grid: y_sup must be nonnegative");
  if (n_omega > 1 && omega_bar == 0.0) throw std::invalid_argument("build_grid: levels must be strictly ascending");
  if (n_ynorm > 1 && y_sup == 0.0) throw std::invalid_argument("build_grid: levels must be strictly ascending");
  return {linspace(0.0, omega_bar, n_omega), linspace(0.0, y_sup, n_ynorm)};
}

GridSelection select_grid(const BoundGrid& grid, double omega_hat, double y_norm) {
  GridSelection sel;
  if (omega_hat > grid.omega_bar() * (1.0 + 1e-12) + 1e-15) {
    std::ostringstream msg;
    msg << "omega_hat " << omega_hat << " exceeds omega_bar " << grid.omega_bar() << "; clamped";
    log_warning(msg.str());
    sel.omega_clamped = true;
  }
  if (y_norm > grid.y_sup() * (1.0 + 1e-12) + 1e-15) {
    std::ostringstream msg;
    msg << "measurement norm " << y_norm << " exceeds sup " << grid.y_sup() << "; saturated";
    log_warning(msg.str());
    sel.ynorm_saturated = true;
  }
  const std::size_t wi = ceil_level(grid.omega_levels, std::max(omega_hat, 0.0));
  const std::size_t yi = ceil_level(grid.ynorm_levels, std::max(y_norm, 0.0));
  sel.q = grid.index_of(wi, yi);
  return sel;
}

std::size_t select_grid_index(const BoundGrid& grid, double omega_hat, double y_norm) {
  return select_grid(grid, omega_hat, y_norm).q;
}

}  // namespace resmpc
