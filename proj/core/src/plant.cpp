#include <cmath>
#include <sstream>

#include "resmpc/log.hpp"
#include "resmpc/sim.hpp"

namespace resmpc {

AccPlant::AccPlant(PlantConfig config) : config_(std::move(config)) {
  config_.plant.validate();
  config_.noise.validate();
  const double ratio = config_.tau / config_.t_sample;
  substeps_ = static_cast<int>(std::lround(ratio));
  if (substeps_ < 1 || std::abs(ratio - substeps_) > 1e-9 * ratio) {
    throw std::invalid_argument("plant: tau must be an integer multiple of t_sample");
  }
  const Index n = config_.plant.state_dim();
  const DiscreteModel coarse = discretize(config_.plant, config_.tau);
  const DiscreteModel fine = discretize(config_.plant, config_.t_sample);
  A_tau_ = coarse.A_tau;
  B_tau_ = coarse.B_tau;
  A_s_ = fine.A_tau;
  B_s_ = fine.B_tau;
  Mat S = Mat::Zero(n, n);
  Mat Ak = Mat::Identity(n, n);
  for (int k = 0; k < substeps_; ++k) {
    S += Ak;
    Ak = A_s_ * Ak;
  }
  A_s_pow_ = Ak;
  input_box_ = bounding_box(config_.plant.input_set);
  S_lu_.compute(S);
  if (!S_lu_.isInvertible()) throw std::invalid_argument("plant: fine-rate interpolation is singular");
}

Vec AccPlant::nonlinearity(const Vec& x) const {
  if (config_.nonlinearity == Nonlinearity::None) return Vec::Zero(x.size());
  return config_.plant.eta * std::sin(x.norm());
}

double AccPlant::draw(double bound, std::mt19937_64& rng) const {
  if (config_.distribution == NoiseDistribution::Uniform) {
    const double v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    return bound * v;
  }
  std::normal_distribution<double> normal(0.0, 0.5);
  double v = normal(rng);
  for (int tries = 0; std::abs(v) > 1.0 && tries < 64; ++tries) v = normal(rng);
  return bound * std::clamp(v, -1.0, 1.0);
}

Vec AccPlant::measure(const Vec& x, std::mt19937_64& rng) const {
  const Index n = x.size();
  Vec y(n);
  for (Index i = 0; i < n; ++i) {
    const double chi = draw(config_.noise.chi_bar(i, i), rng);
    const double eps = draw(config_.noise.eps_bar(i), rng);
    y(i) = (1.0 + chi) * x(i) + eps;
  }
  return y;
}

PlantStep AccPlant::step(const Vec& x, const Vec& u_commanded, bool active, std::mt19937_64& rng) const {
  const Index n = x.size();
  PlantStep out;
  Vec u = u_commanded.cwiseMax(input_box_.lower()).cwiseMin(input_box_.upper());
  if ((u - u_commanded).cwiseAbs().maxCoeff() > 0.0) {
    out.saturated = true;
    log_debug("plant: commanded input saturated");
  }
  if (!contains(config_.plant.domain, x, 1e-9)) log_debug("plant: state outside the domain");
  out.u_applied = active ? Vec::Zero(u.size()) : u;

  Vec d(n);
  for (Index i = 0; i < n; ++i) d(i) = draw(config_.noise.d_bar(i), rng);
  const Vec drift = nonlinearity(x);
  out.x_next = A_tau_ * x + drift * config_.tau + B_tau_ * out.u_applied + d;

  const Vec per_step = B_s_ * out.u_applied + drift * config_.t_sample;
  const Vec correction = S_lu_.solve(out.x_next - A_s_pow_ * x) - per_step;
  Vec xf = x;
  out.fine_y.reserve(static_cast<std::size_t>(substeps_));
  for (int k = 0; k < substeps_; ++k) {
    xf = A_s_ * xf + per_step + correction;
    if (k + 1 == substeps_) xf = out.x_next;
    out.fine_y.push_back(measure(xf, rng));
  }
  out.y = out.fine_y.back();
  return out;
}

}  // namespace resmpc
