#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "resmpc/sim.hpp"

namespace resmpc {

void AccParams::validate() const {
  if (!(T_hw >= 0.0) || !(T_eng > 0.0) || !(K_eng > 0.0) || !(d_0 >= 0.0)) {
    throw std::invalid_argument("acc: T_eng and K_eng must be positive, T_hw and d_0 nonnegative");
  }
}

ContinuousPlant build_acc_model(const AccParams& p, const Vec& eta, const HPolytope& domain,
                                const HPolytope& input_set) {
  p.validate();
  const double A_f = -1.0 / p.T_eng;
  const double B_f = -p.K_eng / p.T_eng;
  Mat A(3, 3);
  A << 0.0, 1.0, -p.T_hw,
       0.0, 0.0, -1.0,
       0.0, 0.0, A_f;
  Mat B(3, 1);
  B << 0.0, 0.0, B_f;
  ContinuousPlant plant{A, B, eta, domain, input_set};
  plant.validate();
  return plant;
}

void AttackSchedule::validate() const {
  if (kind != AttackKind::Periodic) return;
  if (period < 1) throw std::invalid_argument("attack: period must be >= 1");
  if (active_lengths.empty()) throw std::invalid_argument("attack: active_lengths must be nonempty");
  for (int a : active_lengths) {
    if (a < 0 || a > period) throw std::invalid_argument("attack: active length outside [0, period]");
  }
  if (start_time < 0.0) throw std::invalid_argument("attack: start_time must be >= 0");
}

double AttackSchedule::peak_duty() const {
  if (kind == AttackKind::None) return 0.0;
  if (kind == AttackKind::Scripted) return scripted_steps.empty() ? 0.0 : 1.0;
  return static_cast<double>(*std::max_element(active_lengths.begin(), active_lengths.end())) / period;
}

double AttackSchedule::mean_duty() const {
  if (kind != AttackKind::Periodic) return peak_duty();
  const double sum = std::accumulate(active_lengths.begin(), active_lengths.end(), 0.0);
  return sum / (static_cast<double>(period) * static_cast<double>(active_lengths.size()));
}

bool attack_active(const AttackSchedule& s, long t_step, double tau) {
  if (t_step < 0) throw std::invalid_argument("attack_active: negative step");
  const long start = static_cast<long>(std::ceil(s.start_time / tau - 1e-9));
  switch (s.kind) {
    case AttackKind::None:
      return false;
    case AttackKind::Scripted:
      return t_step >= start && std::binary_search(s.scripted_steps.begin(), s.scripted_steps.end(), static_cast<int>(t_step));
    case AttackKind::Periodic:
      break;
  }
  if (t_step < start) return false;
  const long rel = t_step - start;
  const long p = rel / s.period;
  const long within = rel % s.period;
  const long L = static_cast<long>(s.active_lengths.size());
  const long cycle = p / L;
  std::size_t slot = static_cast<std::size_t>(p % L);
  if (s.shuffle) {
    std::vector<std::size_t> order(static_cast<std::size_t>(L));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(s.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(cycle));
    std::shuffle(order.begin(), order.end(), rng);
    slot = order[slot];
  }
  return within < s.active_lengths[slot];
}

double Excitation::value(double t) const {
  const double phase = 2.0 * std::numbers::pi * t / period;
  if (kind == ExcitationKind::Sine) return amplitude * std::sin(phase);
  return std::sin(phase) >= 0.0 ? amplitude : -amplitude;
}

}  // namespace resmpc
