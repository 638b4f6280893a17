#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "resmpc/sim.hpp"

namespace resmpc {
namespace {

void check_keys(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ConfigError(where + ": expected a mapping");
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get(const YAML::Node& node, const std::string& where) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

Vec vec_of(const YAML::Node& node, const std::string& where, Index n = -1) {
  if (!node.IsSequence()) throw ConfigError(where + ": expected a list");
  Vec v(static_cast<Index>(node.size()));
  for (std::size_t i = 0; i < node.size(); ++i) v(static_cast<Index>(i)) = get<double>(node[i], where);
  if (n >= 0 && v.size() != n) throw ConfigError(where + ": expected " + std::to_string(n) + " entries");
  return v;
}

// Either a list of diagonal entries or a list of rows.
Mat mat_of(const YAML::Node& node, const std::string& where, Index n) {
  if (!node.IsSequence() || node.size() == 0) throw ConfigError(where + ": expected a list");
  if (!node[0].IsSequence()) return vec_of(node, where, n).asDiagonal();
  if (static_cast<Index>(node.size()) != n) throw ConfigError(where + ": wrong row count");
  Mat M(n, n);
  for (Index i = 0; i < n; ++i) M.row(i) = vec_of(node[static_cast<std::size_t>(i)], where, n).transpose();
  return M;
}

template <class F>
void with(const YAML::Node& parent, const char* key, F&& f) {
  const YAML::Node node = parent[key];
  if (node) f(node);
}

Box box_of(const YAML::Node& node, const std::string& where, Index n) {
  check_keys(node, where, {"lower", "upper"});
  try {
    return Box(vec_of(node["lower"], where + ".lower", n), vec_of(node["upper"], where + ".upper", n));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

void Scenario::validate() const {
  try {
    acc.validate();
    noise.validate();
    attack.validate();
    detector.kalman.validate();
    if (eta.size() != 3 || (eta.array() < 0).any()) throw std::invalid_argument("eta must have 3 nonnegative entries");
    if (state_box.dim() != 3 || input_box.dim() != 1) throw std::invalid_argument("state box must be 3-D, input box 1-D");
    if (!(tau > 0.0) || !(duration > 0.0)) throw std::invalid_argument("tau and duration must be positive");
    if (N < 1) throw std::invalid_argument("N must be >= 1");
    if (!(grid_omega_bar >= 0.0 && grid_omega_bar <= 1.0)) throw std::invalid_argument("grid omega_bar must lie in [0, 1]");
    if (n_omega < 1 || n_ynorm < 1) throw std::invalid_argument("grid sizes must be positive");
    if (attack.kind != AttackKind::None && attack.mean_duty() > grid_omega_bar + 1e-12) {
      throw std::invalid_argument("attack duty exceeds the grid's omega_bar");
    }
    if (x0.size() != 3 || !state_box.contains(x0)) throw std::invalid_argument("initial_state must lie in the state box");
    if (init_box.dim() != 3) throw std::invalid_argument("compare init box must be 3-D");
    if (!(detector.inflation >= 1.0)) throw std::invalid_argument("detector inflation must be >= 1");
    if (compare_runs < 1) throw std::invalid_argument("compare runs must be >= 1");
    const double ratio = tau / detector.kalman.t_sample;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) throw std::invalid_argument("tau must be a multiple of t_sample");
    cost().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
}

ContinuousPlant Scenario::plant() const {
  return build_acc_model(acc, eta, HPolytope::from_box(state_box), HPolytope::from_box(input_box));
}

UncertainModel Scenario::model() const { return UncertainModel(plant(), noise, tau); }

BoundGrid Scenario::grid() const {
  return build_grid(grid_omega_bar, model().measurement_norm_sup(), n_omega, n_ynorm);
}

CostSpec Scenario::cost() const { return CostSpec{Q, R, Mat(), N}; }

PlantConfig Scenario::plant_config() const {
  return PlantConfig{plant(), noise, tau, detector.kalman.t_sample, distribution, nonlinearity};
}

std::size_t Scenario::detector_window() const {
  if (detector.window > 0) return detector.window;
  const double per_step = tau / detector.kalman.t_sample;
  if (attack.kind == AttackKind::Periodic) {
    return static_cast<std::size_t>(std::lround(attack.period * per_step));
  }
  return 100;
}

long Scenario::num_steps() const { return static_cast<long>(std::lround(duration / tau)); }

Scenario parse_scenario(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("scenario: YAML error: ") + e.what());
  }
  check_keys(root, "scenario", {"name", "plant", "constraints", "noise", "timing", "controller", "grid", "attack",
                                "detector", "initial_state", "seeds", "compare", "excitation"});
  Scenario s;
  s.eta = Vec::Constant(3, 0.01);
  s.state_box = Box((Vec(3) << -100, -100, -100).finished(), (Vec(3) << 10, 100, 100).finished());
  s.input_box = Box(Vec::Constant(1, -20.0), Vec::Constant(1, 20.0));
  s.noise = NoiseSpec{Mat::Identity(3, 3) * 0.01, Vec::Constant(3, 0.1), Vec::Constant(3, 0.01)};
  s.Q = Mat::Identity(3, 3) * 10.0;
  s.R = Mat::Identity(1, 1) * 2.0;
  s.detector.kalman = KalmanConfig{Mat::Identity(3, 3) * 0.01, Mat::Identity(3, 3) * 0.01, Mat::Identity(3, 3) * 0.1,
                                   0.01, kChiSquare3Q99};
  s.x0 = Vec::Zero(3);
  s.init_box = Box(Vec::Constant(3, -5.0), Vec::Constant(3, 5.0));

  with(root, "name", [&](const YAML::Node& n) { s.name = get<std::string>(n, "name"); });
  with(root, "plant", [&](const YAML::Node& n) {
    check_keys(n, "plant", {"T_hw", "T_eng", "K_eng", "d_0", "eta", "nonlinearity"});
    with(n, "T_hw", [&](const YAML::Node& v) { s.acc.T_hw = get<double>(v, "plant.T_hw"); });
    with(n, "T_eng", [&](const YAML::Node& v) { s.acc.T_eng = get<double>(v, "plant.T_eng"); });
    with(n, "K_eng", [&](const YAML::Node& v) { s.acc.K_eng = get<double>(v, "plant.K_eng"); });
    with(n, "d_0", [&](const YAML::Node& v) { s.acc.d_0 = get<double>(v, "plant.d_0"); });
    with(n, "eta", [&](const YAML::Node& v) { s.eta = vec_of(v, "plant.eta", 3); });
    with(n, "nonlinearity", [&](const YAML::Node& v) {
      const std::string k = get<std::string>(v, "plant.nonlinearity");
      if (k == "sine") s.nonlinearity = Nonlinearity::Sine;
      else if (k == "none") s.nonlinearity = Nonlinearity::None;
      else throw ConfigError("plant.nonlinearity: expected sine or none");
    });
  });
  with(root, "constraints", [&](const YAML::Node& n) {
    check_keys(n, "constraints", {"state", "input"});
    with(n, "state", [&](const YAML::Node& v) { s.state_box = box_of(v, "constraints.state", 3); });
    with(n, "input", [&](const YAML::Node& v) { s.input_box = box_of(v, "constraints.input", 1); });
  });
  with(root, "noise", [&](const YAML::Node& n) {
    check_keys(n, "noise", {"chi_bar", "eps_bar", "d_bar", "distribution"});
    with(n, "chi_bar", [&](const YAML::Node& v) { s.noise.chi_bar = mat_of(v, "noise.chi_bar", 3); });
    with(n, "eps_bar", [&](const YAML::Node& v) { s.noise.eps_bar = vec_of(v, "noise.eps_bar", 3); });
    with(n, "d_bar", [&](const YAML::Node& v) { s.noise.d_bar = vec_of(v, "noise.d_bar", 3); });
    with(n, "distribution", [&](const YAML::Node& v) {
      const std::string k = get<std::string>(v, "noise.distribution");
      if (k == "uniform") s.distribution = NoiseDistribution::Uniform;
      else if (k == "gaussian") s.distribution = NoiseDistribution::TruncatedGaussian;
      else throw ConfigError("noise.distribution: expected uniform or gaussian");
    });
  });
  with(root, "timing", [&](const YAML::Node& n) {
    check_keys(n, "timing", {"tau", "duration"});
    with(n, "tau", [&](const YAML::Node& v) { s.tau = get<double>(v, "timing.tau"); });
    with(n, "duration", [&](const YAML::Node& v) { s.duration = get<double>(v, "timing.duration"); });
  });
  with(root, "controller", [&](const YAML::Node& n) {
    check_keys(n, "controller", {"kind", "N", "Q", "R", "omega_inflation"});
    with(n, "kind", [&](const YAML::Node& v) {
      const std::string k = get<std::string>(v, "controller.kind");
      if (k == "resilient") s.controller = ControllerKind::Resilient;
      else if (k == "nominal-mpc") s.controller = ControllerKind::NominalMpc;
      else throw ConfigError("controller.kind: expected resilient or nominal-mpc");
    });
    with(n, "N", [&](const YAML::Node& v) { s.N = get<int>(v, "controller.N"); });
    with(n, "Q", [&](const YAML::Node& v) { s.Q = mat_of(v, "controller.Q", 3); });
    with(n, "R", [&](const YAML::Node& v) { s.R = mat_of(v, "controller.R", 1); });
    with(n, "omega_inflation", [&](const YAML::Node& v) { s.detector.inflation = get<double>(v, "controller.omega_inflation"); });
  });
  with(root, "grid", [&](const YAML::Node& n) {
    check_keys(n, "grid", {"omega_bar", "n_omega", "n_ynorm"});
    with(n, "omega_bar", [&](const YAML::Node& v) { s.grid_omega_bar = get<double>(v, "grid.omega_bar"); });
    with(n, "n_omega", [&](const YAML::Node& v) { s.n_omega = get<int>(v, "grid.n_omega"); });
    with(n, "n_ynorm", [&](const YAML::Node& v) { s.n_ynorm = get<int>(v, "grid.n_ynorm"); });
  });
  with(root, "attack", [&](const YAML::Node& n) {
    check_keys(n, "attack", {"kind", "start_time", "period", "active_lengths", "shuffle", "seed", "steps"});
    with(n, "kind", [&](const YAML::Node& v) {
      const std::string k = get<std::string>(v, "attack.kind");
      if (k == "none") s.attack.kind = AttackKind::None;
      else if (k == "periodic") s.attack.kind = AttackKind::Periodic;
      else if (k == "scripted") s.attack.kind = AttackKind::Scripted;
      else throw ConfigError("attack.kind: expected none, periodic or scripted");
    });
    with(n, "start_time", [&](const YAML::Node& v) { s.attack.start_time = get<double>(v, "attack.start_time"); });
    with(n, "period", [&](const YAML::Node& v) { s.attack.period = get<int>(v, "attack.period"); });
    with(n, "active_lengths", [&](const YAML::Node& v) { s.attack.active_lengths = get<std::vector<int>>(v, "attack.active_lengths"); });
    with(n, "shuffle", [&](const YAML::Node& v) { s.attack.shuffle = get<bool>(v, "attack.shuffle"); });
    with(n, "seed", [&](const YAML::Node& v) { s.attack.seed = get<std::uint64_t>(v, "attack.seed"); });
    with(n, "steps", [&](const YAML::Node& v) {
      s.attack.scripted_steps = get<std::vector<int>>(v, "attack.steps");
      std::sort(s.attack.scripted_steps.begin(), s.attack.scripted_steps.end());
    });
  });
  with(root, "detector", [&](const YAML::Node& n) {
    check_keys(n, "detector", {"t_sample", "Q_f", "R_meas", "P_init", "threshold", "window"});
    KalmanConfig& k = s.detector.kalman;
    with(n, "t_sample", [&](const YAML::Node& v) { k.t_sample = get<double>(v, "detector.t_sample"); });
    with(n, "Q_f", [&](const YAML::Node& v) { k.Q_f = mat_of(v, "detector.Q_f", 3); });
    with(n, "R_meas", [&](const YAML::Node& v) { k.R_meas = mat_of(v, "detector.R_meas", 3); });
    with(n, "P_init", [&](const YAML::Node& v) { k.P_init = mat_of(v, "detector.P_init", 3); });
    with(n, "threshold", [&](const YAML::Node& v) { k.T = get<double>(v, "detector.threshold"); });
    with(n, "window", [&](const YAML::Node& v) { s.detector.window = get<std::size_t>(v, "detector.window"); });
  });
  with(root, "initial_state", [&](const YAML::Node& n) { s.x0 = vec_of(n, "initial_state", 3); });
  with(root, "seeds", [&](const YAML::Node& n) {
    check_keys(n, "seeds", {"noise", "init"});
    with(n, "noise", [&](const YAML::Node& v) { s.noise_seed = get<std::uint64_t>(v, "seeds.noise"); });
    with(n, "init", [&](const YAML::Node& v) { s.init_seed = get<std::uint64_t>(v, "seeds.init"); });
  });
  with(root, "compare", [&](const YAML::Node& n) {
    check_keys(n, "compare", {"runs", "threads", "init"});
    with(n, "runs", [&](const YAML::Node& v) { s.compare_runs = get<int>(v, "compare.runs"); });
    with(n, "threads", [&](const YAML::Node& v) { s.compare_threads = get<unsigned>(v, "compare.threads"); });
    with(n, "init", [&](const YAML::Node& v) { s.init_box = box_of(v, "compare.init", 3); });
  });
  with(root, "excitation", [&](const YAML::Node& n) {
    check_keys(n, "excitation", {"kind", "amplitude", "period"});
    with(n, "kind", [&](const YAML::Node& v) {
      const std::string k = get<std::string>(v, "excitation.kind");
      if (k == "square") s.excitation.kind = ExcitationKind::Square;
      else if (k == "sine") s.excitation.kind = ExcitationKind::Sine;
      else throw ConfigError("excitation.kind: expected square or sine");
    });
    with(n, "amplitude", [&](const YAML::Node& v) { s.excitation.amplitude = get<double>(v, "excitation.amplitude"); });
    with(n, "period", [&](const YAML::Node& v) { s.excitation.period = get<double>(v, "excitation.period"); });
  });
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

}  // namespace resmpc
