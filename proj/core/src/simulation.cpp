#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "resmpc/log.hpp"
#include "resmpc/sim.hpp"

namespace resmpc {
namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

double inf_norm(const Vec& v) { return v.cwiseAbs().maxCoeff(); }

}  // namespace

ClosedLoopController ClosedLoopController::resilient(std::shared_ptr<const ConstraintBundle> bundle, double inflation) {
  ClosedLoopController c;
  c.kind_ = ControllerKind::Resilient;
  c.input_set_ = bundle->model.input_set;
  c.resilient_ = std::make_shared<const ResilientController>(std::move(bundle));
  c.inflation_ = inflation;
  return c;
}

ClosedLoopController ClosedLoopController::baseline(const Scenario& scenario) {
  ClosedLoopController c;
  c.kind_ = ControllerKind::NominalMpc;
  const UncertainModel model = scenario.model();
  c.input_set_ = model.plant().input_set;
  c.baseline_ = std::make_shared<const BaselineMpc>(model.A_tau(), model.B_tau(), scenario.cost(),
                                                    model.plant().domain, model.plant().input_set);
  return c;
}

ClosedLoopController::Action ClosedLoopController::act(const Vec& y, double omega_hat) const {
  Action a;
  if (kind_ == ControllerKind::NominalMpc) {
    const BaselineMpc::Result r = baseline_->step(y);
    a.u = r.u;
    a.feasible = r.feasible;
    a.N_t = r.feasible ? 0 : -1;
    return a;
  }
  const ConstraintBundle& b = resilient_->bundle();
  const double omega = std::clamp(inflation_ * omega_hat, 0.0, b.grid.omega_bar());
  try {
    const ControlResult r = resilient_->control_step(y, omega);
    a.u = r.u;
    a.q = r.q;
    a.N_t = r.N_t;
  } catch (const InfeasibleStepError& e) {
    a.q = e.q();
    a.u = saturate(b.entry(e.q()).K * y, input_set_);
    a.N_t = 0;
    a.feasible = false;
  }
  return a;
}

SimTrace run_closed_loop(const Scenario& scenario, const ClosedLoopController& controller, const RunOptions& options) {
  const AccPlant plant(scenario.plant_config());
  const Mat& Q = scenario.Q;
  const Mat& R = scenario.R;
  const Box ubox = scenario.input_box;
  const HPolytope domain = HPolytope::from_box(scenario.state_box);
  AttackSchedule attack = scenario.attack;
  attack.seed += options.attack_seed;

  std::mt19937_64 rng = seeded(options.noise_seed, 0);
  Vec x = options.x0.size() > 0 ? options.x0 : scenario.x0;
  if (x.size() != 3) throw std::invalid_argument("run_closed_loop: initial state must have 3 entries");
  Vec y = plant.measure(x, rng);
  Detector detector(plant.A_s(), plant.B_s(), scenario.detector.kalman, scenario.detector_window(), y);

  SimTrace trace;
  const long steps = scenario.num_steps();
  trace.rows.reserve(static_cast<std::size_t>(steps));
  double omega_hat = 0.0;
  bool detected = false;
  bool prev_feasible = false;
  bool prev_active = true;
  double cum = 0.0;
  double solve_total = 0.0;

  for (long t = 0; t < steps; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    const ClosedLoopController::Action action = controller.act(y, omega_hat);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    solve_total += ms;
    trace.summary.max_solve_ms = std::max(trace.summary.max_solve_ms, ms);
    if (!action.feasible) {
      ++trace.summary.feasibility_failures;
      if (t > 0 && prev_feasible && !prev_active) ++trace.summary.recursive_feasibility_violations;
    }
    const bool active = attack_active(attack, t, scenario.tau);
    const Vec u_cmd = action.u.cwiseMax(ubox.lower()).cwiseMin(ubox.upper());
    const Vec u_app = active ? Vec::Zero(u_cmd.size()) : u_cmd;

    TraceRow row;
    row.t = static_cast<double>(t) * scenario.tau;
    row.x = x;
    row.y = y;
    row.u_cmd = u_cmd(0);
    row.u_applied = u_app(0);
    row.attack = active;
    row.detected = detected;
    row.omega_hat = omega_hat;
    row.q = action.q;
    row.N_t = action.N_t;
    row.stage_cost = y.dot(Q * y) + u_app.dot(R * u_app);
    cum += row.stage_cost;
    row.cum_cost = cum;
    row.solve_ms = options.record_timing ? ms : 0.0;
    trace.rows.push_back(std::move(row));

    const PlantStep ps = plant.step(x, u_cmd, active, rng);
    detected = false;
    for (const Vec& fy : ps.fine_y) {
      const Detector::Sample s = detector.step(u_cmd, fy);
      detected = detected || s.flag;
      omega_hat = s.omega_hat;
    }
    x = ps.x_next;
    y = ps.y;
    if (!contains(domain, x, 1e-9)) ++trace.summary.domain_violations;
    prev_feasible = action.feasible;
    prev_active = active;
  }

  trace.summary.steps = steps;
  trace.summary.total_cost = cum;
  trace.summary.mean_solve_ms = steps > 0 ? solve_total / static_cast<double>(steps) : 0.0;
  trace.summary.final_state_inf_norm = inf_norm(x);
  if (trace.summary.final_state_inf_norm <= kConvergenceBand) {
    long k = steps;
    while (k > 0 && inf_norm(trace.rows[static_cast<std::size_t>(k - 1)].x) <= kConvergenceBand) --k;
    trace.summary.convergence_time = static_cast<double>(k) * scenario.tau;
  }
  return trace;
}

std::vector<DetectDemoRow> run_detect_demo(const Scenario& scenario, std::uint64_t seed) {
  const AccPlant plant(scenario.plant_config());
  const UncertainModel model = scenario.model();
  const Mat K = terminal_weight(model.A_tau(), model.B_tau(), scenario.Q, scenario.R).K;
  std::mt19937_64 rng = seeded(seed, 1);
  Vec x = scenario.x0;
  Vec y = plant.measure(x, rng);
  const std::size_t window = scenario.detector_window();
  Detector detector(plant.A_s(), plant.B_s(), scenario.detector.kalman, window, y);
  FlagHistory truth(window);

  std::vector<DetectDemoRow> rows;
  const long steps = scenario.num_steps();
  const int sub = plant.substeps();
  const double ts = scenario.tau / sub;
  rows.reserve(static_cast<std::size_t>(steps * sub));
  for (long t = 0; t < steps; ++t) {
    const double time = static_cast<double>(t) * scenario.tau;
    const bool active = attack_active(scenario.attack, t, scenario.tau);
    Vec u = K * y;
    u(0) += scenario.excitation.value(time);
    u = u.cwiseMax(scenario.input_box.lower()).cwiseMin(scenario.input_box.upper());
    const PlantStep ps = plant.step(x, u, active, rng);
    for (int j = 0; j < sub; ++j) {
      const Detector::Sample s = detector.step(u, ps.fine_y[static_cast<std::size_t>(j)]);
      truth.push(active);
      DetectDemoRow row;
      row.t = time + (j + 1) * ts;
      row.attack = active;
      row.omega_true = estimate_intensity(truth, window);
      row.stat = s.stat;
      row.flag = s.flag;
      row.omega_hat = s.omega_hat;
      row.residual = s.residual;
      rows.push_back(std::move(row));
    }
    x = ps.x_next;
    y = ps.y;
  }
  return rows;
}

double improvement_ratio(double baseline_cost, double resilient_cost) {
  if (baseline_cost == 0.0) {
    if (resilient_cost == 0.0) return 0.0;
    throw std::invalid_argument("improvement_ratio: baseline cost is zero");
  }
  return (baseline_cost - resilient_cost) / baseline_cost;
}

CompareSummary compare(const Scenario& scenario, std::shared_ptr<const ConstraintBundle> bundle, int runs,
                       unsigned threads, bool record_timing) {
  if (runs < 1) throw std::invalid_argument("compare: runs must be >= 1");
  const ClosedLoopController resilient = ClosedLoopController::resilient(std::move(bundle), scenario.detector.inflation);
  const ClosedLoopController baseline = ClosedLoopController::baseline(scenario);

  CompareSummary summary;
  summary.runs.resize(static_cast<std::size_t>(runs));
  for (int i = 0; i < runs; ++i) {
    std::mt19937_64 rng = seeded(scenario.init_seed, static_cast<std::uint64_t>(i));
    Vec x0(3);
    for (Index k = 0; k < 3; ++k) {
      x0(k) = std::uniform_real_distribution<double>(scenario.init_box.lower()(k), scenario.init_box.upper()(k))(rng);
    }
    summary.runs[static_cast<std::size_t>(i)].index = i;
    summary.runs[static_cast<std::size_t>(i)].x0 = x0;
  }

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < runs; i = next++) {
      CompareRun& run = summary.runs[static_cast<std::size_t>(i)];
      RunOptions opts;
      opts.noise_seed = scenario.noise_seed + static_cast<std::uint64_t>(i);
      opts.attack_seed = static_cast<std::uint64_t>(i);
      opts.x0 = run.x0;
      opts.record_timing = record_timing;
      run.resilient = run_closed_loop(scenario, resilient, opts);
      run.baseline = run_closed_loop(scenario, baseline, opts);
      run.resilient_cost = run.resilient.summary.total_cost;
      run.baseline_cost = run.baseline.summary.total_cost;
    }
  };
  const unsigned n_threads = std::max(1U, std::min(threads, static_cast<unsigned>(runs)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  double sum_r = 0.0, sum_b = 0.0, ms_r = 0.0, ms_b = 0.0;
  for (const CompareRun& run : summary.runs) {
    sum_r += run.resilient_cost;
    sum_b += run.baseline_cost;
    ms_r += run.resilient.summary.mean_solve_ms;
    ms_b += run.baseline.summary.mean_solve_ms;
    if (run.resilient_cost < run.baseline_cost * (1.0 - 1e-9)) ++summary.resilient_wins;
  }
  summary.mean_resilient = sum_r / runs;
  summary.mean_baseline = sum_b / runs;
  summary.improvement = improvement_ratio(summary.mean_baseline, summary.mean_resilient);
  summary.mean_solve_ms_resilient = ms_r / runs;
  summary.mean_solve_ms_baseline = ms_b / runs;
  return summary;
}

std::string compare_summary_json(const CompareSummary& s) {
  using json = nlohmann::ordered_json;
  json root;
  json runs = json::array();
  for (const CompareRun& r : s.runs) {
    runs.push_back(json{{"index", r.index},
                        {"x0", {r.x0(0), r.x0(1), r.x0(2)}},
                        {"resilient_cost", r.resilient_cost},
                        {"baseline_cost", r.baseline_cost},
                        {"improvement_ratio", improvement_ratio(r.baseline_cost, r.resilient_cost)},
                        {"resilient_failures", r.resilient.summary.feasibility_failures},
                        {"resilient_recursive_violations", r.resilient.summary.recursive_feasibility_violations},
                        {"baseline_failures", r.baseline.summary.feasibility_failures},
                        {"resilient_final_norm", r.resilient.summary.final_state_inf_norm},
                        {"baseline_final_norm", r.baseline.summary.final_state_inf_norm}});
  }
  root["runs"] = std::move(runs);
  root["mean_resilient_cost"] = s.mean_resilient;
  root["mean_baseline_cost"] = s.mean_baseline;
  root["improvement_ratio"] = s.improvement;
  root["resilient_wins"] = s.resilient_wins;
  root["run_count"] = s.runs.size();
  root["reference_table"] = json{{"baseline_cost", 9.2163e5},
                                 {"resilient_cost", 5.7300e5},
                                 {"improvement_ratio", improvement_ratio(9.2163e5, 5.7300e5)}};
  return root.dump(2);
}

void write_compare_outputs(const CompareSummary& s, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  char name[64];
  for (const CompareRun& r : s.runs) {
    std::snprintf(name, sizeof name, "run_%02d_resilient.csv", r.index);
    write_trace_csv(r.resilient, (fs::path(dir) / name).string());
    std::snprintf(name, sizeof name, "run_%02d_baseline.csv", r.index);
    write_trace_csv(r.baseline, (fs::path(dir) / name).string());
  }
  {
    std::ofstream out(fs::path(dir) / "summary.json");
    out << compare_summary_json(s) << '\n';
    if (!out) throw std::runtime_error("cannot write summary.json");
  }
  {
    std::ofstream out(fs::path(dir) / "envelopes.csv");
    out.precision(17);
    out << "t";
    for (const char* arm : {"resilient", "baseline"}) {
      for (int k = 1; k <= 3; ++k) {
        for (const char* stat : {"min", "mean", "max"}) out << ',' << arm << "_x" << k << '_' << stat;
      }
    }
    out << '\n';
    const std::size_t steps = s.runs.empty() ? 0 : s.runs.front().resilient.rows.size();
    for (std::size_t t = 0; t < steps; ++t) {
      out << s.runs.front().resilient.rows[t].t;
      for (int arm = 0; arm < 2; ++arm) {
        for (Index k = 0; k < 3; ++k) {
          double lo = kInf, hi = -kInf, sum = 0.0;
          for (const CompareRun& r : s.runs) {
            const double v = (arm == 0 ? r.resilient : r.baseline).rows[t].x(k);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            sum += v;
          }
          out << ',' << lo << ',' << sum / static_cast<double>(s.runs.size()) << ',' << hi;
        }
      }
      out << '\n';
    }
  }
  {
    nlohmann::ordered_json timing;
    timing["mean_solve_ms_resilient"] = s.mean_solve_ms_resilient;
    timing["mean_solve_ms_baseline"] = s.mean_solve_ms_baseline;
    double max_r = 0.0, max_b = 0.0;
    for (const CompareRun& r : s.runs) {
      max_r = std::max(max_r, r.resilient.summary.max_solve_ms);
      max_b = std::max(max_b, r.baseline.summary.max_solve_ms);
    }
    timing["max_solve_ms_resilient"] = max_r;
    timing["max_solve_ms_baseline"] = max_b;
    std::ofstream out(fs::path(dir) / "timing.json");
    out << timing.dump(2) << '\n';
  }
}

}  // namespace resmpc
