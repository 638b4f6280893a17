#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "resmpc/log.hpp"
#include "resmpc/rmpc.hpp"
#include "resmpc/sim.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kBundleError = 3;
constexpr int kSolverError = 4;

std::shared_ptr<const resmpc::ConstraintBundle> load_checked(const std::string& path, const resmpc::Scenario& s) {
  auto bundle = std::make_shared<resmpc::ConstraintBundle>(resmpc::load_bundle(path));
  if (bundle->fingerprint != resmpc::model_fingerprint(resmpc::model_params(s.model()))) {
    throw resmpc::BundleError("bundle " + path + " was prepared for a different model");
  }
  if (bundle->cost.N != s.N) throw resmpc::BundleError("bundle horizon differs from the scenario's N");
  return bundle;
}

int cmd_prepare(const std::string& config, const std::string& out, unsigned threads) {
  const resmpc::Scenario s = resmpc::load_scenario(config);
  resmpc::PrepareOptions opts;
  opts.threads = threads;
  const resmpc::ConstraintBundle b = resmpc::prepare(s.model(), s.grid(), s.cost(), opts);
  resmpc::save_bundle(b, out);
  std::cout << "prepared " << b.entries.size() << " grid entries (" << b.num_feasible() << " feasible) -> " << out
            << '\n';
  for (const auto& e : b.entries) {
    std::cout << "  q=" << e.q << " omega=" << e.omega_level << " |y|=" << e.ynorm_level
              << (e.feasible ? " feasible, facets=" + std::to_string(e.terminal_set.num_facets()) +
                                   ", usable horizon=" + std::to_string(e.tube.usable_horizon)
                             : " infeasible: " + e.reason)
              << '\n';
  }
  return kOk;
}

int cmd_run(const std::string& config, const std::string& bundle_path, const std::string& controller,
            std::uint64_t seed, const std::string& out, bool timing) {
  resmpc::Scenario s = resmpc::load_scenario(config);
  resmpc::ClosedLoopController c = [&] {
    if (controller == "nominal-mpc") return resmpc::ClosedLoopController::baseline(s);
    if (bundle_path.empty()) throw resmpc::ConfigError("--bundle is required for the resilient controller");
    return resmpc::ClosedLoopController::resilient(load_checked(bundle_path, s), s.detector.inflation);
  }();
  resmpc::RunOptions opts;
  opts.noise_seed = seed;
  opts.record_timing = timing;
  const resmpc::SimTrace trace = resmpc::run_closed_loop(s, c, opts);
  resmpc::write_trace_csv(trace, out);
  const auto& sum = trace.summary;
  std::cout << "steps=" << sum.steps << " total_cost=" << sum.total_cost << " final_inf_norm=" << sum.final_state_inf_norm
            << " convergence_time=" << sum.convergence_time << " feasibility_failures=" << sum.feasibility_failures
            << " recursive_violations=" << sum.recursive_feasibility_violations << '\n';
  return kOk;
}

int cmd_compare(const std::string& config, const std::string& bundle_path, int runs, const std::string& out_dir,
                unsigned threads, bool timing) {
  const resmpc::Scenario s = resmpc::load_scenario(config);
  if (runs <= 0) runs = s.compare_runs;
  if (threads == 0) threads = s.compare_threads;
  const resmpc::CompareSummary sum = resmpc::compare(s, load_checked(bundle_path, s), runs, threads, timing);
  resmpc::write_compare_outputs(sum, out_dir);
  std::cout << "mean cost resilient=" << sum.mean_resilient << " baseline=" << sum.mean_baseline
            << " improvement=" << sum.improvement << " wins=" << sum.resilient_wins << '/' << sum.runs.size() << '\n';
  return kOk;
}

int cmd_detect_demo(const std::string& config, const std::string& out, std::uint64_t seed) {
  const resmpc::Scenario s = resmpc::load_scenario(config);
  const auto rows = resmpc::run_detect_demo(s, seed);
  resmpc::write_detect_csv(rows, out);
  std::size_t flags = 0, active = 0, hits = 0;
  for (const auto& r : rows) {
    flags += r.flag;
    active += r.attack;
    hits += r.flag && r.attack;
  }
  std::cout << "samples=" << rows.size() << " flags=" << flags << " active=" << active << " detected_active=" << hits
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resilient adaptive-horizon MPC under actuator DoS"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "warning";
  app.add_option("--log-level", log_level, "debug|info|warning|error|off")
      ->check(CLI::IsMember({"debug", "info", "warning", "error", "off"}));

  std::string config, out, bundle, controller = "resilient", out_dir;
  std::uint64_t seed = 1;
  int runs = 0;
  unsigned threads = 0;
  bool timing = false;

  auto* prepare = app.add_subcommand("prepare", "Offline constraint preparation over the bound grid");
  prepare->add_option("--config", config, "Scenario YAML")->required();
  prepare->add_option("--out", out, "Bundle output path")->required();
  prepare->add_option("--threads", threads, "Worker threads");

  auto* run = app.add_subcommand("run", "Closed-loop simulation of one scenario");
  run->add_option("--config", config)->required();
  run->add_option("--bundle", bundle);
  run->add_option("--controller", controller)->check(CLI::IsMember({"resilient", "nominal-mpc"}));
  run->add_option("--seed", seed);
  run->add_option("--out", out)->required();
  run->add_flag("--timing", timing, "Record wall-clock solve times in the trace");

  auto* cmp = app.add_subcommand("compare", "Paired comparison against the baseline MPC");
  cmp->add_option("--config", config)->required();
  cmp->add_option("--bundle", bundle)->required();
  cmp->add_option("--runs", runs);
  cmp->add_option("--out-dir", out_dir)->required();
  cmp->add_option("--threads", threads);
  cmp->add_flag("--timing", timing);

  auto* demo = app.add_subcommand("detect-demo", "Detector residual, flag and intensity traces");
  demo->add_option("--config", config)->required();
  demo->add_option("--out", out)->required();
  demo->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  const resmpc::LogLevel level = log_level == "debug"   ? resmpc::LogLevel::Debug
                                 : log_level == "info"  ? resmpc::LogLevel::Info
                                 : log_level == "error" ? resmpc::LogLevel::Error
                                 : log_level == "off"   ? resmpc::LogLevel::Off
                                                        : resmpc::LogLevel::Warning;
  resmpc::set_log_level(level);

  try {
    if (prepare->parsed()) return cmd_prepare(config, out, threads == 0 ? 1 : threads);
    if (run->parsed()) return cmd_run(config, bundle, controller, seed, out, timing);
    if (cmp->parsed()) return cmd_compare(config, bundle, runs, out_dir, threads, timing);
    if (demo->parsed()) return cmd_detect_demo(config, out, seed);
  } catch (const resmpc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const resmpc::BundleError& e) {
    std::cerr << "bundle error: " << e.what() << '\n';
    return kBundleError;
  } catch (const resmpc::QpError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolverError;
  } catch (const resmpc::DetectorError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolverError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolverError;
  }
  return kOk;
}
