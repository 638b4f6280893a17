#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "resmpc/detect.hpp"
#include "resmpc/model.hpp"
#include "resmpc/rmpc.hpp"

namespace resmpc {

struct AccParams {
  double T_hw = 1.6;
  double T_eng = 0.46;
  double K_eng = 0.732;
  double d_0 = 0.0;

  void validate() const;
};

/// Relative-coordinate longitudinal model, x = [spacing error, relative
/// velocity, ego acceleration].
ContinuousPlant build_acc_model(const AccParams& params, const Vec& eta, const HPolytope& domain,
                                const HPolytope& input_set);

enum class AttackKind { None, Periodic, Scripted };

struct AttackSchedule {
  AttackKind kind = AttackKind::None;
  int period = 1;                  ///< control steps
  std::vector<int> active_lengths; ///< cycled, one per period
  double start_time = 0.0;         ///< seconds
  bool shuffle = false;            ///< permute lengths within each cycle
  std::uint64_t seed = 0;
  std::vector<int> scripted_steps; ///< absolute control steps (Scripted)

  void validate() const;
  /// Longest active share of a single period (0 for None).
  double peak_duty() const;
  /// Share of active steps over one full cycle of active lengths.
  double mean_duty() const;
};

bool attack_active(const AttackSchedule& schedule, long t_step, double tau);

enum class NoiseDistribution { Uniform, TruncatedGaussian };
enum class Nonlinearity { None, Sine };

/// Plant simulated at the detector rate and sampled at the control rate.
struct PlantConfig {
  ContinuousPlant plant;
  NoiseSpec noise;
  double tau = 0.2;
  double t_sample = 0.01;
  NoiseDistribution distribution = NoiseDistribution::Uniform;
  Nonlinearity nonlinearity = Nonlinearity::Sine;
};

struct PlantStep {
  Vec x_next;
  Vec y;                    ///< measurement of x_next
  Vec u_applied;
  std::vector<Vec> fine_y;  ///< one measurement per detector sample, last = y
  bool saturated = false;
};

class AccPlant {
 public:
  explicit AccPlant(PlantConfig config);

  Vec nonlinearity(const Vec& x) const;
  Vec measure(const Vec& x, std::mt19937_64& rng) const;
  /// Control-rate update x+ = A_tau x + Delta(x) tau + B_tau u + d (u dropped
  /// when active), with the intermediate detector samples interpolated by the
  /// fine Euler model plus a constant correction that lands on x+.
  PlantStep step(const Vec& x, const Vec& u_commanded, bool active, std::mt19937_64& rng) const;

  const PlantConfig& config() const { return config_; }
  int substeps() const { return substeps_; }
  const Mat& A_tau() const { return A_tau_; }
  const Mat& B_tau() const { return B_tau_; }
  const Mat& A_s() const { return A_s_; }
  const Mat& B_s() const { return B_s_; }

 private:
  double draw(double bound, std::mt19937_64& rng) const;

  PlantConfig config_;
  int substeps_ = 1;
  Mat A_tau_, B_tau_, A_s_, B_s_;
  Mat A_s_pow_;
  Box input_box_;
  Eigen::FullPivLU<Mat> S_lu_;
};

enum class ControllerKind { Resilient, NominalMpc };

struct DetectorSettings {
  KalmanConfig kalman;
  std::size_t window = 0;  ///< 0: one attack period, or 100 samples without one
  double inflation = 1.2;
};

enum class ExcitationKind { Square, Sine };

struct Excitation {
  ExcitationKind kind = ExcitationKind::Square;
  double amplitude = 5.0;
  double period = 2.0;  ///< seconds

  double value(double t) const;
};

struct Scenario {
  std::string name = "scenario";
  AccParams acc;
  Vec eta;
  Nonlinearity nonlinearity = Nonlinearity::Sine;
  Box state_box;
  Box input_box;
  NoiseSpec noise;
  NoiseDistribution distribution = NoiseDistribution::Uniform;
  double tau = 0.2;
  double duration = 30.0;
  int N = 5;
  Mat Q;
  Mat R;
  ControllerKind controller = ControllerKind::Resilient;
  double grid_omega_bar = 1.0;
  int n_omega = 10;
  int n_ynorm = 3;
  AttackSchedule attack;
  DetectorSettings detector;
  Vec x0;
  std::uint64_t noise_seed = 1;
  std::uint64_t init_seed = 2;
  int compare_runs = 20;
  unsigned compare_threads = 1;
  Box init_box;
  Excitation excitation;

  void validate() const;
  ContinuousPlant plant() const;
  UncertainModel model() const;
  BoundGrid grid() const;
  CostSpec cost() const;
  PlantConfig plant_config() const;
  std::size_t detector_window() const;
  long num_steps() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a YAML scenario; unknown keys and malformed values throw ConfigError.
Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& text);

struct TraceRow {
  double t = 0.0;
  Vec x;
  Vec y;
  double u_cmd = 0.0;
  double u_applied = 0.0;
  bool attack = false;
  bool detected = false;
  double omega_hat = 0.0;
  std::size_t q = 0;
  int N_t = 0;
  double stage_cost = 0.0;
  double cum_cost = 0.0;
  double solve_ms = 0.0;
};

struct TraceSummary {
  double total_cost = 0.0;
  double convergence_time = -1.0;  ///< -1 when the final state is outside the band
  long feasibility_failures = 0;
  long recursive_feasibility_violations = 0;
  long domain_violations = 0;
  long steps = 0;
  double mean_solve_ms = 0.0;
  double max_solve_ms = 0.0;
  double final_state_inf_norm = 0.0;
};

struct SimTrace {
  std::vector<TraceRow> rows;
  TraceSummary summary;
};

inline constexpr double kConvergenceBand = 0.1;

struct RunOptions {
  std::uint64_t noise_seed = 1;
  Vec x0;
  std::uint64_t attack_seed = 0;
  bool record_timing = false;
};

/// Controller used by run_closed_loop: the resilient controller over a bundle
/// or the nominal baseline.
class ClosedLoopController {
 public:
  static ClosedLoopController resilient(std::shared_ptr<const ConstraintBundle> bundle, double inflation);
  static ClosedLoopController baseline(const Scenario& scenario);

  struct Action {
    Vec u;
    std::size_t q = 0;
    int N_t = 0;
    bool feasible = true;
  };
  Action act(const Vec& y, double omega_hat) const;
  ControllerKind kind() const { return kind_; }

 private:
  ControllerKind kind_ = ControllerKind::Resilient;
  std::shared_ptr<const ResilientController> resilient_;
  std::shared_ptr<const BaselineMpc> baseline_;
  HPolytope input_set_;
  double inflation_ = 1.2;
};

SimTrace run_closed_loop(const Scenario& scenario, const ClosedLoopController& controller, const RunOptions& options);

std::string trace_header();
void write_trace_csv(const SimTrace& trace, std::ostream& out);
void write_trace_csv(const SimTrace& trace, const std::string& path);
std::vector<TraceRow> read_trace_csv(const std::string& path);

struct DetectDemoRow {
  double t = 0.0;
  bool attack = false;
  double omega_true = 0.0;
  double stat = 0.0;
  bool flag = false;
  double omega_hat = 0.0;
  Vec residual;
};

/// Open-loop excitation at the detector rate under the scenario's attack.
std::vector<DetectDemoRow> run_detect_demo(const Scenario& scenario, std::uint64_t seed);
void write_detect_csv(const std::vector<DetectDemoRow>& rows, const std::string& path);

double improvement_ratio(double baseline_cost, double resilient_cost);

struct CompareRun {
  int index = 0;
  Vec x0;
  double resilient_cost = 0.0;
  double baseline_cost = 0.0;
  SimTrace resilient;
  SimTrace baseline;
};

struct CompareSummary {
  std::vector<CompareRun> runs;
  double mean_resilient = 0.0;
  double mean_baseline = 0.0;
  double improvement = 0.0;
  int resilient_wins = 0;  ///< runs cheaper by more than 1e-9 relative
  double mean_solve_ms_resilient = 0.0;
  double mean_solve_ms_baseline = 0.0;
};

/// Paired-seed comparison over `runs` initial conditions drawn from the
/// scenario's init box. Runs may execute on several threads; results are
/// ordered by run index.
CompareSummary compare(const Scenario& scenario, std::shared_ptr<const ConstraintBundle> bundle, int runs,
                       unsigned threads, bool record_timing = false);

/// Writes per-run CSVs, summary.json, envelopes.csv and timing.json.
void write_compare_outputs(const CompareSummary& summary, const std::string& dir);
std::string compare_summary_json(const CompareSummary& summary);

}  // namespace resmpc
