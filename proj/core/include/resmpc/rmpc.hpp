#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "resmpc/condensed.hpp"
#include "resmpc/model.hpp"
#include "resmpc/polytope.hpp"
#include "resmpc/qp.hpp"

namespace resmpc {

struct CostSpec {
  Mat Q;
  Mat R;
  Mat Q_N;
  int N = 1;

  void validate() const;
};

struct TerminalWeight {
  Mat Q_N;
  Mat K;  ///< u = K x
};

class RiccatiError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed point of the discrete Riccati recursion for (A, B, Q, R).
TerminalWeight terminal_weight(const Mat& A_tau, const Mat& B_tau, const Mat& Q, const Mat& R);

/// All closed-loop matrices (A + V_A) + (B + V_B) K over the vertex lists.
/// Index = ia * pi_b.size() + ib.
std::vector<Mat> closed_loop_vertices(const Mat& A_tau, const Mat& B_tau, const std::vector<Mat>& pi_a,
                                      const std::vector<Mat>& pi_b, const Mat& K);

struct GainCertificate {
  Mat K;
  Mat P;
  double worst_eigenvalue = 0.0;  ///< max over vertices of lambda_max(A'PA - P)
};

class GainSynthesisError : public std::runtime_error {
 public:
  GainSynthesisError(const std::string& what, std::size_t vertex, double eigenvalue)
      : std::runtime_error(what), vertex_(vertex), eigenvalue_(eigenvalue) {}
  std::size_t vertex() const { return vertex_; }
  double eigenvalue() const { return eigenvalue_; }

 private:
  std::size_t vertex_;
  double eigenvalue_;
};

inline constexpr double kLyapunovMargin = -1e-10;

/// Nominal LQR gain certified by a common quadratic Lyapunov function over
/// every closed-loop vertex, retrying with a cheaper input weight and then a
/// heavier state weight.
GainCertificate synthesize_gain(const Mat& A_tau, const Mat& B_tau, const std::vector<Mat>& pi_a,
                                const std::vector<Mat>& pi_b, const Mat& Q, const Mat& R);

/// Solves A'PA - P = -W by vectorization.
Mat solve_discrete_lyapunov(const Mat& A, const Mat& W);

struct Tube {
  std::vector<Box> boxes;  ///< E_0..E_N
  Box w;                   ///< per-step additive box (disturbance plus parametric slack)
  /// Largest k <= N such that every tightened state set up to k is nonempty.
  int usable_horizon = 0;
};

/// Box tube of the error dynamics under the vertex closed loops. The
/// parametric slack uses the componentwise radius of `domain_radius`.
Tube build_tube(const std::vector<Mat>& closed_loops, const std::vector<Mat>& pi_a,
                const std::vector<Mat>& pi_b, const Mat& K, const Vec& delta, const Vec& domain_radius,
                int N, const HPolytope& domain);

struct GridControllerData {
  std::size_t q = 0;
  double omega_level = 0.0;
  double ynorm_level = 0.0;
  bool feasible = false;
  std::string reason;
  std::vector<Mat> pi_b;
  Vec delta;
  Mat K;
  Mat lyapunov_P;
  HPolytope terminal_set;
  Tube tube;
};

struct ModelParams {
  Mat A_tau;
  Mat B_tau;
  double tau = 0.0;
  Mat chi_bar;
  Vec eps_bar;
  Vec eta;
  Vec d_bar;
  HPolytope domain;
  HPolytope input_set;
};

ModelParams model_params(const UncertainModel& model);

/// FNV-1a over the raw bytes of A_tau, B_tau, chi_bar, eps_bar, eta, d_bar, tau.
std::uint64_t model_fingerprint(const ModelParams& params);

inline constexpr const char* kBundleVersion = "resmpc-bundle/1";

struct ConstraintBundle {
  std::string version = kBundleVersion;
  std::uint64_t fingerprint = 0;
  ModelParams model;
  BoundGrid grid;
  std::vector<Mat> pi_a;
  CostSpec cost;
  Mat K_nom;
  std::vector<GridControllerData> entries;  ///< entries[q - 1]

  const GridControllerData& entry(std::size_t q) const;
  std::size_t num_feasible() const;
};

class BundleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PrepareOptions {
  RpiOptions rpi{1e-8, 200};
  unsigned threads = 1;
};

/// Offline preparation over every grid entry. Throws BundleError when no
/// entry is usable. `cost.Q_N` is filled from the Riccati fixed point.
ConstraintBundle prepare(const UncertainModel& model, const BoundGrid& grid, CostSpec cost,
                         const PrepareOptions& options = {});

void save_bundle(const ConstraintBundle& bundle, const std::string& path);
/// Throws BundleError on version or fingerprint mismatch.
ConstraintBundle load_bundle(const std::string& path);
std::string bundle_to_json(const ConstraintBundle& bundle);
ConstraintBundle bundle_from_json(const std::string& text);

struct StepResult {
  bool feasible = false;
  Vec u;
  double cost = kInf;
};

struct HorizonResult {
  bool feasible = false;
  Vec u;
  Mat inputs;
  Mat states;
  double cost = kInf;
};

struct ControlDiagnostics {
  std::size_t requested_q = 0;
  bool escalated = false;
  bool omega_clamped = false;
  bool ynorm_saturated = false;
  std::vector<double> candidate_costs;  ///< per N_t = 1..N, +inf when infeasible
};

struct ControlResult {
  Vec u;
  int N_t = 0;
  std::size_t q = 0;
  double J_star = kInf;
  ControlDiagnostics diagnostics;
};

class InfeasibleStepError : public std::runtime_error {
 public:
  InfeasibleStepError(const std::string& what, ControlDiagnostics diag, std::size_t q)
      : std::runtime_error(what), diagnostics_(std::move(diag)), q_(q) {}
  const ControlDiagnostics& diagnostics() const { return diagnostics_; }
  std::size_t q() const { return q_; }

 private:
  ControlDiagnostics diagnostics_;
  std::size_t q_;
};

/// Online resilient controller over an immutable bundle. All QP data that
/// does not depend on the state is built once at construction.
class ResilientController {
 public:
  explicit ResilientController(std::shared_ptr<const ConstraintBundle> bundle, QpSettings settings = {});

  const ConstraintBundle& bundle() const { return *bundle_; }

  StepResult solve_one_step(const Vec& x, std::size_t q) const;
  HorizonResult solve_horizon(const Vec& x, int N_t, std::size_t q) const;

  /// Grid entry actually used for (omega_hat, y): the selected one, or the
  /// nearest usable entry when the selection is infeasible.
  std::size_t resolve_entry(double omega_hat, const Vec& y, ControlDiagnostics& diag) const;

  /// Throws InfeasibleStepError when no horizon is feasible.
  ControlResult control_step(const Vec& y, double omega_hat) const;

 private:
  struct OneStepData {
    Mat coef;       ///< rows: facet x pi_b vertex, coefficients on u
    Mat state_coef; ///< rows: facet x pi_a vertex
    Vec offset;     ///< g - support(delta, h), one per facet
    Index facets = 0;
  };
  struct EntryCache {
    std::optional<OneStepData> one_step;
    std::vector<std::unique_ptr<HorizonQp>> horizons;  ///< index N_t - 2
  };

  std::shared_ptr<const ConstraintBundle> bundle_;
  QpSettings settings_;
  std::vector<EntryCache> cache_;
};

/// Nominal horizon-N MPC with the LQR terminal ingredients and no
/// uncertainty handling. Falls back to the saturated LQR input when the QP is
/// infeasible.
class BaselineMpc {
 public:
  BaselineMpc(const Mat& A_tau, const Mat& B_tau, const CostSpec& cost, const HPolytope& domain,
              const HPolytope& input_set, QpSettings settings = {});

  struct Result {
    Vec u;
    bool feasible = false;
    double cost = kInf;
  };
  Result step(const Vec& y) const;

  const Mat& K() const { return K_; }
  const HPolytope& terminal_set() const { return terminal_; }

 private:
  Mat K_;
  HPolytope input_set_;
  HPolytope terminal_;
  std::unique_ptr<HorizonQp> qp_;
  QpSettings settings_;
};

/// Maximal constraint-admissible invariant set of x+ = A_cl x inside
/// D ∩ {K x ∈ U}.
HPolytope nominal_terminal_set(const Mat& A_cl, const Mat& K, const HPolytope& domain, const HPolytope& input_set);

/// Clamp of u into a box-shaped input set (per-coordinate bounds read from
/// the polytope's bounding box).
Vec saturate(const Vec& u, const HPolytope& input_set);

}  // namespace resmpc
