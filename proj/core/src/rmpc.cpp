#include "resmpc/rmpc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>

#include "resmpc/log.hpp"

namespace resmpc {
namespace {

bool is_symmetric(const Mat& M, double tol = 1e-9) {
  return M.rows() == M.cols() && (M - M.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, M.cwiseAbs().maxCoeff());
}

double min_eigenvalue(const Mat& M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double max_eigenvalue(const Mat& M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

double inf_norm(const Mat& M) { return M.cwiseAbs().rowwise().sum().maxCoeff(); }

Mat riccati_update(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P) {
  const Mat BtP = B.transpose() * P;
  const Mat S = R + BtP * B;
  const Mat G = S.ldlt().solve(BtP * A);
  Mat next = Q + A.transpose() * P * A - (BtP * A).transpose() * G;
  return 0.5 * (next + next.transpose());
}

HPolytope input_admissible(const Mat& K, const HPolytope& domain, const HPolytope& input_set) {
  return domain.intersect(HPolytope(input_set.H() * K, input_set.g()));
}

}  // namespace

void CostSpec::validate() const {
  const Index n = Q.rows();
  if (N < 1) throw std::invalid_argument("cost: N must be >= 1");
  if (!is_symmetric(Q) || min_eigenvalue(Q) < -1e-12) throw std::invalid_argument("cost: Q must be symmetric PSD");
  if (!is_symmetric(R) || min_eigenvalue(R) <= 0.0) throw std::invalid_argument("cost: R must be symmetric PD");
  if (Q_N.size() != 0) {
    if (Q_N.rows() != n || !is_symmetric(Q_N) || min_eigenvalue(Q_N) < -1e-9) {
      throw std::invalid_argument("cost: Q_N must be symmetric PSD");
    }
  }
}

TerminalWeight terminal_weight(const Mat& A_tau, const Mat& B_tau, const Mat& Q, const Mat& R) {
  const Index n = A_tau.rows();
  if (A_tau.cols() != n || B_tau.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != B_tau.cols() ||
      R.cols() != B_tau.cols()) {
    throw DimensionError("terminal_weight: dimension mismatch");
  }
  Mat P = Q;
  bool converged = false;
  for (int it = 0; it < 10000; ++it) {
    const Mat next = riccati_update(A_tau, B_tau, Q, R, P);
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = next;
    if (change <= 1e-13 * std::max(1.0, P.cwiseAbs().maxCoeff())) {
      converged = true;
      break;
    }
  }
  if (!converged || !P.allFinite()) {
    throw RiccatiError("terminal_weight: Riccati iteration did not converge (pair not stabilizable?)");
  }
  const double residual = inf_norm(riccati_update(A_tau, B_tau, Q, R, P) - P);
  if (residual > 1e-8) {
    std::ostringstream msg;
    msg << "terminal_weight: Riccati residual " << residual << " above 1e-8";
    throw RiccatiError(msg.str());
  }
  const Mat BtP = B_tau.transpose() * P;
  const Mat K = -(R + BtP * B_tau).ldlt().solve(BtP * A_tau);
  return {P, K};
}

std::vector<Mat> closed_loop_vertices(const Mat& A_tau, const Mat& B_tau, const std::vector<Mat>& pi_a,
                                      const std::vector<Mat>& pi_b, const Mat& K) {
  if (pi_a.empty() || pi_b.empty()) throw std::invalid_argument("closed_loop_vertices: empty vertex list");
  std::vector<Mat> out;
  out.reserve(pi_a.size() * pi_b.size());
  for (const Mat& VA : pi_a) {
    for (const Mat& VB : pi_b) out.push_back(A_tau + VA + (B_tau + VB) * K);
  }
  return out;
}

Mat solve_discrete_lyapunov(const Mat& A, const Mat& W) {
  const Index n = A.rows();
  const Mat At = A.transpose();
  Mat L = Mat::Zero(n * n, n * n);
  // vec(A' P A) = (A' ⊗ A') vec(P)
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) L.block(i * n, j * n, n, n) = At(i, j) * At;
  }
  L -= Mat::Identity(n * n, n * n);
  const Vec w = Eigen::Map<const Vec>(W.data(), n * n);
  Eigen::FullPivLU<Mat> lu(L);
  if (!lu.isInvertible()) throw std::runtime_error("solve_discrete_lyapunov: singular (eigenvalue pair on the unit circle)");
  const Vec p = lu.solve(-w);
  Mat P = Eigen::Map<const Mat>(p.data(), n, n);
  return 0.5 * (P + P.transpose());
}

GainCertificate synthesize_gain(const Mat& A_tau, const Mat& B_tau, const std::vector<Mat>& pi_a,
                                const std::vector<Mat>& pi_b, const Mat& Q, const Mat& R) {
  if (pi_a.empty() || pi_b.empty()) throw std::invalid_argument("synthesize_gain: empty vertex list");
  struct Candidate {
    double q_scale, r_scale;
  };
  const Candidate ladder[] = {{1, 1}, {1, 0.5}, {1, 0.25}, {1, 0.1}, {10, 1}, {100, 1}};
  std::size_t worst_vertex = 0;
  double worst_eig = kInf;
  for (const Candidate& c : ladder) {
    const Mat Qc = Q * c.q_scale;
    const Mat Rc = R * c.r_scale;
    TerminalWeight tw;
    try {
      tw = terminal_weight(A_tau, B_tau, Qc, Rc);
    } catch (const RiccatiError&) {
      continue;
    }
    const Mat A_nom = A_tau + B_tau * tw.K;
    Mat P;
    try {
      P = solve_discrete_lyapunov(A_nom, Qc + tw.K.transpose() * Rc * tw.K);
    } catch (const std::runtime_error&) {
      continue;
    }
    if (min_eigenvalue(P) <= 0.0) continue;
    const auto loops = closed_loop_vertices(A_tau, B_tau, pi_a, pi_b, tw.K);
    double cand_worst = -kInf;
    std::size_t cand_vertex = 0;
    for (std::size_t v = 0; v < loops.size(); ++v) {
      const double e = max_eigenvalue(loops[v].transpose() * P * loops[v] - P);
      if (e > cand_worst) {
        cand_worst = e;
        cand_vertex = v;
      }
    }
    if (cand_worst <= kLyapunovMargin) return {tw.K, P, cand_worst};
    if (cand_worst < worst_eig) {
      worst_eig = cand_worst;
      worst_vertex = cand_vertex;
    }
  }
  std::ostringstream msg;
  msg << "no certified gain: closed-loop vertex " << worst_vertex << " has Lyapunov eigenvalue " << worst_eig;
  throw GainSynthesisError(msg.str(), worst_vertex, worst_eig);
}

Tube build_tube(const std::vector<Mat>& closed_loops, const std::vector<Mat>& pi_a, const std::vector<Mat>& pi_b,
                const Mat& K, const Vec& delta, const Vec& domain_radius, int N, const HPolytope& domain) {
  if (N < 0) throw std::invalid_argument("build_tube: N must be >= 0");
  const Index n = delta.size();
  Vec slack = Vec::Zero(n);
  Vec sa = Vec::Zero(n);
  for (const Mat& VA : pi_a) sa = sa.cwiseMax(VA.cwiseAbs() * domain_radius);
  Vec sb = Vec::Zero(n);
  for (const Mat& VB : pi_b) sb = sb.cwiseMax((VB * K).cwiseAbs() * domain_radius);
  slack = sa + sb;

  Tube tube;
  tube.w = Box::symmetric(delta.cwiseAbs() + slack);
  tube.boxes.reserve(static_cast<std::size_t>(N) + 1);
  tube.boxes.push_back(Box::zero(n));
  for (int k = 0; k < N; ++k) {
    const Box& E = tube.boxes.back();
    Box reach = Box::zero(n);
    for (const Mat& Acl : closed_loops) reach = box_hull(reach, affine_map_box(Acl, E));
    Box next = minkowski_sum_box(reach, tube.w);
    // Keep the sequence nested even under rounding.
    next = box_hull(next, E);
    tube.boxes.push_back(next);
  }
  tube.usable_horizon = 0;
  for (int k = 1; k <= N; ++k) {
    if (tighten(domain, tube.boxes[static_cast<std::size_t>(k)]).is_empty()) break;
    tube.usable_horizon = k;
  }
  return tube;
}

ModelParams model_params(const UncertainModel& model) {
  return {model.A_tau(),          model.B_tau(),        model.tau(),          model.noise().chi_bar,
          model.noise().eps_bar,  model.plant().eta,    model.noise().d_bar,  model.plant().domain,
          model.plant().input_set};
}

std::uint64_t model_fingerprint(const ModelParams& p) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const double* data, Index count) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(count) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  feed(p.A_tau.data(), p.A_tau.size());
  feed(p.B_tau.data(), p.B_tau.size());
  feed(p.chi_bar.data(), p.chi_bar.size());
  feed(p.eps_bar.data(), p.eps_bar.size());
  feed(p.eta.data(), p.eta.size());
  feed(p.d_bar.data(), p.d_bar.size());
  feed(&p.tau, 1);
  return h;
}

const GridControllerData& ConstraintBundle::entry(std::size_t q) const {
  if (q < 1 || q > entries.size()) throw std::out_of_range("bundle: grid index out of range");
  return entries[q - 1];
}

std::size_t ConstraintBundle::num_feasible() const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.feasible; }));
}

namespace {

GridControllerData prepare_entry(const UncertainModel& model, const BoundGrid& grid, const CostSpec& cost,
                                 const std::vector<Mat>& pi_a, const Vec& domain_radius, std::size_t q,
                                 const RpiOptions& rpi) {
  const GridEntry ge = grid.entry(q);
  GridControllerData d;
  d.q = q;
  d.omega_level = ge.omega_level;
  d.ynorm_level = ge.ynorm_level;
  d.pi_b = model.pi_b_vertices_at(ge.omega_level);
  d.delta = model.delta_hat(ge.ynorm_level);
  const Index n = model.A_tau().rows();
  d.terminal_set = HPolytope::empty_set(n);
  try {
    const GainCertificate cert = synthesize_gain(model.A_tau(), model.B_tau(), pi_a, d.pi_b, cost.Q, cost.R);
    d.K = cert.K;
    d.lyapunov_P = cert.P;
  } catch (const GainSynthesisError& e) {
    d.reason = e.what();
    return d;
  }
  const auto loops = closed_loop_vertices(model.A_tau(), model.B_tau(), pi_a, d.pi_b, d.K);
  const HPolytope admissible = input_admissible(d.K, model.plant().domain, model.plant().input_set);
  try {
    RpiResult r = max_rpi(loops, Box::symmetric(d.delta), admissible, rpi);
    if (r.set.is_empty()) {
      d.reason = "terminal set is empty";
      return d;
    }
    d.terminal_set = std::move(r.set);
  } catch (const RpiNotConverged& e) {
    d.reason = e.what();
    return d;
  }
  d.tube = build_tube(loops, pi_a, d.pi_b, d.K, d.delta, domain_radius, cost.N, model.plant().domain);
  d.feasible = true;
  return d;
}

}  // namespace

ConstraintBundle prepare(const UncertainModel& model, const BoundGrid& grid, CostSpec cost,
                         const PrepareOptions& options) {
  const TerminalWeight tw = terminal_weight(model.A_tau(), model.B_tau(), cost.Q, cost.R);
  cost.Q_N = tw.Q_N;
  cost.validate();

  ConstraintBundle bundle;
  bundle.model = model_params(model);
  bundle.fingerprint = model_fingerprint(bundle.model);
  bundle.grid = grid;
  bundle.pi_a = model.pi_a_vertices();
  bundle.cost = cost;
  bundle.K_nom = tw.K;
  bundle.entries.resize(grid.size());

  const Vec radius = bounding_box(model.plant().domain).radius();
  std::atomic<std::size_t> next{1};
  auto worker = [&] {
    for (std::size_t q = next++; q <= grid.size(); q = next++) {
      bundle.entries[q - 1] = prepare_entry(model, grid, cost, bundle.pi_a, radius, q, options.rpi);
    }
  };
  const unsigned threads = std::max(1U, std::min<unsigned>(options.threads, static_cast<unsigned>(grid.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : bundle.entries) {
    if (!e.feasible) {
      std::ostringstream msg;
      msg << "grid entry " << e.q << " (omega " << e.omega_level << ", |y| " << e.ynorm_level
          << ") infeasible: " << e.reason;
      log(LogLevel::Info, msg.str());
    }
  }
  if (bundle.num_feasible() == 0) throw BundleError("prepare: every grid entry is infeasible");
  return bundle;
}

Vec saturate(const Vec& u, const HPolytope& input_set) {
  const Box box = bounding_box(input_set);
  return u.cwiseMax(box.lower()).cwiseMin(box.upper());
}

HPolytope nominal_terminal_set(const Mat& A_cl, const Mat& K, const HPolytope& domain, const HPolytope& input_set) {
  const std::vector<Mat> loops{A_cl};
  return max_rpi(loops, Box::zero(A_cl.rows()), input_admissible(K, domain, input_set)).set;
}

ResilientController::ResilientController(std::shared_ptr<const ConstraintBundle> bundle, QpSettings settings)
    : bundle_(std::move(bundle)), settings_(settings) {
  if (!bundle_) throw std::invalid_argument("ResilientController: null bundle");
  const ConstraintBundle& b = *bundle_;
  const Mat& A = b.model.A_tau;
  const Mat& B = b.model.B_tau;
  cache_.resize(b.entries.size());
  for (std::size_t idx = 0; idx < b.entries.size(); ++idx) {
    const GridControllerData& e = b.entries[idx];
    if (!e.feasible) continue;
    const HPolytope& X = e.terminal_set;
    const Index F = X.num_facets();
    OneStepData os;
    os.facets = F;
    const Index nb = static_cast<Index>(e.pi_b.size());
    const Index na = static_cast<Index>(b.pi_a.size());
    os.coef.resize(F * nb, B.cols());
    os.state_coef.resize(F * na, A.cols());
    os.offset.resize(F);
    const Box dbox = Box::symmetric(e.delta);
    for (Index i = 0; i < F; ++i) {
      const auto h = X.H().row(i);
      for (Index j = 0; j < nb; ++j) os.coef.row(i * nb + j) = h * (B + e.pi_b[static_cast<std::size_t>(j)]);
      for (Index j = 0; j < na; ++j) os.state_coef.row(i * na + j) = h * (A + b.pi_a[static_cast<std::size_t>(j)]);
      os.offset(i) = X.g()(i) - support(dbox, h.transpose());
    }
    cache_[idx].one_step = std::move(os);

    const int limit = std::min(b.cost.N, e.tube.usable_horizon);
    for (int Nt = 2; Nt <= b.cost.N; ++Nt) {
      if (Nt > limit) {
        cache_[idx].horizons.emplace_back(nullptr);
        continue;
      }
      HorizonQp::Spec spec;
      spec.A = A;
      spec.B = B;
      spec.K = e.K;
      spec.Q = b.cost.Q;
      spec.R = b.cost.R;
      spec.Q_N = b.cost.Q_N;
      spec.state_set = b.model.domain;
      spec.input_set = b.model.input_set;
      spec.terminal_set = X;
      spec.tube.assign(e.tube.boxes.begin(), e.tube.boxes.begin() + Nt + 1);
      spec.horizon = Nt;
      cache_[idx].horizons.push_back(std::make_unique<HorizonQp>(spec));
    }
  }
}

StepResult ResilientController::solve_one_step(const Vec& x, std::size_t q) const {
  const ConstraintBundle& b = *bundle_;
  const GridControllerData& e = b.entry(q);
  if (!e.feasible) throw std::invalid_argument("solve_one_step: grid entry is infeasible");
  const OneStepData& os = *cache_[q - 1].one_step;
  const Mat& A = b.model.A_tau;
  const Mat& B = b.model.B_tau;
  const Index m = B.cols();
  const Index nb = static_cast<Index>(e.pi_b.size());
  const Index na = static_cast<Index>(b.pi_a.size());

  // Robust rows: coef * u <= offset - max_a state_coef * x
  const Vec sx = os.state_coef * x;
  Vec rhs(os.facets * nb);
  for (Index i = 0; i < os.facets; ++i) {
    const double worst = sx.segment(i * na, na).maxCoeff();
    rhs.segment(i * nb, nb).setConstant(os.offset(i) - worst);
  }
  const Mat& HU = b.model.input_set.H();
  const Vec& gU = b.model.input_set.g();

  const Vec Ax = A * x;
  const Mat Pq = 2.0 * (b.cost.R + B.transpose() * b.cost.Q_N * B);
  const Vec qq = 2.0 * B.transpose() * b.cost.Q_N * Ax;
  const double c0 = x.dot(b.cost.Q * x) + Ax.dot(b.cost.Q_N * Ax);

  StepResult res;
  if (m == 1) {
    double lo = -kInf, hi = kInf;
    auto add_row = [&](double a, double r) {
      if (std::abs(a) <= 1e-14) {
        if (r < -1e-12) lo = kInf;
        return;
      }
      if (a > 0) hi = std::min(hi, r / a);
      else lo = std::max(lo, r / a);
    };
    for (Index r = 0; r < os.coef.rows(); ++r) add_row(os.coef(r, 0), rhs(r));
    for (Index r = 0; r < HU.rows(); ++r) add_row(HU(r, 0), gU(r));
    if (!(lo <= hi)) return res;
    const double u = std::clamp(-qq(0) / Pq(0, 0), lo, hi);
    res.u = Vec::Constant(1, u);
  } else {
    Mat G(os.coef.rows() + HU.rows(), m);
    G << os.coef, HU;
    Vec upper(G.rows());
    upper << rhs, gU;
    const QpProblem problem(Pq, qq, G, Vec::Constant(G.rows(), -kInf), upper);
    const QpSolution sol = solve_qp(problem, settings_);
    if (sol.status == QpStatus::PrimalInfeasible) return res;
    if (sol.status != QpStatus::Solved) throw QpError(std::string("one-step QP failed: ") + to_string(sol.status));
    res.u = sol.x;
  }
  res.feasible = true;
  res.cost = 0.5 * res.u.dot(Pq * res.u) + qq.dot(res.u) + c0;
  return res;
}

HorizonResult ResilientController::solve_horizon(const Vec& x, int N_t, std::size_t q) const {
  const ConstraintBundle& b = *bundle_;
  if (N_t < 2 || N_t > b.cost.N) throw std::invalid_argument("solve_horizon: N_t out of range");
  const GridControllerData& e = b.entry(q);
  if (!e.feasible) throw std::invalid_argument("solve_horizon: grid entry is infeasible");
  HorizonResult res;
  const auto& qp = cache_[q - 1].horizons[static_cast<std::size_t>(N_t - 2)];
  if (!qp) return res;
  const HorizonQp::Result r = qp->solve(x, settings_);
  if (!r.feasible) return res;
  res.feasible = true;
  res.u = r.u0;
  res.inputs = r.inputs;
  res.states = r.states;
  res.cost = r.cost;
  return res;
}

std::size_t ResilientController::resolve_entry(double omega_hat, const Vec& y, ControlDiagnostics& diag) const {
  const ConstraintBundle& b = *bundle_;
  const GridSelection sel = select_grid(b.grid, omega_hat, y.norm());
  diag.requested_q = sel.q;
  diag.omega_clamped = sel.omega_clamped;
  diag.ynorm_saturated = sel.ynorm_saturated;
  if (b.entry(sel.q).feasible) return sel.q;
  diag.escalated = true;
  const GridEntry ge = b.grid.entry(sel.q);
  const std::size_t nw = b.grid.omega_levels.size();
  const std::size_t ny = b.grid.ynorm_levels.size();
  for (std::size_t wi = ge.omega_index; wi < nw; ++wi) {
    for (std::size_t yi = ge.ynorm_index; yi < ny; ++yi) {
      const std::size_t q = b.grid.index_of(wi, yi);
      if (b.entry(q).feasible) return q;
    }
  }
  for (std::size_t wi = ge.omega_index; wi-- > 0;) {
    for (std::size_t yi = ge.ynorm_index; yi < ny; ++yi) {
      const std::size_t q = b.grid.index_of(wi, yi);
      if (b.entry(q).feasible) return q;
    }
  }
  for (std::size_t q = 1; q <= b.grid.size(); ++q) {
    if (b.entry(q).feasible) return q;
  }
  throw BundleError("bundle has no feasible entry");
}

ControlResult ResilientController::control_step(const Vec& y, double omega_hat) const {
  const ConstraintBundle& b = *bundle_;
  ControlResult out;
  const std::size_t q = resolve_entry(omega_hat, y, out.diagnostics);
  out.q = q;
  auto& costs = out.diagnostics.candidate_costs;
  costs.assign(static_cast<std::size_t>(b.cost.N), kInf);

  auto consider = [&](int Nt, const Vec& u, double cost) {
    costs[static_cast<std::size_t>(Nt - 1)] = cost;
    if (out.N_t == 0 || cost < out.J_star - 1e-9 * std::abs(out.J_star) - 1e-300) {
      out.N_t = Nt;
      out.u = u;
      out.J_star = cost;
    }
  };
  const StepResult one = solve_one_step(y, q);
  if (one.feasible) consider(1, one.u, one.cost);
  for (int Nt = 2; Nt <= b.cost.N; ++Nt) {
    const HorizonResult h = solve_horizon(y, Nt, q);
    if (h.feasible) consider(Nt, h.u, h.cost);
  }
  if (out.N_t == 0) {
    std::ostringstream msg;
    msg << "control_step: no feasible horizon at grid entry " << q;
    throw InfeasibleStepError(msg.str(), out.diagnostics, q);
  }
  return out;
}

BaselineMpc::BaselineMpc(const Mat& A_tau, const Mat& B_tau, const CostSpec& cost, const HPolytope& domain,
                         const HPolytope& input_set, QpSettings settings)
    : input_set_(input_set), settings_(settings) {
  const TerminalWeight tw = terminal_weight(A_tau, B_tau, cost.Q, cost.R);
  K_ = tw.K;
  terminal_ = nominal_terminal_set(A_tau + B_tau * K_, K_, domain, input_set);
  HorizonQp::Spec spec;
  spec.A = A_tau;
  spec.B = B_tau;
  spec.K = K_;
  spec.Q = cost.Q;
  spec.R = cost.R;
  spec.Q_N = tw.Q_N;
  spec.state_set = domain;
  spec.input_set = input_set;
  spec.terminal_set = terminal_;
  spec.horizon = cost.N;
  qp_ = std::make_unique<HorizonQp>(spec);
}

BaselineMpc::Result BaselineMpc::step(const Vec& y) const {
  Result res;
  const HorizonQp::Result r = qp_->solve(y, settings_);
  if (r.feasible) {
    res.u = r.u0;
    res.feasible = true;
    res.cost = r.cost;
  } else {
    res.u = saturate(K_ * y, input_set_);
  }
  return res;
}

}  // namespace resmpc
