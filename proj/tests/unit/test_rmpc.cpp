#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "resmpc/rmpc.hpp"
#include "resmpc/sim.hpp"

using namespace resmpc;

namespace {

Scenario default_scenario() { return load_scenario(RESMPC_CONFIG_DIR "/acc_default.yaml"); }

Scenario nominal_scenario() { return load_scenario(RESMPC_CONFIG_DIR "/acc_nominal.yaml"); }

// Two omega levels (none and strong) at the top norm level.
BoundGrid two_level_grid(const UncertainModel& m) {
  BoundGrid g;
  g.omega_levels = {0.0, 4.0 / 9.0};
  g.ynorm_levels = {m.measurement_norm_sup()};
  return g;
}

struct Shared {
  std::shared_ptr<const ConstraintBundle> uncertain;
  std::shared_ptr<const ConstraintBundle> nominal;
  std::unique_ptr<ResilientController> uncertain_ctrl;
  std::unique_ptr<ResilientController> nominal_ctrl;
};

Shared& shared() {
  static Shared s = [] {
    Shared out;
    const Scenario sc = default_scenario();
    const UncertainModel m = sc.model();
    out.uncertain = std::make_shared<const ConstraintBundle>(prepare(m, two_level_grid(m), sc.cost()));
    const Scenario nom = nominal_scenario();
    out.nominal = std::make_shared<const ConstraintBundle>(prepare(nom.model(), nom.grid(), nom.cost()));
    out.uncertain_ctrl = std::make_unique<ResilientController>(out.uncertain);
    out.nominal_ctrl = std::make_unique<ResilientController>(out.nominal);
    return out;
  }();
  return s;
}

std::vector<Vec> sample_inside(const HPolytope& set, int count, std::mt19937_64& rng) {
  const Box bb = bounding_box(set);
  std::vector<std::uniform_real_distribution<double>> dist;
  for (Index i = 0; i < bb.dim(); ++i) dist.emplace_back(bb.lower()(i), bb.upper()(i));
  std::vector<Vec> out;
  while (static_cast<int>(out.size()) < count) {
    Vec x(bb.dim());
    for (Index i = 0; i < bb.dim(); ++i) x(i) = dist[static_cast<std::size_t>(i)](rng);
    if (contains(set, x)) out.push_back(x);
  }
  return out;
}

// Random convex combination of a vertex list.
Mat random_hull_point(const std::vector<Mat>& v, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Mat out = Mat::Zero(v[0].rows(), v[0].cols());
  double total = 0.0;
  for (const Mat& m : v) {
    const double w = e(rng);
    out += w * m;
    total += w;
  }
  return out / total;
}

}  // namespace

TEST(TerminalWeight, ScalarExamples) {
  const TerminalWeight dead = terminal_weight(Mat::Zero(1, 1), Mat::Ones(1, 1), Mat::Ones(1, 1), Mat::Ones(1, 1));
  EXPECT_NEAR(dead.Q_N(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(dead.K(0, 0), 0.0, 1e-12);

  const TerminalWeight golden = terminal_weight(Mat::Ones(1, 1), Mat::Ones(1, 1), Mat::Ones(1, 1), Mat::Ones(1, 1));
  EXPECT_NEAR(golden.Q_N(0, 0), (1.0 + std::sqrt(5.0)) / 2.0, 1e-9);
  EXPECT_NEAR(golden.K(0, 0), -0.618034, 1e-6);
}

TEST(TerminalWeight, MatchesScalarClosedForm) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> a(-1.5, 1.5), b(0.2, 2.0), w(0.1, 5.0);
  for (int k = 0; k < 50; ++k) {
    const double A = a(rng), B = b(rng), Q = w(rng), R = w(rng);
    const TerminalWeight t =
        terminal_weight(Mat::Constant(1, 1, A), Mat::Constant(1, 1, B), Mat::Constant(1, 1, Q), Mat::Constant(1, 1, R));
    const double P = oracle::scalar_dare(A, B, Q, R);
    EXPECT_NEAR(t.Q_N(0, 0), P, 1e-8 * std::max(1.0, P));
    EXPECT_NEAR(t.K(0, 0), -(A * B * P) / (R + B * B * P), 1e-8);
  }
}

TEST(TerminalWeight, AccRiccatiResidual) {
  const Scenario sc = default_scenario();
  const UncertainModel m = sc.model();
  const Mat& A = m.A_tau();
  const Mat& B = m.B_tau();
  const TerminalWeight t = terminal_weight(A, B, sc.Q, sc.R);
  const Mat& P = t.Q_N;
  const Mat S = sc.R + B.transpose() * P * B;
  const Mat rhs = sc.Q + A.transpose() * P * A - A.transpose() * P * B * S.inverse() * B.transpose() * P * A;
  EXPECT_LE((P - rhs).cwiseAbs().maxCoeff(), 1e-8 * P.cwiseAbs().maxCoeff());
  const Mat K = -S.inverse() * B.transpose() * P * A;
  EXPECT_LE((K - t.K).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((P - P.transpose()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(TerminalWeight, UnstabilizableThrows) {
  EXPECT_THROW(terminal_weight(Mat::Constant(1, 1, 2.0), Mat::Zero(1, 1), Mat::Ones(1, 1), Mat::Ones(1, 1)),
               RiccatiError);
}

TEST(SynthesizeGain, ZeroUncertaintyIsNominalLqr) {
  const Scenario sc = nominal_scenario();
  const UncertainModel m = sc.model();
  const GainCertificate c =
      synthesize_gain(m.A_tau(), m.B_tau(), m.pi_a_vertices(), m.pi_b_vertices_at(0.0), sc.Q, sc.R);
  const TerminalWeight t = terminal_weight(m.A_tau(), m.B_tau(), sc.Q, sc.R);
  EXPECT_LE((c.K - t.K).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(c.worst_eigenvalue, kLyapunovMargin);
}

TEST(SynthesizeGain, TotalActuatorLossFails) {
  const Scenario sc = default_scenario();
  const UncertainModel m = sc.model();
  EXPECT_THROW(synthesize_gain(m.A_tau(), m.B_tau(), m.pi_a_vertices(), m.pi_b_vertices_at(1.0), sc.Q, sc.R),
               GainSynthesisError);
}

TEST(SynthesizeGain, CertificateHoldsOnEveryVertex) {
  const Scenario sc = default_scenario();
  const UncertainModel m = sc.model();
  const auto pib = m.pi_b_vertices_at(4.0 / 9.0);
  const GainCertificate c = synthesize_gain(m.A_tau(), m.B_tau(), m.pi_a_vertices(), pib, sc.Q, sc.R);
  for (const Mat& Acl : closed_loop_vertices(m.A_tau(), m.B_tau(), m.pi_a_vertices(), pib, c.K)) {
    const Mat D = Acl.transpose() * c.P * Acl - c.P;
    const double lmax = Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (D + D.transpose())).eigenvalues().maxCoeff();
    EXPECT_LE(lmax, -1e-10);
  }
}

TEST(Lyapunov, Residual) {
  Mat A(2, 2);
  A << 0.5, 0.2, -0.1, 0.7;
  const Mat W = Mat::Identity(2, 2);
  const Mat P = solve_discrete_lyapunov(A, W);
  EXPECT_LE((A.transpose() * P * A - P + W).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BuildTube, ZeroDisturbance) {
  const std::vector<Mat> loops{Mat::Constant(1, 1, 0.5)};
  const std::vector<Mat> none{Mat::Zero(1, 1)};
  const HPolytope D = HPolytope::from_box(Box::symmetric(Vec::Ones(1)));
  const Tube t = build_tube(loops, none, none, Mat::Zero(1, 1), Vec::Zero(1), Vec::Ones(1), 5, D);
  ASSERT_EQ(t.boxes.size(), 6u);
  for (const Box& b : t.boxes) EXPECT_EQ(b.radius()(0), 0.0);
}

TEST(BuildTube, GeometricSeries) {
  const std::vector<Mat> none{Mat::Zero(1, 1)};
  const HPolytope D = HPolytope::from_box(Box::symmetric(Vec::Ones(1)));
  for (const std::vector<Mat>& loops :
       {std::vector<Mat>{Mat::Constant(1, 1, 0.5)}, std::vector<Mat>{Mat::Constant(1, 1, 0.5), Mat::Constant(1, 1, -0.5)}}) {
    const Tube t = build_tube(loops, none, none, Mat::Zero(1, 1), Vec::Constant(1, 0.25), Vec::Ones(1), 40, D);
    EXPECT_DOUBLE_EQ(t.boxes[1].upper()(0), 0.25);
    EXPECT_DOUBLE_EQ(t.boxes[1].lower()(0), -0.25);
    EXPECT_DOUBLE_EQ(t.boxes[2].upper()(0), 0.375);
    EXPECT_NEAR(t.boxes[40].upper()(0), 0.5, 1e-9);
    EXPECT_LE(t.boxes[40].upper()(0), 0.5);
    for (std::size_t k = 1; k < t.boxes.size(); ++k) {
      EXPECT_LE(t.boxes[k - 1].upper()(0), t.boxes[k].upper()(0));
      EXPECT_GE(t.boxes[k - 1].lower()(0), t.boxes[k].lower()(0));
    }
    EXPECT_EQ(t.usable_horizon, 40);
  }
}

TEST(BuildTube, UsableHorizonStopsAtDomain) {
  const std::vector<Mat> loops{Mat::Constant(1, 1, 1.0)};
  const std::vector<Mat> none{Mat::Zero(1, 1)};
  const HPolytope D = HPolytope::from_box(Box::symmetric(Vec::Ones(1)));
  const Tube t = build_tube(loops, none, none, Mat::Zero(1, 1), Vec::Constant(1, 0.3), Vec::Ones(1), 5, D);
  // 0.3, 0.6, 0.9 fit; 1.2 does not
  EXPECT_EQ(t.usable_horizon, 3);
}

TEST(Prepare, ZeroUncertaintyTerminalSetIsNominalInvariantSet) {
  const ConstraintBundle& b = *shared().nominal;
  ASSERT_EQ(b.entries.size(), 1u);
  const GridControllerData& e = b.entry(1);
  ASSERT_TRUE(e.feasible);
  const HPolytope nominal =
      nominal_terminal_set(b.model.A_tau + b.model.B_tau * b.K_nom, b.K_nom, b.model.domain, b.model.input_set);
  EXPECT_LE((e.K - b.K_nom).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(is_subset(e.terminal_set, nominal, 1e-7));
  EXPECT_TRUE(is_subset(nominal, e.terminal_set, 1e-7));
  for (const Box& E : e.tube.boxes) EXPECT_EQ(E.radius().maxCoeff(), 0.0);
}

TEST(Prepare, AllInfeasibleThrows) {
  const Scenario sc = default_scenario();
  const UncertainModel m = sc.model();
  BoundGrid g;
  g.omega_levels = {1.0};
  g.ynorm_levels = {m.measurement_norm_sup()};
  EXPECT_THROW(prepare(m, g, sc.cost()), BundleError);
}

TEST(Prepare, HigherOmegaIsMoreConservative) {
  const ConstraintBundle& b = *shared().uncertain;
  ASSERT_TRUE(b.entry(1).feasible);
  ASSERT_TRUE(b.entry(2).feasible);
  EXPECT_TRUE(is_subset(b.entry(2).terminal_set, b.entry(1).terminal_set, 1e-7));
  for (int k = 0; k <= b.cost.N; ++k) {
    const Vec lo = b.entry(1).tube.boxes[static_cast<std::size_t>(k)].radius();
    const Vec hi = b.entry(2).tube.boxes[static_cast<std::size_t>(k)].radius();
    EXPECT_TRUE((hi.array() >= lo.array()).all());
  }
  EXPECT_LE(b.entry(2).tube.usable_horizon, b.entry(1).tube.usable_horizon);
}

TEST(Prepare, TubeNestedAndCertificatePerEntry) {
  const ConstraintBundle& b = *shared().uncertain;
  for (const GridControllerData& e : b.entries) {
    ASSERT_TRUE(e.feasible);
    for (std::size_t k = 1; k < e.tube.boxes.size(); ++k) {
      EXPECT_TRUE((e.tube.boxes[k].upper().array() >= e.tube.boxes[k - 1].upper().array()).all());
      EXPECT_TRUE((e.tube.boxes[k].lower().array() <= e.tube.boxes[k - 1].lower().array()).all());
    }
    for (const Mat& Acl : closed_loop_vertices(b.model.A_tau, b.model.B_tau, b.pi_a, e.pi_b, e.K)) {
      const Mat D = Acl.transpose() * e.lyapunov_P * Acl - e.lyapunov_P;
      EXPECT_LE(Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (D + D.transpose())).eigenvalues().maxCoeff(), -1e-10);
    }
  }
}

TEST(Prepare, TerminalSetSampledInvariance) {
  const ConstraintBundle& b = *shared().uncertain;
  std::mt19937_64 rng(31);
  for (const GridControllerData& e : b.entries) {
    const auto loops = closed_loop_vertices(b.model.A_tau, b.model.B_tau, b.pi_a, e.pi_b, e.K);
    const auto wv = Box::symmetric(e.delta).vertices();
    for (const Vec& x : sample_inside(e.terminal_set, 200, rng))
      for (const Mat& Acl : loops)
        for (const Vec& w : wv) ASSERT_TRUE(contains(e.terminal_set, Acl * x + w, 1e-8));
  }
}

TEST(OneStep, OriginWithoutUncertainty) {
  const ResilientController& c = *shared().nominal_ctrl;
  const StepResult r = c.solve_one_step(Vec::Zero(3), 1);
  ASSERT_TRUE(r.feasible);
  EXPECT_EQ(r.u(0), 0.0);
  EXPECT_EQ(r.cost, 0.0);
  const HorizonResult h = c.solve_horizon(Vec::Zero(3), 5, 1);
  ASSERT_TRUE(h.feasible);
  EXPECT_NEAR(h.u(0), 0.0, 1e-9);
  EXPECT_NEAR(h.cost, 0.0, 1e-9);
  const ControlResult cr = c.control_step(Vec::Zero(3), 0.0);
  EXPECT_EQ(cr.N_t, 1);
  EXPECT_NEAR(cr.u(0), 0.0, 1e-9);
  EXPECT_NEAR(cr.J_star, 0.0, 1e-9);
}

TEST(OneStep, FarOutsideIsInfeasible) {
  const ResilientController& c = *shared().uncertain_ctrl;
  const Vec x{{99.0, 24.0, 7.9}};
  EXPECT_FALSE(c.solve_one_step(x, 1).feasible);
  for (int Nt = 2; Nt <= 5; ++Nt) EXPECT_FALSE(c.solve_horizon(x, Nt, 1).feasible);
  EXPECT_THROW(c.control_step(x, 0.0), InfeasibleStepError);
}

TEST(OneStep, MatchesGridSearch) {
  const ResilientController& c = *shared().uncertain_ctrl;
  const ConstraintBundle& b = *shared().uncertain;
  std::mt19937_64 rng(41);
  const Mat& A = b.model.A_tau;
  const Mat& B = b.model.B_tau;
  for (std::size_t q = 1; q <= 2; ++q) {
    const GridControllerData& e = b.entry(q);
    const HPolytope& X = e.terminal_set;
    for (const Vec& x : sample_inside(X, 10, rng)) {
      const StepResult r = c.solve_one_step(x, q);
      // per-facet worst case over the state vertices, then all input vertices
      std::vector<double> rhs;
      std::vector<double> coef;
      for (Index i = 0; i < X.num_facets(); ++i) {
        const Vec h = X.H().row(i).transpose();
        double worst = -kInf;
        for (const Mat& VA : b.pi_a) worst = std::max(worst, h.dot((A + VA) * x));
        double s = 0.0;
        for (Index j = 0; j < 3; ++j) s += std::abs(h(j)) * e.delta(j);
        for (const Mat& VB : e.pi_b) {
          coef.push_back(h.dot((B + VB).col(0)));
          rhs.push_back(X.g()(i) - s - worst);
        }
      }
      double best_u = std::nan("");
      double best_cost = kInf;
      for (int k = -20000; k <= 20000; ++k) {
        const double u = k * 1e-3;
        bool ok = true;
        for (std::size_t r2 = 0; r2 < coef.size() && ok; ++r2) ok = coef[r2] * u <= rhs[r2];
        if (!ok) continue;
        const Vec xn = A * x + B * u;
        const double cost = x.dot(b.cost.Q * x) + u * b.cost.R(0, 0) * u + xn.dot(b.cost.Q_N * xn);
        if (cost < best_cost) {
          best_cost = cost;
          best_u = u;
        }
      }
      if (std::isnan(best_u)) {
        EXPECT_FALSE(r.feasible);
        continue;
      }
      ASSERT_TRUE(r.feasible);
      EXPECT_NEAR(r.u(0), best_u, 1e-3);
      EXPECT_LE(r.cost, best_cost + 1e-9 * best_cost);
    }
  }
}

TEST(OneStep, RobustSuccessorStaysInTerminalSet) {
  const ResilientController& c = *shared().uncertain_ctrl;
  const ConstraintBundle& b = *shared().uncertain;
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  int checked = 0;
  for (std::size_t q = 1; q <= 2; ++q) {
    const GridControllerData& e = b.entry(q);
    for (const Vec& x : sample_inside(e.terminal_set, 10, rng)) {
      const StepResult r = c.solve_one_step(x, q);
      if (!r.feasible) continue;
      for (int k = 0; k < 500; ++k) {
        const Mat dA = random_hull_point(b.pi_a, rng);
        const Mat dB = random_hull_point(e.pi_b, rng);
        Vec d(3);
        for (int i = 0; i < 3; ++i) d(i) = e.delta(i) * (k % 5 == 0 ? (unit(rng) > 0 ? 1.0 : -1.0) : unit(rng));
        const Vec xn = (b.model.A_tau + dA) * x + (b.model.B_tau + dB) * r.u + d;
        ASSERT_TRUE(contains(e.terminal_set, xn, 1e-7));
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 0);
}

TEST(Horizon, BeyondUsableHorizonIsInfeasible) {
  const ResilientController& c = *shared().uncertain_ctrl;
  const ConstraintBundle& b = *shared().uncertain;
  const GridControllerData& e = b.entry(2);
  ASSERT_LT(e.tube.usable_horizon, b.cost.N);
  EXPECT_FALSE(c.solve_horizon(Vec::Zero(3), b.cost.N, 2).feasible);
  EXPECT_THROW(c.solve_horizon(Vec::Zero(3), 1, 2), std::invalid_argument);
}

TEST(Horizon, MonotoneConservatism) {
  const ResilientController& c = *shared().uncertain_ctrl;
  const ConstraintBundle& b = *shared().uncertain;
  std::mt19937_64 rng(47);
  int compared = 0;
  for (const Vec& x : sample_inside(b.entry(2).terminal_set, 30, rng)) {
    auto best = [&](std::size_t q) {
      double j = kInf;
      const StepResult one = c.solve_one_step(x, q);
      if (one.feasible) j = one.cost;
      for (int Nt = 2; Nt <= b.cost.N; ++Nt) {
        const HorizonResult h = c.solve_horizon(x, Nt, q);
        if (h.feasible) j = std::min(j, h.cost);
      }
      return j;
    };
    const double low = best(1), high = best(2);
    if (std::isfinite(low) && std::isfinite(high)) {
      EXPECT_GE(high, low - 1e-6 * std::max(1.0, low));
      ++compared;
    }
  }
  EXPECT_GT(compared, 0);
}

TEST(ControlStep, EscalatesFromInfeasibleEntry) {
  const Scenario sc = default_scenario();
  const UncertainModel m = sc.model();
  BoundGrid g;
  g.omega_levels = {0.0, 1.0};
  g.ynorm_levels = {m.measurement_norm_sup()};
  auto bundle = std::make_shared<const ConstraintBundle>(prepare(m, g, sc.cost()));
  ASSERT_FALSE(bundle->entry(2).feasible);
  const ResilientController c(bundle);
  const ControlResult r = c.control_step(Vec{{0.5, 0.1, 0.0}}, 1.0);
  EXPECT_EQ(r.q, 1u);
  EXPECT_TRUE(r.diagnostics.escalated);
  EXPECT_EQ(r.diagnostics.requested_q, 2u);
}

TEST(Baseline, OriginGivesZero) {
  const Scenario sc = default_scenario();
  const BaselineMpc mpc(sc.model().A_tau(), sc.model().B_tau(), sc.cost(), sc.plant().domain, sc.plant().input_set);
  const BaselineMpc::Result r = mpc.step(Vec::Zero(3));
  ASSERT_TRUE(r.feasible);
  EXPECT_NEAR(r.u(0), 0.0, 1e-9);
}

TEST(Baseline, NominalLimitMatchesResilient) {
  const Scenario sc = nominal_scenario();
  const ResilientController& c = *shared().nominal_ctrl;
  const BaselineMpc mpc(sc.model().A_tau(), sc.model().B_tau(), sc.cost(), sc.plant().domain, sc.plant().input_set);
  std::mt19937_64 rng(53);
  int compared = 0;
  for (const Vec& x : sample_inside(mpc.terminal_set(), 40, rng)) {
    const BaselineMpc::Result r = mpc.step(x);
    const ControlResult cr = c.control_step(x, 0.0);
    ASSERT_TRUE(r.feasible);
    EXPECT_NEAR(cr.u(0), r.u(0), 1e-6);
    ++compared;
  }
  EXPECT_EQ(compared, 40);
}

TEST(Bundle, RoundTripIsExact) {
  const ConstraintBundle& b = *shared().uncertain;
  const std::string text = bundle_to_json(b);
  const ConstraintBundle back = bundle_from_json(text);
  EXPECT_EQ(bundle_to_json(back), text);
  EXPECT_EQ(back.fingerprint, b.fingerprint);
  ASSERT_EQ(back.entries.size(), b.entries.size());
  for (std::size_t i = 0; i < b.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].terminal_set.H(), b.entries[i].terminal_set.H());
    EXPECT_EQ(back.entries[i].terminal_set.g(), b.entries[i].terminal_set.g());
    EXPECT_EQ(back.entries[i].K, b.entries[i].K);
    EXPECT_EQ(back.entries[i].delta, b.entries[i].delta);
  }
}

TEST(Bundle, RejectsTamperedModelAndVersion) {
  const std::string text = bundle_to_json(*shared().uncertain);
  nlohmann::json j = nlohmann::json::parse(text);
  nlohmann::json tampered = j;
  tampered["model"]["tau"] = 0.25;
  EXPECT_THROW(bundle_from_json(tampered.dump()), BundleError);
  nlohmann::json version = j;
  version["version"] = "resmpc-bundle/999";
  EXPECT_THROW(bundle_from_json(version.dump()), BundleError);
  EXPECT_THROW(bundle_from_json("{not json"), BundleError);
}

TEST(Bundle, SaveLoadFile) {
  const std::string path = testing::TempDir() + "/bundle_roundtrip.json";
  save_bundle(*shared().nominal, path);
  const ConstraintBundle back = load_bundle(path);
  EXPECT_EQ(bundle_to_json(back), bundle_to_json(*shared().nominal));
}
