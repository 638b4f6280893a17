#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "resmpc/detect.hpp"
#include "resmpc/sim.hpp"

using namespace resmpc;

namespace {

KalmanConfig scalar_config() {
  KalmanConfig c;
  c.Q_f = Mat::Zero(1, 1);
  c.R_meas = Mat::Ones(1, 1);
  c.P_init = Mat::Ones(1, 1);
  return c;
}

struct AccFine {
  Mat A_s, B_s;
};

AccFine acc_fine() {
  const Scenario sc = load_scenario(RESMPC_CONFIG_DIR "/acc_default.yaml");
  PlantConfig pc = sc.plant_config();
  const AccPlant plant(pc);
  return {plant.A_s(), plant.B_s()};
}

KalmanConfig matched_config(double q, double r) {
  KalmanConfig c;
  c.Q_f = q * Mat::Identity(3, 3);
  c.R_meas = r * Mat::Identity(3, 3);
  c.P_init = r * Mat::Identity(3, 3);
  return c;
}

}  // namespace

TEST(KfStep, HandComputedScalar) {
  const KalmanConfig c = scalar_config();
  DetectorState s = DetectorState::initial(Vec::Zero(1), c, 10);
  const KfOutput o = kf_step(s, Vec::Zero(1), Vec::Constant(1, 2.0), Mat::Ones(1, 1), Mat::Zero(1, 1), c);
  // P- = 1, S = 2, gain 0.5
  EXPECT_DOUBLE_EQ(s.P(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.x_hat(0), 1.0);
  EXPECT_DOUBLE_EQ(o.residual(0), 2.0);
  EXPECT_DOUBLE_EQ(o.stat, 2.0);
}

TEST(KfStep, SingularInnovationThrows) {
  KalmanConfig c;
  c.Q_f = Mat::Zero(2, 2);
  c.R_meas = Mat::Zero(2, 2);
  c.P_init = Mat::Zero(2, 2);
  DetectorState s = DetectorState::initial(Vec::Zero(2), c, 1);
  EXPECT_THROW(kf_step(s, Vec::Zero(1), Vec::Zero(2), Mat::Identity(2, 2), Mat::Zero(2, 1), c), DetectorError);
}

TEST(KfStep, ConfigValidation) {
  KalmanConfig c = matched_config(0.01, 0.01);
  EXPECT_NO_THROW(c.validate());
  c.R_meas(0, 0) = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = matched_config(0.01, 0.01);
  c.Q_f(0, 1) = 0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(KfStep, NoiseFreeConvergesToZero) {
  const AccFine m = acc_fine();
  const KalmanConfig c = matched_config(1e-4, 1e-2);
  const Vec x0{{3.0, -1.0, 0.5}};
  DetectorState s = DetectorState::initial(Vec::Zero(3), c, 10);
  Vec x = x0;
  KfOutput o;
  for (int k = 0; k < 3000; ++k) {
    const Vec u = Vec::Constant(1, std::sin(0.01 * k));
    x = m.A_s * x + m.B_s * u;
    o = kf_step(s, u, x, m.A_s, m.B_s, c);
  }
  EXPECT_LT(o.residual.norm(), 1e-6);
  EXPECT_LT(o.stat, 1e-6);
}

TEST(KfStep, CovarianceStaysSymmetric) {
  const AccFine m = acc_fine();
  const KalmanConfig c = matched_config(0.01, 0.01);
  oracle::MatchedGaussian gen(m.A_s, m.B_s, c.Q_f, c.R_meas, Vec::Zero(3), 5);
  DetectorState s = DetectorState::initial(Vec::Zero(3), c, 10);
  for (int k = 0; k < 2000; ++k) {
    const Vec u = Vec::Constant(1, 1.0);
    kf_step(s, u, gen.step(u), m.A_s, m.B_s, c);
    ASSERT_LE((s.P - s.P.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_GE(Eigen::SelfAdjointEigenSolver<Mat>(s.P).eigenvalues().minCoeff(), 0.0);
  }
}

TEST(KfStep, MatchedNoiseStatisticIsChiSquare) {
  const AccFine m = acc_fine();
  const KalmanConfig c = matched_config(0.01, 0.01);
  oracle::MatchedGaussian gen(m.A_s, m.B_s, c.Q_f, c.R_meas, Vec::Zero(3), 99);
  DetectorState s = DetectorState::initial(Vec::Zero(3), c, 10);
  double sum = 0.0;
  long flags = 0;
  const int burn = 500, steps = 100000;
  for (int k = 0; k < burn + steps; ++k) {
    const Vec u = Vec::Zero(1);
    const KfOutput o = kf_step(s, u, gen.step(u), m.A_s, m.B_s, c);
    if (k < burn) continue;
    sum += o.stat;
    flags += test_attack(o.stat, c.T) ? 1 : 0;
  }
  EXPECT_NEAR(sum / steps, 3.0, 0.3);
  const double expected = oracle::chi2_3_sf(c.T);
  EXPECT_NEAR(expected, 0.01, 1e-4);
  EXPECT_NEAR(static_cast<double>(flags) / steps, expected, 0.2 * expected);
}

TEST(TestAttack, Boundary) {
  EXPECT_FALSE(test_attack(0.0, kChiSquare3Q99));
  EXPECT_FALSE(test_attack(kChiSquare3Q99, kChiSquare3Q99));
  EXPECT_TRUE(test_attack(std::nextafter(kChiSquare3Q99, 100.0), kChiSquare3Q99));
}

TEST(EstimateIntensity, Examples) {
  FlagHistory empty(10);
  EXPECT_EQ(estimate_intensity(empty, 10), 0.0);
  FlagHistory h(10);
  for (int i = 0; i < 10; ++i) h.push(false);
  EXPECT_EQ(estimate_intensity(h, 10), 0.0);
  for (int i = 0; i < 10; ++i) h.push(true);
  EXPECT_EQ(estimate_intensity(h, 10), 1.0);
  for (int i = 0; i < 10; ++i) h.push(i % 2 == 0);
  EXPECT_EQ(estimate_intensity(h, 10), 0.5);
  FlagHistory short_h(10);
  short_h.push(true);
  short_h.push(false);
  EXPECT_EQ(estimate_intensity(short_h, 10), 0.5);
}

TEST(EstimateIntensity, PeriodicAttackGivesDutyCycle) {
  const std::size_t window = 100;
  FlagHistory h(window);
  for (int step = 0; step < 1000; ++step) {
    h.push(step % 20 < 7);
    if (step >= 99) {
      const double w = estimate_intensity(h, window);
      if ((step + 1) % 20 == 0) {
        EXPECT_EQ(w, 7.0 / 20.0);
      }
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
    }
  }
}

TEST(FlagHistory, RingOrder) {
  FlagHistory h(3);
  h.push(true);
  h.push(false);
  h.push(false);
  h.push(true);
  EXPECT_EQ(h.size(), 3u);
  EXPECT_TRUE(h.recent(0));
  EXPECT_FALSE(h.recent(1));
  EXPECT_FALSE(h.recent(2));
  EXPECT_THROW(h.recent(3), std::out_of_range);
}

TEST(Detector, FlagsBlockedActuator) {
  const AccFine m = acc_fine();
  const KalmanConfig c = matched_config(1e-4, 1e-4);
  oracle::MatchedGaussian gen(m.A_s, m.B_s, c.Q_f, c.R_meas, Vec::Zero(3), 3);
  Detector det(m.A_s, m.B_s, c, 50, Vec::Zero(3));
  long flags_quiet = 0, flags_attack = 0;
  for (int k = 0; k < 2000; ++k) {
    const bool attack = k >= 1000 && (k / 25) % 2 == 0;
    const Vec u_cmd = Vec::Constant(1, (k / 100) % 2 == 0 ? 10.0 : -10.0);
    const Vec y = gen.step(attack ? Vec::Zero(1) : u_cmd);
    const Detector::Sample s = det.step(u_cmd, y);
    (k < 1000 ? flags_quiet : flags_attack) += s.flag ? 1 : 0;
    EXPECT_GE(s.omega_hat, 0.0);
    EXPECT_LE(s.omega_hat, 1.0);
  }
  EXPECT_GT(flags_attack, 10 * std::max(1L, flags_quiet));
}
