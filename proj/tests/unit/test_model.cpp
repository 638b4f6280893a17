#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "resmpc/model.hpp"
#include "resmpc/sim.hpp"

using namespace resmpc;

namespace {

ContinuousPlant scalar_plant(double a, double b) {
  return ContinuousPlant{Mat::Constant(1, 1, a), Mat::Constant(1, 1, b), Vec::Zero(1),
                         HPolytope::from_box(Box::symmetric(Vec::Ones(1))),
                         HPolytope::from_box(Box::symmetric(Vec::Ones(1)))};
}

ContinuousPlant acc_plant() {
  return build_acc_model(AccParams{}, Vec::Constant(3, 0.01),
                         HPolytope::from_box(Box(Vec{{-100.0, -25.0, -8.0}}, Vec{{100.0, 25.0, 8.0}})),
                         HPolytope::from_box(Box(Vec{{-20.0}}, Vec{{20.0}})));
}

NoiseSpec default_noise() {
  NoiseSpec n;
  n.chi_bar = 0.01 * Mat::Identity(3, 3);
  n.eps_bar = Vec::Constant(3, 0.1);
  n.d_bar = Vec::Zero(3);
  return n;
}

}  // namespace

TEST(Discretize, Examples) {
  const DiscreteModel z = discretize(scalar_plant(0.0, 0.0), 0.2);
  EXPECT_EQ(z.A_tau(0, 0), 1.0);
  EXPECT_EQ(z.B_tau(0, 0), 0.0);

  const DiscreteModel s = discretize(scalar_plant(-1.0, 2.0), 0.1);
  EXPECT_NEAR(s.A_tau(0, 0), 0.9, 1e-15);
  EXPECT_NEAR(s.B_tau(0, 0), 0.2, 1e-15);

  const DiscreteModel acc = discretize(acc_plant(), 0.2);
  Mat A(3, 3);
  A << 1, 0.2, -0.32, 0, 1, -0.2, 0, 0, 1.0 - 0.2 / 0.46;
  EXPECT_LE((acc.A_tau - A).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(acc.A_tau(2, 2), 0.565217, 1e-6);
  EXPECT_NEAR(acc.B_tau(2, 0), -0.318261, 1e-6);
  EXPECT_EQ(acc.B_tau(0, 0), 0.0);
  EXPECT_EQ(acc.B_tau(1, 0), 0.0);

  EXPECT_THROW(discretize(acc_plant(), 0.0), std::invalid_argument);
  EXPECT_THROW(discretize(acc_plant(), -0.1), std::invalid_argument);
}

TEST(ParametricVertices, ZeroUncertainty) {
  const ParametricVertices v = parametric_vertices(Mat::Identity(2, 2), Mat::Ones(2, 1), Mat::Zero(2, 2), 0.0);
  for (const Mat& m : v.pi_a) EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0);
  for (const Mat& m : v.pi_b) EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ParametricVertices, AccValues) {
  const DiscreteModel d = discretize(acc_plant(), 0.2);
  const ParametricVertices v = parametric_vertices(d.A_tau, d.B_tau, 0.01 * Mat::Identity(3, 3), 0.0);
  ASSERT_EQ(v.pi_a.size(), 8u);
  ASSERT_EQ(v.pi_b.size(), 16u);
  EXPECT_NEAR(v.pi_b[7](2, 0), -0.0031826, 1e-7);
  EXPECT_NEAR(v.pi_b[0](2, 0), 0.0031826, 1e-7);

  const ParametricVertices h = parametric_vertices(d.A_tau, d.B_tau, 0.01 * Mat::Identity(3, 3), 0.5);
  // (0.01 - 1.01 * 0.5) * B3
  EXPECT_NEAR(h.pi_b[8 + 7](2, 0), (0.01 - 1.01 * 0.5) * d.B_tau(2, 0), 1e-15);
  EXPECT_NEAR(h.pi_b[8 + 7](2, 0), 0.157539, 1e-6);
}

TEST(ParametricVertices, RejectsNonDiagonalChi) {
  Mat chi = 0.01 * Mat::Identity(3, 3);
  chi(0, 1) = 0.001;
  EXPECT_THROW(parametric_vertices(Mat::Identity(3, 3), Mat::Ones(3, 1), chi, 0.0), std::invalid_argument);
}

TEST(ParametricVertices, RealizedMatricesInVertexHull) {
  const DiscreteModel d = discretize(acc_plant(), 0.2);
  const Vec chi_bar{{0.01, 0.02, 0.03}};
  const double omega_bar = 0.7;
  const ParametricVertices v = parametric_vertices(d.A_tau, d.B_tau, chi_bar.asDiagonal(), omega_bar);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Vec c(3);
    for (int i = 0; i < 3; ++i) c(i) = chi_bar(i) * unit(rng);
    const double omega = omega_bar * 0.5 * (1.0 + unit(rng));
    const std::vector<double> w = oracle::sign_vertex_weights(c, chi_bar);
    Mat combA = Mat::Zero(3, 3);
    Mat combB = Mat::Zero(3, 1);
    const double t = omega / omega_bar;
    for (std::size_t k = 0; k < 8; ++k) {
      combA += w[k] * v.pi_a[k];
      combB += w[k] * ((1.0 - t) * v.pi_b[k] + t * v.pi_b[8 + k]);
    }
    const Mat target_a = c.asDiagonal() * d.A_tau;
    const Mat ident = Mat::Identity(3, 3);
    const Mat target_b = (Mat(c.asDiagonal()) - (ident + Mat(c.asDiagonal())) * omega) * d.B_tau;
    EXPECT_LE((combA - target_a).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((combB - target_b).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(AdditiveBound, Examples) {
  NoiseSpec zero = NoiseSpec::zero(3);
  EXPECT_EQ(additive_bound(zero, Vec::Zero(3), 0.2, 10.0).cwiseAbs().maxCoeff(), 0.0);

  const NoiseSpec n = default_noise();
  const Vec eta = Vec::Constant(3, 0.01);
  const double expected10 = 0.01 * (1.01 * 0.2) * (1.0 / 0.99) * (10.0 + 0.1 * std::sqrt(3.0)) + 0.1;
  const double expected0 = 0.01 * (1.01 * 0.2) * (1.0 / 0.99) * (0.1 * std::sqrt(3.0)) + 0.1;
  const Vec d10 = additive_bound(n, eta, 0.2, 10.0);
  const Vec d0 = additive_bound(n, eta, 0.2, 0.0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(d10(i), expected10, 1e-14);
    EXPECT_NEAR(d10(i), 0.12076, 1e-5);
    EXPECT_NEAR(d0(i), expected0, 1e-14);
    EXPECT_NEAR(d0(i), 0.10035, 1e-5);
  }
}

TEST(AdditiveBound, RejectsChiAtOne) {
  NoiseSpec n = default_noise();
  n.chi_bar(1, 1) = 1.0;
  EXPECT_THROW(additive_bound(n, Vec::Constant(3, 0.01), 0.2, 1.0), std::invalid_argument);
}

TEST(AdditiveBound, MonotoneInEveryArgument) {
  const NoiseSpec base = default_noise();
  const Vec eta = Vec::Constant(3, 0.01);
  const Vec ref = additive_bound(base, eta, 0.2, 5.0);
  auto ge = [&](const Vec& v) { return ((v - ref).array() >= 0.0).all(); };
  EXPECT_TRUE(ge(additive_bound(base, eta, 0.2, 6.0)));
  EXPECT_TRUE(ge(additive_bound(base, 2.0 * eta, 0.2, 5.0)));
  NoiseSpec more_eps = base;
  more_eps.eps_bar *= 2.0;
  EXPECT_TRUE(ge(additive_bound(more_eps, eta, 0.2, 5.0)));
  NoiseSpec more_d = base;
  more_d.d_bar = Vec::Constant(3, 0.05);
  EXPECT_TRUE(ge(additive_bound(more_d, eta, 0.2, 5.0)));
  NoiseSpec more_chi = base;
  more_chi.chi_bar *= 3.0;
  EXPECT_TRUE(ge(additive_bound(more_chi, eta, 0.2, 5.0)));
}

TEST(UncertainModel, VertexCounts) {
  const UncertainModel m(acc_plant(), default_noise(), 0.2);
  EXPECT_EQ(m.pi_a_vertices().size(), 8u);
  EXPECT_EQ(m.pi_b_vertices_at(0.3).size(), 16u);
  const double sup = m.measurement_norm_sup();
  EXPECT_NEAR(sup, 1.01 * std::sqrt(100.0 * 100.0 + 25.0 * 25.0 + 8.0 * 8.0) + 0.1 * std::sqrt(3.0), 1e-9);
}

TEST(BuildGrid, Examples) {
  const BoundGrid a = build_grid(1.0, 10.0, 2, 1);
  ASSERT_EQ(a.omega_levels.size(), 2u);
  EXPECT_EQ(a.omega_levels[0], 0.0);
  EXPECT_EQ(a.omega_levels[1], 1.0);
  EXPECT_EQ(build_grid(1.0, 10.0, 10, 3).size(), 30u);
  const BoundGrid c = build_grid(0.5, 10.0, 3, 3);
  EXPECT_DOUBLE_EQ(c.omega_levels[1], 0.25);
  EXPECT_DOUBLE_EQ(c.omega_levels[2], 0.5);
  EXPECT_DOUBLE_EQ(c.ynorm_levels.back(), 10.0);
  EXPECT_THROW(build_grid(1.0, 10.0, 0, 3), std::invalid_argument);
  EXPECT_THROW(build_grid(1.0, 10.0, 3, -1), std::invalid_argument);
}

TEST(BuildGrid, LevelsAscendingAndEntriesOmegaMajor) {
  const BoundGrid g = build_grid(1.0, 106.0, 10, 3);
  for (std::size_t i = 1; i < g.omega_levels.size(); ++i) EXPECT_LT(g.omega_levels[i - 1], g.omega_levels[i]);
  for (std::size_t i = 1; i < g.ynorm_levels.size(); ++i) EXPECT_LT(g.ynorm_levels[i - 1], g.ynorm_levels[i]);
  const GridEntry e = g.entry(4);
  EXPECT_EQ(e.omega_index, 1u);
  EXPECT_EQ(e.ynorm_index, 0u);
  EXPECT_THROW(g.entry(0), std::out_of_range);
  EXPECT_THROW(g.entry(31), std::out_of_range);
}

TEST(SelectGrid, Examples) {
  const BoundGrid g = build_grid(0.5, 10.0, 3, 3);
  EXPECT_EQ(select_grid_index(g, 0.0, 0.0), 1u);
  EXPECT_EQ(g.entry(select_grid_index(g, 0.3, 0.0)).omega_level, 0.5);
  EXPECT_EQ(g.entry(select_grid_index(g, 0.5, 0.0)).omega_index, 2u);
  const GridSelection over = select_grid(g, 0.9, 50.0);
  EXPECT_TRUE(over.omega_clamped);
  EXPECT_TRUE(over.ynorm_saturated);
  EXPECT_EQ(over.q, g.size());
}

TEST(SelectGrid, IdempotentOnLevels) {
  const BoundGrid g = build_grid(1.0, 106.0, 10, 3);
  for (std::size_t q = 1; q <= g.size(); ++q) {
    const GridEntry e = g.entry(q);
    EXPECT_EQ(select_grid_index(g, e.omega_level, e.ynorm_level), q);
  }
}

TEST(SelectGrid, EveryPairMapsToCoveringEntry) {
  const BoundGrid g = build_grid(1.0, 106.0, 10, 3);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> w(0.0, 1.0), y(0.0, 106.0);
  for (int k = 0; k < 2000; ++k) {
    const double om = w(rng), yn = y(rng);
    const std::size_t q = select_grid_index(g, om, yn);
    const GridEntry e = g.entry(q);
    EXPECT_GE(e.omega_level, om);
    EXPECT_GE(e.ynorm_level, yn);
    if (e.omega_index > 0) {
      EXPECT_LT(g.omega_levels[e.omega_index - 1], om);
    }
    if (e.ynorm_index > 0) {
      EXPECT_LT(g.ynorm_levels[e.ynorm_index - 1], yn);
    }
  }
}
