#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mash/evaluate.hpp"
#include "mash/metrics.hpp"

using namespace mash;
using namespace mash::metrics;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Eigen::MatrixXd column(std::initializer_list<double> v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

std::vector<double> sinusoid(double f, double dt, int n, double phase0 = 0.0, double offset = 0.0) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) x[static_cast<std::size_t>(k)] = offset + 0.3 * std::sin(kTwoPi * f * k * dt + phase0);
  return x;
}

}  // namespace

TEST(ActionSmoothness, HandValues) {
  EXPECT_DOUBLE_EQ(action_smoothness(column({0, 1, 0, 1})), 0.75);
  EXPECT_DOUBLE_EQ(action_smoothness_second(column({0, 1, 0, 1})), 2.0);
  EXPECT_EQ(action_smoothness(Eigen::MatrixXd::Constant(10, 3, 0.4)), 0.0);
  Eigen::MatrixXd two(2, 2);
  two << 0, 0, 1, 2;
  EXPECT_DOUBLE_EQ(action_smoothness(two), (1.0 + 4.0) / 2.0);
  EXPECT_THROW(action_smoothness(Eigen::MatrixXd::Zero(1, 3)), InsufficientData);
  EXPECT_THROW(action_smoothness_second(Eigen::MatrixXd::Zero(2, 3)), InsufficientData);
}

TEST(ActionSmoothness, ShiftInvariantAndQuadraticInScale) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd a(50, 4);
  for (auto& x : a.reshaped()) x = n(rng);
  const double s = action_smoothness(a);
  EXPECT_GE(s, 0.0);
  EXPECT_NEAR(action_smoothness(a.array() + 3.0), s, 1e-12);
  EXPECT_NEAR(action_smoothness(2.5 * a), 6.25 * s, 1e-10);
  EXPECT_NEAR(action_smoothness_second(a.array() - 1.0), action_smoothness_second(a), 1e-12);
}

TEST(TorsoStability, HandValues) {
  EXPECT_NEAR(torso_stability({0.9, 1.1}, {0.0, 0.0}), 0.01, 1e-15);
  EXPECT_EQ(torso_stability({0.7, 0.7, 0.7}, {0.1, 0.1, 0.1}), 0.0);
  EXPECT_NEAR(torso_stability({0.9, 1.1}, {0.1, -0.1}, {2.0, 3.0}), 2.0 * 0.01 + 3.0 * 0.01, 1e-15);
  EXPECT_NEAR(torso_stability({1.0, 1.0}, std::vector<std::vector<double>>{{0.0, 0.2}, {0.0, 0.4}}), 0.01 + 0.04, 1e-15);
  EXPECT_THROW(torso_stability({1.0}, std::vector<double>{0.0}), InsufficientData);
  EXPECT_THROW(torso_stability({1.0, 1.0}, std::vector<double>{0.0}), ContractViolation);
  EXPECT_THROW(torso_stability({1.0, 1.0}, {0.0, 0.0}, {-1.0, 1.0}), ContractViolation);
}

TEST(TorsoStability, ShiftInvariant) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.05);
  std::vector<double> h(100), p(100), h2, p2;
  for (std::size_t i = 0; i < 100; ++i) {
    h[i] = 0.8 + n(rng);
    p[i] = n(rng);
    h2.push_back(h[i] + 5.0);
    p2.push_back(p[i] - 1.0);
  }
  EXPECT_NEAR(torso_stability(h2, p2), torso_stability(h, p), 1e-12);
}

TEST(WrapAngle, HalfOpenInterval) {
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-12);
  EXPECT_NEAR(wrap_angle(-7.0), -7.0 + kTwoPi, 1e-12);
  for (double a = -20.0; a < 20.0; a += 0.37) {
    const double w = wrap_angle(a);
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
    EXPECT_NEAR(std::remainder(w - a, kTwoPi), 0.0, 1e-9);
  }
}

TEST(LimbCoordination, AntiphaseInphaseAndWrapping) {
  std::vector<double> l, anti, in, wrapped;
  for (int t = 0; t < 100; ++t) {
    const double phi = wrap_angle(0.2 * t);
    l.push_back(phi);
    anti.push_back(wrap_angle(phi - kPi));
    in.push_back(phi);
    wrapped.push_back(phi - kPi + kTwoPi * (t % 5 - 2));
  }
  EXPECT_NEAR(limb_coordination(l, anti, kPi), 0.0, 1e-12);
  EXPECT_NEAR(limb_coordination(l, in, kPi), kPi, 1e-12);
  EXPECT_NEAR(limb_coordination(l, wrapped, kPi), 0.0, 1e-9);
  EXPECT_NEAR(limb_coordination(l, in, 0.0), 0.0, 1e-12);
  EXPECT_THROW(limb_coordination({0.0}, {0.0, 1.0}, kPi), ContractViolation);
  EXPECT_THROW(limb_coordination({}, {}, kPi), InsufficientData);
}

TEST(ConvergenceTime, ConstantCurve) {
  EXPECT_EQ(convergence_time(std::vector<double>(200, 3.0)), 1u);
  EXPECT_THROW(convergence_time(std::vector<double>(20, 1.0), 51), InsufficientData);
}

TEST(ConvergenceTime, StepCurve) {
  std::vector<double> c(1000, 0.0);
  for (std::size_t i = 500; i < c.size(); ++i) c[i] = 1.0;
  const auto t = convergence_time(c, 51);
  EXPECT_GE(t, 500u - 51u);
  EXPECT_LE(t, 500u + 51u);
  // Moving-average oracle: the smoothed step reaches 0.95 at 25 - floor(0.05 * 51) = 23 past the edge.
  EXPECT_EQ(t, 500u + 23u + 1u);
  EXPECT_EQ(convergence_time(c, 1), 501u);
}

TEST(ConvergenceTime, StablyMeansForTheRemainder) {
  // Reaches the asymptote early, dips, then recovers: convergence is after the dip.
  std::vector<double> c(600, 1.0);
  for (std::size_t i = 0; i < 100; ++i) c[i] = static_cast<double>(i) / 100.0;
  for (std::size_t i = 300; i < 320; ++i) c[i] = 0.0;
  EXPECT_GT(convergence_time(c, 1), 319u);
  // Negative rewards: asymptote -10, threshold -10.5.
  std::vector<double> neg(300, -10.0);
  for (std::size_t i = 0; i < 150; ++i) neg[i] = -20.0;
  EXPECT_EQ(convergence_time(neg, 1), 151u);
}

TEST(ExtractPhase, SinusoidAdvancesLinearly) {
  const double f = 1.5, dt = 1.0 / 60.0;
  const int n = 240;
  const auto phase = extract_phase(sinusoid(f, dt, n, 0.0, 0.2), dt);
  ASSERT_EQ(phase.size(), static_cast<std::size_t>(n));
  double worst = 0.0;
  for (int k = n / 5; k < 4 * n / 5; ++k)
    worst = std::max(worst, std::abs(wrap_angle(phase[static_cast<std::size_t>(k)] - kTwoPi * f * k * dt)));
  EXPECT_LT(worst, 0.05);
  EXPECT_NEAR(dominant_frequency(sinusoid(f, dt, n), dt).frequency, f, 0.02);
}

TEST(ExtractPhase, AntiphasePairGivesPi) {
  const double f = 1.3, dt = 1.0 / 60.0;
  const auto l = extract_phase(sinusoid(f, dt, 300), dt);
  const auto r = extract_phase(sinusoid(f, dt, 300, kPi), dt);
  for (std::size_t k = 60; k < 240; ++k) EXPECT_GT(std::abs(wrap_angle(l[k] - r[k])), kPi - 0.05);
  EXPECT_LT(limb_coordination(l, r, kPi), 0.05);
}

TEST(ExtractPhase, Errors) {
  EXPECT_THROW(extract_phase(std::vector<double>(240, 0.3), 1.0 / 60.0), AperiodicGait);
  EXPECT_THROW(extract_phase(sinusoid(0.3, 1.0 / 60.0, 240), 1.0 / 60.0), InsufficientData);
  EXPECT_THROW(extract_phase({0.0, 1.0, 0.0}, 1.0 / 60.0), InsufficientData);
}

TEST(EpisodeMetrics, StandingTraceIsAperiodic) {
  const auto m = presets::planar_walker();
  eval::EpisodeTrace tr;
  for (int k = 0; k < 60; ++k) {
    tr.t.push_back(k / 60.0);
    tr.x.push_back(0.0);
    tr.z.push_back(k % 2 ? 0.9 : 1.1);
    tr.pitch.push_back(0.0);
    tr.q.push_back(m.q_default());
    tr.target.push_back(m.q_default());
    tr.action.push_back(Eigen::VectorXd::Zero(10));
  }
  const auto em = eval::episode_metrics(tr, m, 6, {}, 1.0 / 60.0);
  EXPECT_TRUE(em.aperiodic);
  EXPECT_DOUBLE_EQ(em.c_limb, kPi);
  EXPECT_EQ(em.s_action, 0.0);
  EXPECT_NEAR(em.s_torso, 0.01, 1e-12);
}

TEST(EpisodeMetrics, HipJointsArePicked) {
  const auto hips = eval::hip_joints(presets::planar_walker());
  EXPECT_EQ(hips[0], 0u);
  EXPECT_EQ(hips[1], 3u);
  const auto paper = presets::paper_dims();
  const auto ph = eval::hip_joints(paper);
  EXPECT_EQ(ph[1] - ph[0], paper.leg_dof());
}
