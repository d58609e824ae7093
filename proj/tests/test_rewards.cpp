#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mash/env.hpp"
#include "mash/rewards.hpp"
#include "oracles.hpp"

using namespace mash;
using namespace mash::reward;

using oracle::config;
using oracle::random_snapshot;
using oracle::random_vec;
using oracle::walker;


TEST(Rewards, DefaultScalesMatchTable) {
  const std::array<double, kTermCount> expected = {3.5,    1.5,  1.4, -2.0e-3, -5e-4, -1.0e-7, 2.0,  2.0,
                                                   1.2,    1.0,  -1.0, -5e-2,  0.2,   -0.1,    -0.1, -2e-4};
  EXPECT_EQ(RewardConfig{}.scales, expected);
  EXPECT_EQ(kTermNames.size(), 16u);
}

TEST(Rewards, MatchesDirectEvaluation) {
  std::mt19937_64 rng(100);
  const auto cfg = config();
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_snapshot(rng);
    const auto refs = reference_signals(s, walker());
    const auto b = compute_reward_terms(s, refs, cfg);
    const auto o = oracle::reward_terms(s, refs, cfg);
    double total = 0.0;
    for (std::size_t i = 0; i < kTermCount; ++i) {
      EXPECT_NEAR(b.unscaled[i], o[i], 1e-9 * std::max(1.0, std::abs(o[i]))) << kTermNames[i];
      EXPECT_EQ(b.scaled[i], cfg.scales[i] * b.unscaled[i]);
      total += cfg.scales[i] * b.unscaled[i];
    }
    EXPECT_NEAR(b.total, total, 1e-12 * std::max(1.0, std::abs(total)));
  }
}

TEST(Rewards, PerfectTrackingGivesOne) {
  std::mt19937_64 rng(1);
  auto s = random_snapshot(rng);
  s.commands = {0.0, 0.7, 0.0, 0.0};
  s.vx = 0.7;
  const auto b = compute_reward_terms(s, reference_signals(s, walker()), config());
  EXPECT_EQ(b.unscaled_of("tracking_lin_vel"), 1.0);
  EXPECT_EQ(b.unscaled_of("tracking_ang_vel"), 1.0);
}

TEST(Rewards, ConstantActionsAreSmooth) {
  std::mt19937_64 rng(2);
  auto s = random_snapshot(rng);
  s.action_prev = s.action_prev2 = s.action;
  const auto b = compute_reward_terms(s, reference_signals(s, walker()), config());
  EXPECT_EQ(b.unscaled[ActionSmoothness1], 0.0);
  EXPECT_EQ(b.unscaled[ActionSmoothness2], 0.0);
}

TEST(Rewards, FeetContactNumber) {
  std::mt19937_64 rng(3);
  auto s = random_snapshot(rng);
  auto refs = reference_signals(s, walker());
  refs.stance = {true, false};
  s.feet[0].contact = true;
  s.feet[1].contact = false;
  EXPECT_DOUBLE_EQ(compute_reward_terms(s, refs, config()).unscaled[FeetContactNumber], 2.0);
  s.feet[1].contact = true;
  EXPECT_DOUBLE_EQ(compute_reward_terms(s, refs, config()).unscaled[FeetContactNumber], 0.7);
}

TEST(Rewards, SaturatedTorques) {
  std::mt19937_64 rng(4);
  auto s = random_snapshot(rng);
  const auto cfg = config();
  s.tau = cfg.torque_limits;
  const auto b = compute_reward_terms(s, reference_signals(s, walker()), cfg);
  EXPECT_DOUBLE_EQ(b.unscaled[DofTorques], 10.0);
  EXPECT_DOUBLE_EQ(b.scaled[DofTorques], -0.02);
}

TEST(Rewards, ReferencePositions) {
  const auto& m = walker();
  EXPECT_EQ(reference_joint_positions(0.37, {1.0, 0.0, 0.0, 0.0}, m), Eigen::VectorXd::Zero(10));
  // At t = 0 the left leg director is sin(0) = 0.
  const auto r0 = reference_joint_positions(0.0, {0.0, 0.5, 0.0, 0.0}, m);
  EXPECT_EQ(r0.head(3), Eigen::VectorXd::Zero(3));
  // k t = 0.25 puts the left leg director at its peak.
  const double t = 0.25 / m.gait_frequency;
  const auto r = reference_joint_positions(t, {0.0, 0.5, 0.0, 0.0}, m);
  EXPECT_NEAR(r[0], 0.3, 1e-12);
  EXPECT_NEAR(r[3], -0.3, 1e-12);
}

TEST(Rewards, Boundedness) {
  std::mt19937_64 rng(5);
  const auto cfg = config();
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_snapshot(rng);
    const auto b = compute_reward_terms(s, reference_signals(s, walker()), cfg);
    for (auto t : {JointPosition, TrackingLinVel, TrackingAngVel, BaseHeight}) {
      EXPECT_GT(b.unscaled[t], 0.0);
      EXPECT_LE(b.unscaled[t], 1.0);
    }
    for (std::size_t i = 0; i < kTermCount; ++i)
      if (cfg.scales[i] < 0) EXPECT_LE(b.scaled[i], 0.0) << kTermNames[i];
  }
}

TEST(Rewards, ScaleLinearity) {
  std::mt19937_64 rng(6);
  const auto s = random_snapshot(rng);
  const auto refs = reference_signals(s, walker());
  auto cfg = config();
  const auto base = compute_reward_terms(s, refs, cfg);
  cfg.scales[FeetSlip] *= 2.0;
  const auto doubled = compute_reward_terms(s, refs, cfg);
  for (std::size_t i = 0; i < kTermCount; ++i) {
    if (i == FeetSlip)
      EXPECT_EQ(doubled.scaled[i], 2.0 * base.scaled[i]);
    else
      EXPECT_EQ(doubled.scaled[i], base.scaled[i]);
  }
}

TEST(Rewards, FrozenRobotFixpoint) {
  sim::StepSnapshot s;
  s.control_dt = 1.0 / 60.0;
  s.q = walker().q_default();
  s.qd = s.qd_prev = Eigen::VectorXd::Zero(10);
  s.tau = s.tau_prev = Eigen::VectorXd::Constant(10, 3.0);
  s.action = s.action_prev = s.action_prev2 = Eigen::VectorXd::Zero(10);
  s.q_target = s.q;
  s.z = 0.75;
  s.feet.resize(2);
  s.feet[0].contact = s.feet[1].contact = true;
  s.feet[0].vx = s.feet[1].vx = 0.0;
  s.commands = {1.0, 0.0, 0.0, 0.0};
  const auto refs = reference_signals(s, walker());
  ASSERT_EQ(refs.stance, (std::vector<bool>{true, true}));
  const auto b = compute_reward_terms(s, refs, config());
  for (auto t : {ActionSmoothness1, ActionSmoothness2, TorqueRate, DofVelocity, DofAcceleration, FeetSlip})
    EXPECT_EQ(b.unscaled[t], 0.0) << kTermNames[t];
  EXPECT_EQ(b.unscaled[JointPosition], 1.0);
  EXPECT_EQ(b.unscaled[FeetContactNumber], 2.0);
}

TEST(Rewards, OrientationPrefersUpright) {
  std::mt19937_64 rng(7);
  auto s = random_snapshot(rng);
  const auto refs = reference_signals(s, walker());
  s.pitch = 0.0;
  const double upright = compute_reward_terms(s, refs, config()).unscaled[Orientation];
  EXPECT_DOUBLE_EQ(upright, 2.0);
  s.pitch = 0.4;
  EXPECT_LT(compute_reward_terms(s, refs, config()).unscaled[Orientation], upright);
  auto literal = config();
  literal.literal_orientation = true;
  EXPECT_DOUBLE_EQ(compute_reward_terms(s, refs, literal).unscaled[Orientation],
                   std::exp(0.4) + std::exp(std::sin(0.4)));
}

TEST(Rewards, MissingFieldNamesTerm) {
  std::mt19937_64 rng(8);
  auto s = random_snapshot(rng);
  const auto refs = reference_signals(s, walker());
  s.tau_prev.resize(0);
  try {
    compute_reward_terms(s, refs, config());
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("torque_rate"), std::string::npos);
  }
}

TEST(Rewards, LiveEnvironmentBreakdownIsConsistent) {
  sim::WalkerEnv env(walker());
  std::mt19937_64 rng(9);
  env.reset({}, {0.0, 0.6, 0.0, 0.0}, rng);
  const auto cfg = default_reward_config(walker(), env.model().standing_height());
  std::normal_distribution<double> n(0.0, 0.5);
  dr::StepPerturbation none;
  none.torque_noise = Eigen::VectorXd::Zero(10);
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd a(10);
    for (auto& v : a) v = n(rng);
    const auto& snap = env.step(a, none);
    const auto b = compute_reward_terms(snap, reference_signals(snap, walker()), cfg);
    double dot = 0.0;
    for (std::size_t i = 0; i < kTermCount; ++i) dot += cfg.scales[i] * b.unscaled[i];
    EXPECT_NEAR(b.total, dot, 1e-12 * std::max(1.0, std::abs(dot)));
    if (snap.terminated) break;
  }
}
