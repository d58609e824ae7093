#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mash/env.hpp"
#include "mash/observation.hpp"
#include "oracles.hpp"

using namespace mash;
using namespace mash::obs;

namespace {

sim::StepSnapshot live_snapshot(const MorphologyConfig& m, std::uint64_t seed, int steps = 10) {
  sim::WalkerEnv env(m);
  std::mt19937_64 rng(seed);
  env.reset({}, {0.0, 0.6, 0.0, 0.0}, rng);
  std::normal_distribution<double> n(0.0, 0.5);
  dr::StepPerturbation none;
  none.torque_noise = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.dof_total()));
  for (int k = 0; k < steps; ++k) {
    Eigen::VectorXd a(static_cast<Eigen::Index>(m.dof_total()));
    for (auto& v : a) v = n(rng);
    env.step(a, none);
  }
  return env.snapshot();
}

using oracle::ks_uniform;

}  // namespace

TEST(TemporalDirector, Values) {
  EXPECT_EQ(temporal_director(0.0, 1.5, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(temporal_director(0.1, 1.5, 0.1), 1.0);  // k t + offset = 0.25
  for (double t = 0.0; t < 3.0; t += 0.013) {
    EXPECT_NEAR(temporal_director(t, 1.5, 0.0), -temporal_director(t, 1.5, 0.5), 1e-12);
    EXPECT_NEAR(temporal_director(t + 1.0 / 1.5, 1.5, 0.2), temporal_director(t, 1.5, 0.2), 1e-9);
  }
}

TEST(StanceMask, AntiphaseAndStanding) {
  const std::vector<double> offsets = {0.0, 0.5};
  EXPECT_EQ(stance_mask(0.37, 1.5, offsets, true), (std::vector<bool>{true, true}));
  const double dt = 1.0 / 60.0;
  int left = 0, both = 0;
  const int steps = static_cast<int>(std::lround(1.0 / 1.5 / dt));
  for (int k = 0; k < steps; ++k) {
    const double t = (k + 0.5) * dt;  // avoid zero crossings
    const auto m = stance_mask(t, 1.5, offsets, false);
    EXPECT_NE(m[0], m[1]);
    left += m[0] ? 1 : 0;
    both += m[0] && m[1] ? 1 : 0;
  }
  EXPECT_EQ(both, 0);
  EXPECT_LE(std::abs(left - steps / 2), 1);
}

TEST(Layout, PaperDimensions) {
  const auto m = presets::paper_dims();
  EXPECT_EQ(agent_layout(m.leg_dof()).width(), 32u);
  EXPECT_EQ(agent_layout(m.arm_dof()).width(), 26u);
  EXPECT_EQ(2 * agent_layout(m.leg_dof()).width(), 64u);
  EXPECT_EQ(2 * agent_layout(m.arm_dof()).width(), 52u);
  EXPECT_EQ(critic_layout(m.dof_total()).width(), 106u);

  const auto snap = live_snapshot(m, 1, 2);
  const auto legl = build_agent_obs(snap, {LimbGroup::Legs, Side::Left}, m, agent_layout(6));
  const auto legr = build_agent_obs(snap, {LimbGroup::Legs, Side::Right}, m, agent_layout(6));
  const auto arml = build_agent_obs(snap, {LimbGroup::Arms, Side::Left}, m, agent_layout(4));
  const auto armr = build_agent_obs(snap, {LimbGroup::Arms, Side::Right}, m, agent_layout(4));
  EXPECT_EQ(legl.size(), 32);
  EXPECT_EQ(arml.size(), 26);
  EXPECT_EQ(build_group_input(legl, legr).size(), 64);
  EXPECT_EQ(build_group_input(arml, armr).size(), 52);
  EXPECT_EQ(build_critic_obs(snap, {}, m, critic_layout(20)).size(), 106);
}

TEST(Layout, PlanarWalkerDimensions) {
  const auto m = presets::planar_walker();
  for (std::size_t dof = 1; dof < 9; ++dof) EXPECT_EQ(agent_layout(dof).width(), 3 * dof + 14);
  for (std::size_t dof = 2; dof < 30; dof += 3) EXPECT_EQ(critic_layout(dof).width(), 4 * dof + 26);
  EXPECT_EQ(agent_layout(3).width(), 23u);
  EXPECT_EQ(2 * agent_layout(3).width(), 46u);
  EXPECT_EQ(critic_layout(m.dof_total()).width(), 66u);
}

TEST(AgentObs, PackingRoundTrip) {
  const auto m = presets::planar_walker();
  const auto snap = live_snapshot(m, 2);
  const AgentId id{LimbGroup::Legs, Side::Right};
  const auto layout = agent_layout(3);
  const auto f = unpack(layout, build_agent_obs(snap, id, m, layout));
  EXPECT_EQ(f.at("q"), snap.q.segment(3, 3));
  EXPECT_EQ(f.at("qd"), snap.qd.segment(3, 3));
  EXPECT_EQ(f.at("prev_action"), snap.action.segment(3, 3));
  EXPECT_DOUBLE_EQ(f.at("phase")[0], temporal_director(snap.t, m.gait_frequency, 0.0));
  EXPECT_DOUBLE_EQ(f.at("phase")[1], temporal_director(snap.t, m.gait_frequency, 0.5));
  EXPECT_EQ(f.at("euler"), Eigen::Vector3d(0.0, snap.pitch, 0.0));
  EXPECT_EQ(f.at("ang_vel"), Eigen::Vector3d(0.0, snap.pitch_rate, 0.0));
  EXPECT_EQ(f.at("commands"), Eigen::Vector4d(0.0, 0.6, 0.0, 0.0));
  EXPECT_EQ(f.at("agent_id"), Eigen::Vector2d(0.0, 1.0));
}

TEST(AgentObs, ArmPhaseIsAntiphaseToSameSideLeg) {
  const auto m = presets::planar_walker();
  const auto snap = live_snapshot(m, 3);
  const auto arm = unpack(agent_layout(2), build_agent_obs(snap, {LimbGroup::Arms, Side::Left}, m, agent_layout(2)));
  const auto leg = unpack(agent_layout(3), build_agent_obs(snap, {LimbGroup::Legs, Side::Left}, m, agent_layout(3)));
  EXPECT_NEAR(arm.at("phase")[0], -leg.at("phase")[0], 1e-12);
  EXPECT_NEAR(arm.at("phase")[1], -leg.at("phase")[1], 1e-12);
}

TEST(AgentObs, OneHotFlipChangesTwoEntries) {
  const auto m = presets::planar_walker();
  auto snap = live_snapshot(m, 4);
  // Identical limb states on both sides.
  snap.q.segment(3, 3) = snap.q.segment(0, 3);
  snap.qd.segment(3, 3) = snap.qd.segment(0, 3);
  snap.action.segment(3, 3) = snap.action.segment(0, 3);
  const auto l = build_agent_obs(snap, {LimbGroup::Legs, Side::Left}, m, agent_layout(3));
  const auto r = build_agent_obs(snap, {LimbGroup::Legs, Side::Right}, m, agent_layout(3));
  int differing = 0;
  for (Eigen::Index i = 0; i < l.size(); ++i) differing += l[i] != r[i] ? 1 : 0;
  EXPECT_EQ(differing, 2);
  EXPECT_EQ(build_agent_obs(snap, {LimbGroup::Legs, Side::Left}, m, agent_layout(3)), l);
}

TEST(AgentObs, LayoutMismatchThrows) {
  const auto m = presets::planar_walker();
  const auto snap = live_snapshot(m, 5, 1);
  EXPECT_THROW(build_agent_obs(snap, {LimbGroup::Legs, Side::Left}, m, agent_layout(2)), ContractViolation);
  EXPECT_THROW(build_critic_obs(snap, {}, m, critic_layout(12)), ContractViolation);
  EXPECT_THROW(build_group_input(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(4)), ContractViolation);
}

TEST(AgentObs, NoiseOnlyTouchesProprioception) {
  const auto m = presets::planar_walker();
  const auto snap = live_snapshot(m, 6);
  const auto layout = agent_layout(3);
  const AgentId id{LimbGroup::Legs, Side::Left};
  std::mt19937_64 rng(1);
  const auto clean = unpack(layout, build_agent_obs(snap, id, m, layout));
  const auto noisy = unpack(layout, build_agent_obs(snap, id, m, layout, ObsNoise{0.1}, &rng));
  EXPECT_NE(noisy.at("q"), clean.at("q"));
  EXPECT_NE(noisy.at("euler"), clean.at("euler"));
  EXPECT_EQ(noisy.at("prev_action"), clean.at("prev_action"));
  EXPECT_EQ(noisy.at("commands"), clean.at("commands"));
  EXPECT_EQ(noisy.at("agent_id"), clean.at("agent_id"));
}

TEST(GroupInput, LeftThenRight) {
  Eigen::VectorXd v(4);
  v << 1, 2, 3, 4;
  const auto g = build_group_input(v, v);
  EXPECT_EQ(g.head(4), v);
  EXPECT_EQ(g.tail(4), v);
}

TEST(CriticObs, PackingRoundTrip) {
  const auto m = presets::planar_walker();
  const auto snap = live_snapshot(m, 7);
  dr::PhysicsOverrides ov;
  ov.friction = 0.37;
  ov.link_mass_scale = 1.05;
  const auto layout = critic_layout(10);
  const auto f = unpack(layout, build_critic_obs(snap, ov, m, layout));
  EXPECT_EQ(f.at("q"), snap.q);
  EXPECT_EQ(f.at("qd"), snap.qd);
  EXPECT_EQ(f.at("prev_action"), snap.action);
  EXPECT_EQ(f.at("pos_deviation"), snap.q_target - snap.q);
  EXPECT_EQ(f.at("lin_vel"), Eigen::Vector3d(snap.vx, 0.0, snap.vz));
  EXPECT_EQ(f.at("friction")[0], 0.37);
  EXPECT_EQ(f.at("mass")[0], 1.05);
  EXPECT_EQ(f.at("push_force"), Eigen::Vector2d::Zero());
  EXPECT_EQ(f.at("push_torque"), Eigen::Vector3d::Zero());
  const auto stance = stance_mask(snap.t, m.gait_frequency, {0.0, 0.5}, false);
  EXPECT_EQ(f.at("stance_mask")[0], stance[0] ? 1.0 : 0.0);
  EXPECT_EQ(f.at("contact_mask")[1], snap.feet[1].contact ? 1.0 : 0.0);
}

TEST(Commands, SamplingRules) {
  std::mt19937_64 rng(11);
  CommandRanges all_standing;
  all_standing.standing_probability = 1.0;
  EXPECT_EQ(sample_commands(rng, all_standing), (sim::CommandVector{1.0, 0.0, 0.0, 0.0}));

  CommandRanges r;
  std::vector<double> vx;
  int standing = 0;
  for (int k = 0; k < 20000; ++k) {
    const auto c = sample_commands(rng, r);
    EXPECT_EQ(c.vy, 0.0);
    EXPECT_EQ(c.yaw_rate, 0.0);
    if (c.is_standing()) {
      ++standing;
      EXPECT_EQ(c.vx, 0.0);
    } else {
      vx.push_back(c.vx);
    }
  }
  EXPECT_NEAR(standing / 20000.0, 0.1, 0.01);
  vx.resize(10000);
  EXPECT_LT(ks_uniform(vx, 0.2, 1.0), 0.02);
}
