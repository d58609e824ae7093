#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mash/mappo.hpp"
#include "oracles.hpp"

using namespace mash;
using namespace mash::rl;

namespace {

using Vd = Eigen::VectorXd;

TrainerConfig small_config() {
  TrainerConfig c;
  c.envs = 4;
  c.horizon = 16;
  c.actor_hidden = {16, 16};
  c.critic_hidden = {24, 24};
  c.epochs = 2;
  c.minibatches = 2;
  return c;
}

template <typename Scalar>
Trainer<Scalar> small_trainer(const MorphologyConfig& m, Mode mode, Algorithm alg, std::uint64_t seed, int threads = 1,
                              TrainerConfig cfg = small_config()) {
  const auto roster = make_roster(m, mode, alg, cfg.per_limb);
  return Trainer<Scalar>(m, roster, cfg, reward::default_reward_config(m, sim::WalkerModel(m).standing_height()),
                         dr::RandomizationTable{}, seed, threads);
}

void expect_gradients_match(const AgentRoster& roster, const TrainerConfig& cfg, std::uint64_t seed) {
  const auto check = oracle::check_loss_gradients(roster, cfg, seed);
  EXPECT_GT(check.checked, 20);
  EXPECT_LT(check.max_error, 1e-5);
}

}  // namespace

TEST(Gae, LambdaZeroIsTdResidual) {
  const std::vector<double> r = {1.0, -0.5, 2.0, 0.25}, v = {0.3, 0.1, -0.7, 1.1};
  const std::vector<bool> d = {false, true, false, false};
  const auto g = compute_gae(r, v, d, 0.4, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0 + 0.9 * 0.1 - 0.3);
  EXPECT_DOUBLE_EQ(g.advantages[1], -0.5 - 0.1);
  EXPECT_DOUBLE_EQ(g.advantages[2], 2.0 + 0.9 * 1.1 + 0.7);
  EXPECT_DOUBLE_EQ(g.advantages[3], 0.25 + 0.9 * 0.4 - 1.1);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_DOUBLE_EQ(g.returns[t], g.advantages[t] + v[t]);
}

TEST(Gae, GammaZeroIsRewardMinusValue) {
  const std::vector<double> r = {1.0, -0.5, 2.0}, v = {0.3, 0.1, -0.7};
  const auto g = compute_gae(r, v, {false, false, false}, 5.0, 0.0, 0.95);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(g.advantages[t], r[t] - v[t]);
}

TEST(Gae, MatchesBruteForceSum) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution done(0.15);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(6), v(6);
    std::vector<bool> d(6);
    for (int t = 0; t < 6; ++t) {
      r[static_cast<std::size_t>(t)] = n(rng);
      v[static_cast<std::size_t>(t)] = n(rng);
      d[static_cast<std::size_t>(t)] = done(rng);
    }
    const double boot = n(rng), gamma = 0.999 * u(rng), lambda = u(rng);
    const auto g = compute_gae(r, v, d, boot, gamma, lambda);
    const auto expected = oracle::brute_force_gae(r, v, d, boot, gamma, lambda);
    for (std::size_t t = 0; t < 6; ++t) ASSERT_NEAR(g.advantages[t], expected[t], 1e-10);
  }
}

TEST(Gae, ZeroValuesGiveDiscountedRewardSums) {
  const std::vector<double> r = {1.0, 2.0, 3.0};
  const auto g = compute_gae(r, {0.0, 0.0, 0.0}, {false, false, false}, 0.0, 0.9, 1.0);
  EXPECT_NEAR(g.returns[0], 1.0 + 0.9 * 2.0 + 0.81 * 3.0, 1e-12);
  EXPECT_NEAR(g.returns[1], 2.0 + 0.9 * 3.0, 1e-12);
  EXPECT_NEAR(g.returns[2], 3.0, 1e-12);
}

TEST(Gae, MisalignedInputsThrow) {
  EXPECT_THROW(compute_gae({1.0, 2.0}, {0.0}, {false, false}, 0.0, 0.9, 0.9), ContractViolation);
}

TEST(Normalize, ZeroMeanUnitStd) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(3.0, 7.0);
  std::vector<double> v(1000);
  for (auto& x : v) x = n(rng);
  normalize(v);
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 1000.0;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  EXPECT_LT(std::abs(mean), 1e-6);
  EXPECT_NEAR(std::sqrt(var / 1000.0), 1.0, 1e-6);
}

TEST(ClippedSurrogate, HandValues) {
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.0, 3.7, 0.2), 3.7);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.0, -2.0, 0.2), -2.0);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
  // Clip is pessimistic only: improving ratios are capped, worsening ones are not.
  EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, 1.0, 0.2), 0.5);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, -1.0, 0.2), -1.5);
  EXPECT_THROW(clipped_surrogate(1.0, 1.0, 0.0), ContractViolation);
}

TEST(ClippedSurrogate, HugeEpsIsUnclipped) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> r(0.0, 3.0), a(-5.0, 5.0);
  for (int k = 0; k < 1000; ++k) {
    const double ratio = r(rng), adv = a(rng);
    EXPECT_DOUBLE_EQ(clipped_surrogate(ratio, adv, 1e9), ratio * adv);
  }
}

TEST(ClippedSurrogate, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> r(0.3, 1.7), a(-2.0, 2.0);
  for (int k = 0; k < 500; ++k) {
    const double ratio = r(rng), adv = a(rng), h = 1e-7;
    if (std::abs(std::abs(ratio - 1.0) - 0.2) < 1e-5) continue;
    const double fd = (clipped_surrogate(ratio + h, adv, 0.2) - clipped_surrogate(ratio - h, adv, 0.2)) / (2 * h);
    EXPECT_NEAR(clipped_surrogate_grad(ratio, adv, 0.2), fd, 1e-6);
  }
}

TEST(PerAgentLogProb, FactorizesOverSlices) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    nn::GaussianHead<double> head{Vd(6), Vd(6)};
    Vd a(6);
    for (int i = 0; i < 6; ++i) {
      head.mean[i] = n(rng);
      head.log_std[i] = 0.5 * n(rng);
      a[i] = n(rng);
    }
    const double left = per_agent_log_prob(head, a, {0, 3, 0});
    const double right = per_agent_log_prob(head, a, {3, 3, 1});
    EXPECT_NEAR(left + right, nn::gaussian_log_prob(head, a), 1e-12);
    double naive = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double s = std::exp(head.log_std[i]);
      naive += std::log(std::exp(-0.5 * std::pow((a[i] - head.mean[i]) / s, 2)) / (s * std::sqrt(2 * M_PI)));
    }
    EXPECT_NEAR(left, naive, 1e-10);
  }
}

TEST(PerAgentLogProb, AtMean) {
  nn::GaussianHead<double> head{Vd(4), Vd(4)};
  head.mean << 0.1, -0.2, 0.3, 0.4;
  head.log_std << -1.0, 0.0, 0.5, -0.3;
  EXPECT_NEAR(per_agent_log_prob(head, head.mean, {2, 2, 1}), -(0.5 - 0.3) - 2 * 0.5 * std::log(2 * M_PI), 1e-12);
  EXPECT_THROW(per_agent_log_prob(head, head.mean, {3, 2, 1}), ContractViolation);
}

TEST(Roster, PaperDimensions) {
  const auto m = presets::paper_dims();
  const auto bi = make_roster(m, Mode::Bipedal, Algorithm::Mash);
  ASSERT_EQ(bi.actors.size(), 1u);
  EXPECT_EQ(bi.actors[0].name, "legs");
  EXPECT_EQ(bi.actors[0].in_dim, 64u);
  EXPECT_EQ(bi.actors[0].out_dim, 12u);
  EXPECT_EQ(bi.agent_count(), 2u);
  EXPECT_EQ(bi.heads, 2u);
  EXPECT_EQ(bi.critic_in, 106u);

  const auto arm = make_roster(m, Mode::ArmSwing, Algorithm::Mash);
  ASSERT_EQ(arm.actors.size(), 2u);
  EXPECT_EQ(arm.actors[1].name, "arms");
  EXPECT_EQ(arm.actors[1].in_dim, 52u);
  EXPECT_EQ(arm.actors[1].out_dim, 8u);
  EXPECT_EQ(arm.agent_count(), 4u);
  EXPECT_EQ(arm.heads, 4u);

  const auto single = make_roster(m, Mode::Bipedal, Algorithm::SingleAgent);
  EXPECT_EQ(single.actors[0].in_dim, 64u);
  EXPECT_EQ(single.actors[0].out_dim, 12u);
  EXPECT_EQ(single.heads, 1u);
  const auto single_arm = make_roster(m, Mode::ArmSwing, Algorithm::SingleAgent);
  EXPECT_EQ(single_arm.actors[0].in_dim, 64u + 52u);
  EXPECT_EQ(single_arm.actors[0].out_dim, 12u + 8u);
}

TEST(Roster, PerLimbSharesOneActorPerGroup) {
  const auto m = presets::paper_dims();
  const auto r = make_roster(m, Mode::ArmSwing, Algorithm::Mash, true);
  ASSERT_EQ(r.actors.size(), 2u);
  EXPECT_EQ(r.actors[0].in_dim, 32u);
  EXPECT_EQ(r.actors[0].out_dim, 6u);
  EXPECT_EQ(r.actors[1].in_dim, 26u);
  ASSERT_EQ(r.evaluations.size(), 4u);
  EXPECT_EQ(r.evaluations[0].actor, r.evaluations[1].actor);
  EXPECT_EQ(r.evaluations[1].action_offset, m.joint_offset(r.agents[1].limb_index()));
  EXPECT_EQ(r.heads, 4u);
}

TEST(Roster, UnitsPartitionControlledJoints) {
  for (const auto& m : {presets::planar_walker(), presets::paper_dims()})
    for (Mode mode : {Mode::Bipedal, Mode::ArmSwing})
      for (Algorithm alg : {Algorithm::Mash, Algorithm::SingleAgent})
        for (bool per_limb : {false, true}) {
          const auto r = make_roster(m, mode, alg, per_limb);
          std::vector<int> owned(m.dof_total(), 0);
          for (const auto& ev : r.evaluations)
            for (const auto& u : ev.units)
              for (std::size_t d = u.first; d < u.first + u.count; ++d) ++owned[ev.action_offset + d];
          for (std::size_t j = 0; j < m.dof_total(); ++j) EXPECT_EQ(owned[j], j < r.controlled_dof ? 1 : 0);
        }
}

TEST(Roster, ArmSwingNeedsArms) {
  auto m = presets::planar_walker();
  m.arms.clear();
  EXPECT_THROW(make_roster(m, Mode::ArmSwing, Algorithm::Mash), ConfigError);
  EXPECT_THROW(parse_mode("hopping"), ConfigError);
  EXPECT_THROW(parse_algorithm("sac"), ConfigError);
}

TEST(CriticValues, HeadCountAndZeroCritic) {
  const auto m = presets::planar_walker();
  std::mt19937_64 rng(6);
  for (auto [mode, heads] : {std::pair{Mode::Bipedal, 2u}, std::pair{Mode::ArmSwing, 4u}}) {
    const auto r = make_roster(m, mode, Algorithm::Mash);
    auto pol = make_policy<double>(r, {8}, {8}, rng);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(r.critic_in), 5);
    EXPECT_EQ(critic_values(pol.critic, x, r.heads).rows(), heads);
    EXPECT_THROW(critic_values(pol.critic, x, heads + 1), ContractViolation);
    pol.critic = pol.critic.zeros_like();
    EXPECT_EQ(critic_values(pol.critic, x, r.heads), Eigen::MatrixXd::Zero(heads, 5));
  }
}

TEST(MappoLoss, GradientsMatchFiniteDifferences) {
  const auto m = presets::planar_walker();
  TrainerConfig cfg;
  cfg.entropy_coef = 0.05;
  cfg.value_coef = 0.7;
  expect_gradients_match(make_roster(m, Mode::Bipedal, Algorithm::Mash), cfg, 7);
  expect_gradients_match(make_roster(m, Mode::ArmSwing, Algorithm::Mash), cfg, 8);
  expect_gradients_match(make_roster(m, Mode::ArmSwing, Algorithm::Mash, true), cfg, 9);
  expect_gradients_match(make_roster(m, Mode::ArmSwing, Algorithm::SingleAgent), cfg, 10);
}

TEST(MappoLoss, ZeroAdvantagesLeaveOnlyEntropyOnActors) {
  const auto m = presets::planar_walker();
  const auto r = make_roster(m, Mode::ArmSwing, Algorithm::Mash);
  TrainerConfig cfg;
  std::mt19937_64 rng(11);
  const auto pol = oracle::random_policy(r, rng);
  auto mb = oracle::random_minibatch(pol, r, 9, rng);
  for (auto& a : mb.advantages) std::fill(a.begin(), a.end(), 0.0);
  Policy<double> g;
  mappo_loss(pol, r, mb, cfg, &g);
  for (const auto& a : g.actors) {
    for (const auto& l : a.net.layers) {
      EXPECT_EQ(l.weight.cwiseAbs().maxCoeff(), 0.0);
      EXPECT_EQ(l.bias.cwiseAbs().maxCoeff(), 0.0);
    }
    for (double v : a.log_std) EXPECT_DOUBLE_EQ(v, -cfg.entropy_coef);
  }
}

TEST(MappoLoss, PositiveAdvantageStepRaisesLogProb) {
  const auto m = presets::planar_walker();
  const auto r = make_roster(m, Mode::Bipedal, Algorithm::Mash);
  TrainerConfig cfg;
  cfg.entropy_coef = 0.0;
  cfg.value_coef = 0.0;
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto pol = oracle::random_policy(r, rng);
    auto mb = oracle::random_minibatch(pol, r, 1, rng);
    const Eigen::MatrixXd mean = nn::mlp_forward_batch(pol.actors[0].net, mb.inputs[0]);
    std::size_t flat = 0;
    for (const auto& u : r.evaluations[0].units) mb.old_log_probs[flat++] = detail::slice_log_probs(mean, pol.actors[0].log_std, mb.actions[0], u);
    for (auto& a : mb.advantages) a = {1.0};
    auto joint = [&] {
      const Eigen::MatrixXd mu = nn::mlp_forward_batch(pol.actors[0].net, mb.inputs[0]);
      return detail::slice_log_probs(mu, pol.actors[0].log_std, mb.actions[0], {0, 6, 0})[0];
    };
    const double before = joint();
    Policy<double> g;
    mappo_loss(pol, r, mb, cfg, &g);
    auto p = pol.actors[0].tensors();
    auto gt = g.actors[0].tensors();
    for (std::size_t t = 0; t < p.size(); ++t)
      for (std::size_t i = 0; i < p[t].data.size(); ++i) p[t].data[i] -= 1e-4 * gt[t].data[i];
    EXPECT_GT(joint(), before);
  }
}

TEST(MappoLoss, SingleAgentRosterReducesToPpoBitwise) {
  const auto m = presets::planar_walker();
  auto tr = small_trainer<float>(m, Mode::ArmSwing, Algorithm::SingleAgent, 13);
  tr.iterate();  // moves the policy off its initialization
  const auto& buf = tr.buffer();
  std::vector<std::size_t> idx(buf.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::reverse(idx.begin(), idx.end());
  const auto mb = gather(buf, idx);
  const auto a = mappo_loss(tr.policy(), tr.roster(), mb, tr.config());
  const auto b = ppo_loss(tr.policy().actors[0], tr.policy().critic, mb.inputs[0], mb.actions[0], mb.old_log_probs[0],
                          mb.advantages[0], mb.critic_inputs, mb.returns[0], tr.config());
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.total), std::bit_cast<std::uint64_t>(b.total));
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.policy_loss), std::bit_cast<std::uint64_t>(b.policy_loss));
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.value_loss), std::bit_cast<std::uint64_t>(b.value_loss));
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.entropy), std::bit_cast<std::uint64_t>(b.entropy));
}

TEST(Rollout, BufferShapesAndBipedalArms) {
  const auto m = presets::planar_walker();
  auto cfg = small_config();
  cfg.envs = 1;
  cfg.horizon = 48;
  cfg.minibatches = 1;
  auto tr = small_trainer<float>(m, Mode::Bipedal, Algorithm::Mash, 14, 1, cfg);
  tr.iterate();
  const auto& buf = tr.buffer();
  EXPECT_EQ(buf.size(), 48u);
  EXPECT_EQ(buf.rewards.size(), 48u);
  ASSERT_EQ(buf.actions.size(), 1u);
  EXPECT_EQ(buf.actions[0].rows(), 6);
  EXPECT_EQ(buf.values.rows(), 2);
  EXPECT_EQ(buf.bootstrap.cols(), 1);
  EXPECT_EQ(buf.log_probs.size(), 2u);
  EXPECT_EQ(tr.roster().controlled_dof, 6u);

  auto arm = small_trainer<float>(m, Mode::ArmSwing, Algorithm::Mash, 14, 1, cfg);
  arm.iterate();
  EXPECT_EQ(arm.buffer().values.rows(), 4);
  EXPECT_EQ(arm.buffer().log_probs.size(), 4u);
}

TEST(Rollout, RatiosAreOneBeforeFirstStep) {
  const auto m = presets::planar_walker();
  for (Mode mode : {Mode::Bipedal, Mode::ArmSwing}) {
    auto tr = small_trainer<float>(m, mode, Algorithm::Mash, 15);
    tr.iterate();
    const auto s = tr.iterate();
    EXPECT_LT(s.update.first_ratio_deviation, 1e-6);
    EXPECT_EQ(s.update.minibatches, 4);
  }
}

TEST(Rollout, AdvantagesNormalizedPerHead) {
  const auto m = presets::planar_walker();
  auto tr = small_trainer<float>(m, Mode::ArmSwing, Algorithm::Mash, 16);
  tr.iterate();
  const auto& a = tr.buffer().advantages;
  for (Eigen::Index h = 0; h < a.rows(); ++h) {
    const double mean = a.row(h).mean();
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_NEAR(std::sqrt((a.row(h).array() - mean).square().mean()), 1.0, 1e-6);
  }
}

TEST(Rollout, SharedAdvantageFlag) {
  const auto m = presets::planar_walker();
  auto cfg = small_config();
  cfg.shared_advantage = true;
  auto tr = small_trainer<float>(m, Mode::ArmSwing, Algorithm::Mash, 17, 1, cfg);
  tr.iterate();
  const auto& a = tr.buffer().advantages;
  for (Eigen::Index h = 1; h < a.rows(); ++h) EXPECT_EQ(a.row(h), a.row(0));
}

TEST(Rollout, DeterministicAcrossRunsAndThreads) {
  const auto m = presets::planar_walker();
  auto a = small_trainer<float>(m, Mode::ArmSwing, Algorithm::Mash, 18, 1);
  auto b = small_trainer<float>(m, Mode::ArmSwing, Algorithm::Mash, 18, 3);
  for (int k = 0; k < 2; ++k) {
    const auto sa = a.iterate(), sb = b.iterate();
    EXPECT_EQ(sa.rollout.mean_step_reward, sb.rollout.mean_step_reward);
    EXPECT_EQ(sa.update.policy_loss, sb.update.policy_loss);
  }
  EXPECT_EQ(a.buffer().rewards, b.buffer().rewards);
  EXPECT_EQ(a.buffer().actions[1], b.buffer().actions[1]);
  auto pa = a.policy().cast<float>(), pb = b.policy().cast<float>();
  const auto ta = pa.tensors(), tb = pb.tensors();
  for (std::size_t t = 0; t < ta.size(); ++t)
    EXPECT_TRUE(std::equal(ta[t].data.begin(), ta[t].data.end(), tb[t].data.begin())) << ta[t].name;

  auto c = small_trainer<float>(m, Mode::ArmSwing, Algorithm::Mash, 19, 1);
  c.iterate();
  EXPECT_NE(c.buffer().rewards, a.buffer().rewards);
}

TEST(Update, NonFiniteLossNamesMinibatch) {
  const auto m = presets::planar_walker();
  auto tr = small_trainer<float>(m, Mode::Bipedal, Algorithm::Mash, 20);
  tr.iterate();
  tr.policy().critic.layers.back().bias[0] = std::numeric_limits<float>::quiet_NaN();
  auto buf = tr.buffer();
  auto opt = Optimizers<float>::create(tr.policy(), 1e-3);
  try {
    mappo_update(buf, tr.policy(), opt, tr.roster(), tr.config(), tr.rng());
    FAIL() << "expected TrainingDivergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_NE(std::string(e.what()).find("minibatch 0"), std::string::npos) << e.what();
  }
}

TEST(Seeds, StreamsAreDistinctAndStable) {
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
  std::vector<std::uint64_t> s;
  for (std::uint64_t seed : {0ull, 1ull, 2ull})
    for (std::uint64_t stream : {0ull, 1ull, 100ull, 101ull, 1000000ull}) s.push_back(derive_seed(seed, stream));
  std::sort(s.begin(), s.end());
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
}

TEST(ParallelFor, CoversAllAndRethrowsLowestIndex) {
  std::vector<int> hits(37, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 37);
  try {
    parallel_for(10, 3, [](std::size_t i) {
      if (i == 4 || i == 7) throw std::runtime_error(std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "4");
  }
}
