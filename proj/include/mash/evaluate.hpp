#pragma once

// Fixed-command evaluation episodes, the four locomotion metrics over them and
// the trajectory CSV they are dumped to.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mash/config.hpp"
#include "mash/env.hpp"
#include "mash/mappo.hpp"
#include "mash/metrics.hpp"
#include "mash/rewards.hpp"

namespace mash::eval {

struct EpisodeTrace {
  std::vector<double> t, x, z, pitch;
  std::vector<Eigen::VectorXd> q, target, action;  // target = q_default + q_ref
  std::vector<reward::RewardBreakdown> rewards;
  bool fell = false;
  double displacement = 0.0;  // m, forward travel of the torso base

  std::size_t steps() const { return t.size(); }
};

// Picks the joint action for the env's current snapshot.
using ActionFn = std::function<Eigen::VectorXd(const sim::WalkerEnv&, std::mt19937_64&)>;

struct EpisodeSetup {
  sim::CommandVector commands;
  dr::PhysicsOverrides physics;
  dr::RandomizationTable step_randomization;  // disabled table for clean evaluation
  int steps = 240;
};

inline EpisodeTrace run_episode(sim::WalkerEnv& env, const reward::RewardConfig& rcfg, const EpisodeSetup& setup,
                                const ActionFn& act, std::mt19937_64& rng) {
  const auto& m = env.morphology();
  env.reset(setup.physics, setup.commands, rng);
  EpisodeTrace tr;
  for (int k = 0; k < setup.steps; ++k) {
    const Eigen::VectorXd a = act(env, rng);
    const auto pert = dr::sample_step_randomization(setup.step_randomization, rng, env.state().t, m.torque_limits(),
                                                    env.options().control_dt);
    const auto& snap = env.step(a, pert);
    const auto refs = reward::reference_signals(snap, m);
    tr.t.push_back(snap.t);
    tr.x.push_back(snap.x);
    tr.z.push_back(snap.z);
    tr.pitch.push_back(snap.pitch);
    tr.q.push_back(snap.q);
    tr.target.push_back(refs.q_default + refs.q_ref);
    tr.action.push_back(snap.action);
    tr.rewards.push_back(reward::compute_reward_terms(snap, refs, rcfg));
    if (snap.terminated) {
      tr.fell = true;
      break;
    }
  }
  tr.displacement = env.state().x - env.start_x();
  return tr;
}

template <typename Scalar>
ActionFn policy_mean(const rl::Policy<Scalar>& pol, const rl::AgentRoster& roster, const MorphologyConfig& m) {
  return [&pol, &roster, &m](const sim::WalkerEnv& env, std::mt19937_64&) { return rl::mean_action(pol, roster, m, env); };
}

// N(0, 1) on every policy-controlled joint, zero elsewhere.
inline ActionFn random_policy(const rl::AgentRoster& roster, std::size_t dof_total) {
  return [controlled = roster.controlled_dof, dof_total](const sim::WalkerEnv&, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dof_total));
    for (std::size_t j = 0; j < controlled; ++j) a[static_cast<Eigen::Index>(j)] = normal(rng);
    return a;
  };
}

// Index of each leg's hip-pitch-equivalent joint in DoF vectors.
inline std::array<std::size_t, 2> hip_joints(const MorphologyConfig& m) {
  std::array<std::size_t, 2> out{};
  for (std::size_t leg = 0; leg < 2; ++leg) {
    const auto& joints = m.legs[leg].joints;
    std::size_t pick = joints.size();
    for (std::size_t j = 0; j < joints.size() && pick == joints.size(); ++j)
      if (joints[j].name == "hip_pitch" || joints[j].name == "hip") pick = j;
    if (pick == joints.size())
      for (std::size_t j = 0; j < joints.size() && pick == joints.size(); ++j)
        if (joints[j].link_length > 0) pick = j;
    out[leg] = m.joint_offset(leg) + pick;
  }
  return out;
}

struct EpisodeMetrics {
  double s_action = 0.0;
  double s_action_second = 0.0;
  double s_torso = 0.0;
  double c_limb = 0.0;
  bool aperiodic = false;
};

inline EpisodeMetrics episode_metrics(const EpisodeTrace& tr, const MorphologyConfig& m, std::size_t controlled_dof,
                                      const EvalConfig& ec, double dt) {
  EpisodeMetrics em;
  const auto T = static_cast<Eigen::Index>(tr.steps());
  Eigen::MatrixXd actions(T, static_cast<Eigen::Index>(controlled_dof));
  for (Eigen::Index k = 0; k < T; ++k)
    actions.row(k) = tr.action[static_cast<std::size_t>(k)].head(static_cast<Eigen::Index>(controlled_dof)).transpose();
  em.s_action = T >= 2 ? metrics::action_smoothness(actions) : 0.0;
  em.s_action_second = T >= 3 ? metrics::action_smoothness_second(actions) : 0.0;
  em.s_torso = T >= 2 ? metrics::torso_stability(tr.z, tr.pitch, {ec.w_h, ec.w_theta}) : 0.0;
  const auto hips = hip_joints(m);
  std::vector<double> left, right;
  for (const auto& q : tr.q) {
    left.push_back(q[static_cast<Eigen::Index>(hips[0])]);
    right.push_back(q[static_cast<Eigen::Index>(hips[1])]);
  }
  try {
    em.c_limb = metrics::limb_coordination(metrics::extract_phase(left, dt), metrics::extract_phase(right, dt),
                                           ec.phase_target);
  } catch (const AperiodicGait&) {
    em.aperiodic = true;
    em.c_limb = metrics::kPi;
  } catch (const InsufficientData&) {
    em.aperiodic = true;
    em.c_limb = metrics::kPi;
  }
  return em;
}

struct EvalSummary {
  int episodes = 0;
  int falls = 0;
  int aperiodic_episodes = 0;
  double mean_displacement = 0.0;
  double mean_length = 0.0;
  double mean_return = 0.0;
  double s_action = 0.0;
  double s_action_second = 0.0;
  double s_torso = 0.0;
  double c_limb = 0.0;
  std::optional<double> t_conv;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"episodes", episodes},
                        {"falls", falls},
                        {"aperiodic_episodes", aperiodic_episodes},
                        {"aperiodic", aperiodic_episodes > 0},
                        {"mean_displacement", mean_displacement},
                        {"mean_episode_length", mean_length},
                        {"mean_return", mean_return},
                        {"s_action", s_action},
                        {"s_action_second", s_action_second},
                        {"s_torso", s_torso},
                        {"c_limb", c_limb}};
    j["t_conv"] = t_conv ? nlohmann::json(*t_conv) : nlohmann::json(nullptr);
    return j;
  }
};

struct EvalResult {
  EvalSummary summary;
  std::vector<EpisodeTrace> traces;
};

// Runs ec.episodes episodes under the walking command ec.command_vx, with
// nominal physics unless ec.randomize is set.
inline EvalResult evaluate(const RunConfig& cfg, const ActionFn& act, std::uint64_t seed) {
  const auto m = cfg.morph();
  const auto roster = cfg.roster();
  const auto rcfg = resolve_reward(cfg, m);
  const auto& ec = cfg.evaluation;
  sim::WalkerEnv env(m);
  EvalResult res;
  auto& s = res.summary;
  for (int ep = 0; ep < ec.episodes; ++ep) {
    std::mt19937_64 rng(rl::derive_seed(seed, 1000000 + static_cast<std::uint64_t>(ep)));
    EpisodeSetup setup;
    setup.commands = {0.0, ec.command_vx, 0.0, 0.0};
    setup.steps = ec.steps;
    setup.step_randomization = cfg.randomization;
    setup.step_randomization.enabled = ec.randomize;
    if (ec.randomize) setup.physics = dr::sample_init_randomization(cfg.randomization, rng);
    auto tr = run_episode(env, rcfg, setup, act, rng);
    const auto em = episode_metrics(tr, m, roster.controlled_dof, ec, env.options().control_dt);
    ++s.episodes;
    s.falls += tr.fell ? 1 : 0;
    s.aperiodic_episodes += em.aperiodic ? 1 : 0;
    s.mean_displacement += tr.displacement;
    s.mean_length += static_cast<double>(tr.steps());
    for (const auto& r : tr.rewards) s.mean_return += r.total;
    s.s_action += em.s_action;
    s.s_action_second += em.s_action_second;
    s.s_torso += em.s_torso;
    s.c_limb += em.c_limb;
    res.traces.push_back(std::move(tr));
  }
  const double inv = 1.0 / static_cast<double>(s.episodes);
  for (double* v : {&s.mean_displacement, &s.mean_length, &s.mean_return, &s.s_action, &s.s_action_second, &s.s_torso,
                    &s.c_limb})
    *v *= inv;
  return res;
}

inline std::vector<std::string> trajectory_columns(const MorphologyConfig& m) {
  std::vector<std::string> cols = {"step", "t", "x", "z", "pitch",
                                   "hip_left_q", "hip_left_ref", "hip_right_q", "hip_right_ref"};
  const auto names = m.joint_names();
  for (const auto& n : names) cols.push_back("q_" + n);
  for (const auto& n : names) cols.push_back("ref_" + n);
  for (const auto& n : names) cols.push_back("action_" + n);
  for (const auto name : reward::kTermNames) cols.push_back("r_" + std::string(name));
  cols.push_back("reward_total");
  return cols;
}

inline void write_trajectory_csv(const std::string& path, const EpisodeTrace& tr, const MorphologyConfig& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  const auto cols = trajectory_columns(m);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  out.precision(9);
  const auto hips = hip_joints(m);
  for (std::size_t k = 0; k < tr.steps(); ++k) {
    out << k << "," << tr.t[k] << "," << tr.x[k] << "," << tr.z[k] << "," << tr.pitch[k];
    for (std::size_t h : hips)
      out << "," << tr.q[k][static_cast<Eigen::Index>(h)] << "," << tr.target[k][static_cast<Eigen::Index>(h)];
    for (const auto* v : {&tr.q[k], &tr.target[k], &tr.action[k]})
      for (Eigen::Index j = 0; j < v->size(); ++j) out << "," << (*v)[j];
    for (double r : tr.rewards[k].scaled) out << "," << r;
    out << "," << tr.rewards[k].total << "\n";
  }
  if (!out) throw Error("short write to " + path);
}

}  // namespace mash::eval
