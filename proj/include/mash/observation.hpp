#pragma once

// Actor and critic observation packing, gait clock and command sampling.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mash/domain_rand.hpp"
#include "mash/env.hpp"
#include "mash/errors.hpp"
#include "mash/morphology.hpp"

namespace mash::obs {

// T_i(t) = sin(2 pi (k t + offset))
inline double temporal_director(double t, double k, double phase_offset) {
  const double d = phase_offset - std::floor(phase_offset);
  // sin(x + pi) = -sin(x), so half-period offsets negate exactly.
  if (d >= 0.5) return -std::sin(2.0 * std::numbers::pi * (k * t + (d - 0.5)));
  return std::sin(2.0 * std::numbers::pi * (k * t + d));
}

// Leg i is in stance while its director is non-positive; standing holds all legs.
inline std::vector<bool> stance_mask(double t, double k, const std::vector<double>& phase_offsets, bool standing) {
  std::vector<bool> mask;
  for (double d : phase_offsets) mask.push_back(standing || temporal_director(t, k, d) <= 0.0);
  return mask;
}

inline std::vector<double> leg_phase_offsets(const MorphologyConfig& m) {
  std::vector<double> out;
  for (const auto& l : m.legs) out.push_back(l.phase_offset);
  return out;
}

struct AgentId {
  LimbGroup group = LimbGroup::Legs;
  Side side = Side::Left;

  std::array<double, 2> one_hot() const {
    return side == Side::Left ? std::array<double, 2>{1.0, 0.0} : std::array<double, 2>{0.0, 1.0};
  }
  // Index of the agent's limb in MorphologyConfig::limbs().
  std::size_t limb_index() const {
    return (group == LimbGroup::Legs ? 0u : 2u) + (side == Side::Left ? 0u : 1u);
  }
  std::string name() const { return std::string(to_string(group)) + "_" + to_string(side); }
  bool operator==(const AgentId&) const = default;
};

struct Field {
  std::string name;
  std::size_t width;
};

struct Layout {
  std::vector<Field> fields;

  std::size_t width() const {
    std::size_t w = 0;
    for (const auto& f : fields) w += f.width;
    return w;
  }
  std::size_t offset(const std::string& name) const {
    std::size_t off = 0;
    for (const auto& f : fields) {
      if (f.name == name) return off;
      off += f.width;
    }
    throw ContractViolation("layout has no field " + name);
  }
  bool operator==(const Layout& o) const {
    if (fields.size() != o.fields.size()) return false;
    for (std::size_t i = 0; i < fields.size(); ++i)
      if (fields[i].name != o.fields[i].name || fields[i].width != o.fields[i].width) return false;
    return true;
  }
};

// Per-agent actor input: width 3 * dof_agent + 14.
inline Layout agent_layout(std::size_t dof_agent) {
  return {{{"q", dof_agent},
           {"qd", dof_agent},
           {"prev_action", dof_agent},
           {"phase", 2},
           {"euler", 3},
           {"ang_vel", 3},
           {"commands", 4},
           {"agent_id", 2}}};
}

// Privileged critic input: width 4 * dof_total + 26.
inline Layout critic_layout(std::size_t dof_total) {
  return {{{"q", dof_total},
           {"qd", dof_total},
           {"prev_action", dof_total},
           {"pos_deviation", dof_total},
           {"phase", 2},
           {"commands", 4},
           {"lin_vel", 3},
           {"euler", 3},
           {"ang_vel", 3},
           {"push_force", 2},
           {"push_torque", 3},
           {"friction", 1},
           {"mass", 1},
           {"stance_mask", 2},
           {"contact_mask", 2}}};
}

inline std::map<std::string, Eigen::VectorXd> unpack(const Layout& layout, const Eigen::VectorXd& v) {
  require(static_cast<std::size_t>(v.size()) == layout.width(), "unpack: vector width does not match layout");
  std::map<std::string, Eigen::VectorXd> out;
  Eigen::Index off = 0;
  for (const auto& f : layout.fields) {
    const auto w = static_cast<Eigen::Index>(f.width);
    out[f.name] = v.segment(off, w);
    off += w;
  }
  return out;
}

namespace detail {

struct Packer {
  Eigen::VectorXd v;
  Eigen::Index pos = 0;
  template <typename Seq>
  void put(const Seq& values) {
    for (double x : values) v[pos++] = x;
  }
  void put(const Eigen::VectorXd& values) {
    v.segment(pos, values.size()) = values;
    pos += values.size();
  }
  void put1(double x) { v[pos++] = x; }
};

}  // namespace detail

// (T_left, T_right) for the agent's limb group.
inline std::array<double, 2> group_phase(const MorphologyConfig& m, LimbGroup g, double t) {
  const auto& limbs = g == LimbGroup::Legs ? m.legs : m.arms;
  require(limbs.size() == 2, "group_phase: group has no limbs");
  return {temporal_director(t, m.gait_frequency, limbs[0].phase_offset),
          temporal_director(t, m.gait_frequency, limbs[1].phase_offset)};
}

struct ObsNoise {
  double std = 0.0;  // additive Gaussian on q, qd, euler and angular velocity
};

template <typename Rng>
Eigen::VectorXd build_agent_obs(const sim::StepSnapshot& snap, const AgentId& agent, const MorphologyConfig& m,
                                const Layout& layout, const ObsNoise& noise, Rng* rng) {
  const auto limbs = m.limbs();
  require(agent.limb_index() < limbs.size(), "build_agent_obs: agent " + agent.name() + " not in morphology");
  const auto dof = limbs[agent.limb_index()]->dof();
  require(layout == agent_layout(dof), "build_agent_obs: layout does not match agent DoF " + std::to_string(dof));
  require(static_cast<std::size_t>(snap.q.size()) == m.dof_total(), "build_agent_obs: snapshot DoF mismatch");
  const auto off = static_cast<Eigen::Index>(m.joint_offset(agent.limb_index()));
  const auto n = static_cast<Eigen::Index>(dof);
  detail::Packer p{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.width()))};
  p.put(Eigen::VectorXd(snap.q.segment(off, n)));
  p.put(Eigen::VectorXd(snap.qd.segment(off, n)));
  p.put(Eigen::VectorXd(snap.action.segment(off, n)));
  p.put(group_phase(m, agent.group, snap.t));
  p.put(std::array<double, 3>{0.0, snap.pitch, 0.0});
  p.put(std::array<double, 3>{0.0, snap.pitch_rate, 0.0});
  p.put(snap.commands.as_array());
  p.put(agent.one_hot());
  if (noise.std > 0.0 && rng) {
    std::normal_distribution<double> normal(0.0, noise.std);
    for (Eigen::Index i = 0; i < 2 * n; ++i) p.v[i] += normal(*rng);
    const auto e = static_cast<Eigen::Index>(layout.offset("euler"));
    for (Eigen::Index i = e; i < e + 6; ++i) p.v[i] += normal(*rng);
  }
  return p.v;
}

inline Eigen::VectorXd build_agent_obs(const sim::StepSnapshot& snap, const AgentId& agent,
                                       const MorphologyConfig& m, const Layout& layout) {
  return build_agent_obs<std::mt19937_64>(snap, agent, m, layout, {}, nullptr);
}

// Left agent first, right agent second.
inline Eigen::VectorXd build_group_input(const Eigen::VectorXd& left, const Eigen::VectorXd& right) {
  require(left.size() == right.size(), "build_group_input: agent observation widths differ");
  Eigen::VectorXd out(left.size() + right.size());
  out << left, right;
  return out;
}

inline Eigen::VectorXd build_critic_obs(const sim::StepSnapshot& snap, const dr::PhysicsOverrides& privileged,
                                        const MorphologyConfig& m, const Layout& layout) {
  require(layout == critic_layout(m.dof_total()), "build_critic_obs: layout does not match DoF_total");
  require(static_cast<std::size_t>(snap.q.size()) == m.dof_total(), "build_critic_obs: snapshot DoF mismatch");
  detail::Packer p{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.width()))};
  p.put(snap.q);
  p.put(snap.qd);
  p.put(snap.action);
  p.put(Eigen::VectorXd(snap.q_target - snap.q));
  p.put(group_phase(m, LimbGroup::Legs, snap.t));
  p.put(snap.commands.as_array());
  p.put(std::array<double, 3>{snap.vx, 0.0, snap.vz});
  p.put(std::array<double, 3>{0.0, snap.pitch, 0.0});
  p.put(std::array<double, 3>{0.0, snap.pitch_rate, 0.0});
  p.put(std::array<double, 2>{snap.push_force, 0.0});
  p.put(std::array<double, 3>{0.0, 0.0, 0.0});
  p.put1(privileged.friction);
  p.put1(privileged.link_mass_scale);
  const auto stance = stance_mask(snap.t, m.gait_frequency, leg_phase_offsets(m), snap.commands.is_standing());
  require(stance.size() == 2 && snap.feet.size() == 2, "build_critic_obs: expected two legs");
  p.put(std::array<double, 2>{stance[0] ? 1.0 : 0.0, stance[1] ? 1.0 : 0.0});
  p.put(std::array<double, 2>{snap.feet[0].contact ? 1.0 : 0.0, snap.feet[1].contact ? 1.0 : 0.0});
  return p.v;
}

struct CommandRanges {
  double vx_min = 0.2;  // m/s
  double vx_max = 1.0;
  double standing_probability = 0.1;
};

template <typename Rng>
sim::CommandVector sample_commands(Rng& rng, const CommandRanges& r) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  sim::CommandVector c;
  const double u = unit(rng);
  const double v = unit(rng);
  if (u < r.standing_probability) {
    c.standing = 1.0;
    return c;
  }
  c.vx = r.vx_min + (r.vx_max - r.vx_min) * v;
  return c;
}

}  // namespace mash::obs
