#pragma once

// Shared team reward: sixteen shaped terms evaluated on a step snapshot and
// combined with fixed scales.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "mash/env.hpp"
#include "mash/errors.hpp"
#include "mash/morphology.hpp"
#include "mash/observation.hpp"

namespace mash::reward {

enum Term : std::size_t {
  JointPosition,
  TrackingLinVel,
  TrackingAngVel,
  DofTorques,
  DofVelocity,
  DofAcceleration,
  FeetAirTime,
  FeetClearance,
  FeetContactNumber,
  Orientation,
  Collision,
  FeetSlip,
  BaseHeight,
  ActionSmoothness1,
  ActionSmoothness2,
  TorqueRate,
  kTermCount
};

inline constexpr std::array<std::string_view, kTermCount> kTermNames = {
    "joint_position",  "tracking_lin_vel",    "tracking_ang_vel", "dof_torques",
    "dof_velocity",    "dof_acceleration",    "feet_air_time",    "feet_clearance",
    "feet_contact_number", "orientation",     "collision",        "feet_slip",
    "base_height",     "action_smoothness_1", "action_smoothness_2", "torque_rate"};

inline constexpr std::array<double, kTermCount> kDefaultScales = {
    3.5, 1.5, 1.4, -2.0e-3, -5e-4, -1.0e-7, 2.0, 2.0, 1.2, 1.0, -1.0, -5e-2, 0.2, -0.1, -0.1, -2e-4};

struct RewardConfig {
  std::array<double, kTermCount> scales = kDefaultScales;
  double sigma_tracking = 0.25;  // m^2/s^2
  double sigma_yaw = 0.25;       // rad^2/s^2
  double air_time_decay = 5.0;   // 1/m
  double clearance_tolerance = 0.01;  // m
  double feet_target_height = 0.06;   // m
  double base_target_height = 0.0;   // m, filled from the morphology's standing height
  Eigen::VectorXd torque_limits;     // N*m
  bool literal_orientation = false;  // exp(+|pitch|) + exp(+|g_proj|) as printed

  void validate() const {
    if (!(sigma_tracking > 0) || !(sigma_yaw > 0)) throw ConfigError("reward sigmas must be positive");
    for (Eigen::Index j = 0; j < torque_limits.size(); ++j)
      if (!(torque_limits[j] > 0)) throw ConfigError("reward torque limits must be positive");
  }
};

struct ReferenceSignals {
  Eigen::VectorXd q_default;
  Eigen::VectorXd q_ref;
  std::vector<bool> stance;  // per leg
};

struct RewardBreakdown {
  std::array<double, kTermCount> unscaled{};
  std::array<double, kTermCount> scaled{};
  double total = 0.0;

  double unscaled_of(std::string_view name) const { return unscaled[index(name)]; }
  double scaled_of(std::string_view name) const { return scaled[index(name)]; }
  static std::size_t index(std::string_view name) {
    for (std::size_t i = 0; i < kTermCount; ++i)
      if (kTermNames[i] == name) return i;
    throw ContractViolation("unknown reward term " + std::string(name));
  }
};

// Gait reference offsets from the default posture: zero while standing,
// otherwise amplitude_j * T_limb(t).
inline Eigen::VectorXd reference_joint_positions(double t, const sim::CommandVector& commands,
                                                 const MorphologyConfig& m) {
  Eigen::VectorXd ref = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.dof_total()));
  if (commands.is_standing()) return ref;
  Eigen::Index k = 0;
  for (const auto* l : m.limbs()) {
    const double director = obs::temporal_director(t, m.gait_frequency, l->phase_offset);
    for (const auto& j : l->joints) ref[k++] = j.ref_amplitude * director;
  }
  return ref;
}

inline ReferenceSignals reference_signals(const sim::StepSnapshot& snap, const MorphologyConfig& m) {
  return {m.q_default(), reference_joint_positions(snap.t, snap.commands, m),
          obs::stance_mask(snap.t, m.gait_frequency, obs::leg_phase_offsets(m), snap.commands.is_standing())};
}

namespace detail {

inline void need(bool ok, Term term, const char* what) {
  if (!ok) throw ContractViolation(std::string(kTermNames[term]) + ": " + what);
}

}  // namespace detail

inline RewardBreakdown compute_reward_terms(const sim::StepSnapshot& s, const ReferenceSignals& refs,
                                            const RewardConfig& cfg) {
  using detail::need;
  RewardBreakdown b;
  auto& u = b.unscaled;
  const auto n = s.q.size();

  need(n > 0 && refs.q_default.size() == n && refs.q_ref.size() == n, JointPosition, "q, q_default or q_ref missing");
  u[JointPosition] = std::exp(-(s.q - refs.q_default - refs.q_ref).norm());

  const double dvx = s.commands.vx - s.vx;
  const double dvy = s.commands.vy - 0.0;
  u[TrackingLinVel] = std::exp(-(dvx * dvx + dvy * dvy) / cfg.sigma_tracking);
  const double dyaw = s.commands.yaw_rate - 0.0;
  u[TrackingAngVel] = std::exp(-(dyaw * dyaw) / cfg.sigma_yaw);

  need(s.tau.size() == n && cfg.torque_limits.size() == n, DofTorques, "torques or torque limits missing");
  u[DofTorques] = (s.tau.array() / cfg.torque_limits.array()).square().sum();

  need(s.qd.size() == n, DofVelocity, "joint velocities missing");
  u[DofVelocity] = s.qd.squaredNorm();

  need(s.qd_prev.size() == n && s.control_dt > 0, DofAcceleration, "previous joint velocities missing");
  u[DofAcceleration] = ((s.qd - s.qd_prev) / s.control_dt).squaredNorm();

  need(!s.feet.empty(), FeetAirTime, "foot states missing");
  double air = 0.0, clearance = 0.0, contact_number = 0.0, slip = 0.0;
  need(refs.stance.size() == s.feet.size(), FeetContactNumber, "stance mask missing");
  for (std::size_t f = 0; f < s.feet.size(); ++f) {
    const auto& foot = s.feet[f];
    if (foot.touchdown) air += foot.touchdown_air_time * std::exp(-cfg.air_time_decay * std::abs(foot.touchdown_dx));
    if (std::abs(foot.z - cfg.feet_target_height) < cfg.clearance_tolerance) clearance += 1.0;
    contact_number += foot.contact == refs.stance[f] ? 1.0 : -0.3;
    if (foot.contact) slip += foot.vx * foot.vx;
  }
  u[FeetAirTime] = air;
  u[FeetClearance] = clearance;
  u[FeetContactNumber] = contact_number;
  u[FeetSlip] = slip;

  // Planar torso: roll is zero and the gravity direction projected onto the
  // torso's horizontal plane has norm |sin(pitch)|.
  const double tilt = std::abs(s.pitch);
  const double g_proj = std::abs(std::sin(s.pitch));
  u[Orientation] = cfg.literal_orientation ? std::exp(tilt) + std::exp(g_proj) : std::exp(-tilt) + std::exp(-g_proj);

  double collisions = 0.0;
  for (double f : s.collision_forces) collisions += f > 0.1 ? 1.0 : 0.0;
  u[Collision] = collisions;

  u[BaseHeight] = std::exp(-std::abs(s.z - cfg.base_target_height));

  need(s.action.size() == n && s.action_prev.size() == n, ActionSmoothness1, "action history missing");
  u[ActionSmoothness1] = (s.action - s.action_prev).squaredNorm();
  need(s.action_prev2.size() == n, ActionSmoothness2, "second action history missing");
  u[ActionSmoothness2] = (s.action - 2.0 * s.action_prev + s.action_prev2).squaredNorm();

  need(s.tau_prev.size() == n, TorqueRate, "previous torques missing");
  u[TorqueRate] = ((s.tau - s.tau_prev).array() / (cfg.torque_limits.array() * s.control_dt)).square().sum();

  for (std::size_t i = 0; i < kTermCount; ++i) {
    b.scaled[i] = cfg.scales[i] * u[i];
    b.total += b.scaled[i];
  }
  return b;
}

inline RewardConfig default_reward_config(const MorphologyConfig& m, double standing_height) {
  RewardConfig c;
  c.torque_limits = m.torque_limits();
  c.base_target_height = standing_height;
  return c;
}

}  // namespace mash::reward
