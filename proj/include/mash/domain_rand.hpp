#pragma once

// Physical-parameter randomization. Init-time draws fix one environment
// instance's physics for a whole episode; step-time draws perturb actuation and
// inject pushes.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mash/errors.hpp"

namespace mash::dr {

struct RangeEntry {
  std::string name;
  std::string distribution = "uniform";
  double low = 0.0;
  double high = 0.0;

  bool contains(double v) const { return v >= low && v <= high; }
};

struct RandomizationTable {
  RangeEntry friction{"friction", "uniform", 0.1, 1.2};
  RangeEntry link_mass_scale{"link_mass_scale", "uniform", 0.9, 1.13};
  RangeEntry com_offset{"com_offset", "uniform", -0.03, 0.03};          // m
  RangeEntry motor_delay_ms{"motor_delay_ms", "uniform", 0.0, 3.0};     // ms
  RangeEntry push_force{"push_force", "uniform", -20.0, 20.0};          // N
  RangeEntry gravity{"gravity", "uniform", 9.78, 9.83};                 // m/s^2
  RangeEntry joint_damping{"joint_damping", "uniform", 0.0, 0.05};
  RangeEntry joint_friction{"joint_friction", "uniform", 0.0, 0.05};
  RangeEntry joint_armature{"joint_armature", "uniform", 0.005, 0.015};
  RangeEntry kp_scale{"kp_scale", "uniform", 0.95, 1.05};
  RangeEntry kd_scale{"kd_scale", "uniform", 0.95, 1.05};

  bool enabled = true;
  double push_probability = 1.0 / 150.0;  // per control step
  double push_duration = 0.2;             // s
  double torque_noise_fraction = 0.02;    // std as a fraction of the torque limit
  bool delay_stress = false;              // forces at least one control step of delay

  std::vector<RangeEntry*> entries() {
    return {&friction,       &link_mass_scale, &com_offset,     &motor_delay_ms, &push_force, &gravity,
            &joint_damping,  &joint_friction,  &joint_armature, &kp_scale,       &kd_scale};
  }
  std::vector<const RangeEntry*> entries() const {
    return {&friction,       &link_mass_scale, &com_offset,     &motor_delay_ms, &push_force, &gravity,
            &joint_damping,  &joint_friction,  &joint_armature, &kp_scale,       &kd_scale};
  }

  void validate() const {
    for (const auto* e : entries()) {
      if (!(e->low <= e->high)) throw ConfigError("randomization range " + e->name + " has low > high");
      if (e->distribution != "uniform") throw ConfigError("randomization " + e->name + ": only uniform is supported");
    }
    if (push_probability < 0 || push_probability > 1) throw ConfigError("push_probability outside [0, 1]");
    if (push_duration < 0) throw ConfigError("push_duration < 0");
    if (torque_noise_fraction < 0) throw ConfigError("torque_noise_fraction < 0");
  }
};

// Concrete physics for one environment instance. Defaults are the nominal,
// unrandomized model.
struct PhysicsOverrides {
  double friction = 0.8;
  double link_mass_scale = 1.0;
  double com_offset = 0.0;
  double gravity = 9.81;
  double joint_damping = 0.0;
  double joint_friction = 0.0;
  double joint_armature = 0.01;
  double kp_scale = 1.0;
  double kd_scale = 1.0;

  bool operator==(const PhysicsOverrides&) const = default;
};

struct StepPerturbation {
  int delay_steps = 0;
  Eigen::VectorXd torque_noise;  // N*m, one entry per joint
  bool push_started = false;
  double push_force = 0.0;       // N, horizontal
  double push_duration = 0.0;    // s
};

template <typename Rng>
double draw_uniform(const RangeEntry& r, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  const double v = r.low + (r.high - r.low) * u;
  return std::min(std::max(v, r.low), r.high);
}

// One uniform draw per init-time parameter, in a fixed order. A disabled table
// yields the nominal overrides (no rng consumption).
template <typename Rng>
PhysicsOverrides sample_init_randomization(const RandomizationTable& table, Rng& rng) {
  PhysicsOverrides o;
  if (!table.enabled) return o;
  o.friction = draw_uniform(table.friction, rng);
  o.link_mass_scale = draw_uniform(table.link_mass_scale, rng);
  o.com_offset = draw_uniform(table.com_offset, rng);
  o.gravity = draw_uniform(table.gravity, rng);
  o.joint_damping = draw_uniform(table.joint_damping, rng);
  o.joint_friction = draw_uniform(table.joint_friction, rng);
  o.joint_armature = draw_uniform(table.joint_armature, rng);
  o.kp_scale = draw_uniform(table.kp_scale, rng);
  o.kd_scale = draw_uniform(table.kd_scale, rng);
  return o;
}

// Whole control steps of delay for a motor delay; sub-step delays round down.
inline int quantize_delay(double delay_ms, double control_dt, bool stress) {
  const int steps = static_cast<int>(std::floor(delay_ms * 1e-3 / control_dt + 1e-9));
  return stress ? std::max(steps, 1) : steps;
}

template <typename Rng>
StepPerturbation sample_step_randomization(const RandomizationTable& table, Rng& rng, double /*t*/,
                                           const Eigen::VectorXd& torque_limits, double control_dt) {
  StepPerturbation p;
  p.torque_noise = Eigen::VectorXd::Zero(torque_limits.size());
  if (!table.enabled) return p;
  p.delay_steps = quantize_delay(draw_uniform(table.motor_delay_ms, rng), control_dt, table.delay_stress);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < torque_limits.size(); ++j)
    p.torque_noise[j] = table.torque_noise_fraction * torque_limits[j] * normal(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < table.push_probability) {
    p.push_started = true;
    p.push_force = draw_uniform(table.push_force, rng);
    p.push_duration = table.push_duration;
  }
  return p;
}

}  // namespace mash::dr
