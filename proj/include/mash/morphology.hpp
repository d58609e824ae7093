#pragma once

// Limb and joint layout of the planar walker plus the two built-in presets.
//
// Angles are counter-clockwise in the sagittal (x, z) plane. A link at absolute
// angle a points along (sin a, -cos a), so zero means straight down and positive
// swings the link toward +x. Joint angles are relative to the parent link.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mash/errors.hpp"

namespace mash {

enum class LimbGroup { Legs, Arms };
enum class Side { Left, Right };

inline const char* to_string(LimbGroup g) { return g == LimbGroup::Legs ? "legs" : "arms"; }
inline const char* to_string(Side s) { return s == Side::Left ? "left" : "right"; }

struct JointSpec {
  std::string name;
  double link_length = 0.0;  // m, length of the link driven by this joint
  double link_mass = 0.0;    // kg, lumped at the link midpoint
  double q_min = 0.0;        // rad
  double q_max = 0.0;        // rad
  double q_default = 0.0;    // rad, standing posture
  double torque_limit = 0.0; // N*m
  double kp = 0.0;           // N*m/rad
  double kd = 0.0;           // N*m*s/rad
  double ref_amplitude = 0.0;  // rad, gait reference amplitude
};

struct LimbSpec {
  std::string name;
  LimbGroup group = LimbGroup::Legs;
  Side side = Side::Left;
  double mount_x = 0.0;  // m, attachment point in the torso frame
  double mount_z = 0.0;
  double phase_offset = 0.0;  // cycles
  std::vector<JointSpec> joints;

  std::size_t dof() const { return joints.size(); }
};

struct MorphologyConfig {
  std::string preset = "custom";
  std::vector<LimbSpec> legs;  // [left, right]
  std::vector<LimbSpec> arms;  // [] or [left, right]
  double torso_mass = 0.0;     // kg
  double torso_inertia = 0.0;  // kg*m^2
  double torso_com_x = 0.0;    // m, nominal COM position in the torso frame
  double torso_top = 0.0;      // m, head collision point height in the torso frame
  double gait_frequency = 1.5; // 1/s, k in the temporal director
  double action_scale = 0.25;  // rad per unit of policy output

  // Legs first, then arms; this is also the joint ordering of every DoF vector.
  std::vector<const LimbSpec*> limbs() const {
    std::vector<const LimbSpec*> out;
    for (const auto& l : legs) out.push_back(&l);
    for (const auto& l : arms) out.push_back(&l);
    return out;
  }

  std::size_t dof_total() const {
    std::size_t n = 0;
    for (const auto* l : limbs()) n += l->dof();
    return n;
  }

  std::size_t leg_dof() const { return legs.empty() ? 0 : legs.front().dof(); }
  std::size_t arm_dof() const { return arms.empty() ? 0 : arms.front().dof(); }

  // Index of the first joint of limb `limb` (in limbs() order) in DoF vectors.
  std::size_t joint_offset(std::size_t limb) const {
    const auto ls = limbs();
    std::size_t off = 0;
    for (std::size_t i = 0; i < limb; ++i) off += ls[i]->dof();
    return off;
  }

  // Point foot sits at the tip of the last leg link.
  double foot_offset() const { return legs.empty() ? 0.0 : legs.front().joints.back().link_length; }

  double total_mass() const {
    double m = torso_mass;
    for (const auto* l : limbs())
      for (const auto& j : l->joints) m += j.link_mass;
    return m;
  }

  template <typename F>
  Eigen::VectorXd joint_vector(F field) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(dof_total()));
    Eigen::Index k = 0;
    for (const auto* l : limbs())
      for (const auto& j : l->joints) v[k++] = field(j);
    return v;
  }

  Eigen::VectorXd q_default() const { return joint_vector([](const JointSpec& j) { return j.q_default; }); }
  Eigen::VectorXd q_min() const { return joint_vector([](const JointSpec& j) { return j.q_min; }); }
  Eigen::VectorXd q_max() const { return joint_vector([](const JointSpec& j) { return j.q_max; }); }
  Eigen::VectorXd torque_limits() const { return joint_vector([](const JointSpec& j) { return j.torque_limit; }); }
  Eigen::VectorXd kp() const { return joint_vector([](const JointSpec& j) { return j.kp; }); }
  Eigen::VectorXd kd() const { return joint_vector([](const JointSpec& j) { return j.kd; }); }

  std::vector<std::string> joint_names() const {
    std::vector<std::string> names;
    for (const auto* l : limbs())
      for (const auto& j : l->joints) names.push_back(l->name + "_" + j.name);
    return names;
  }

  void validate() const {
    if (legs.size() != 2) throw ConfigError("morphology needs exactly 2 legs");
    if (!(arms.empty() || arms.size() == 2)) throw ConfigError("morphology needs 0 or 2 arms");
    if (legs[0].side != Side::Left || legs[1].side != Side::Right)
      throw ConfigError("legs must be ordered [left, right]");
    if (!arms.empty() && (arms[0].side != Side::Left || arms[1].side != Side::Right))
      throw ConfigError("arms must be ordered [left, right]");
    if (legs[0].dof() != legs[1].dof()) throw ConfigError("legs must have equal DoF");
    if (!arms.empty() && arms[0].dof() != arms[1].dof()) throw ConfigError("arms must have equal DoF");
    if (torso_mass <= 0 || torso_inertia <= 0) throw ConfigError("torso mass and inertia must be positive");
    if (gait_frequency < 0) throw ConfigError("gait frequency must be non-negative");
    for (const auto* l : limbs()) {
      if (l->joints.empty()) throw ConfigError("limb " + l->name + " has no joints");
      for (const auto& j : l->joints) {
        const std::string where = l->name + "_" + j.name;
        if (!(j.torque_limit > 0)) throw ConfigError(where + ": torque limit must be > 0");
        if (j.kp < 0 || j.kd < 0) throw ConfigError(where + ": PD gains must be >= 0");
        if (j.link_length < 0 || j.link_mass < 0) throw ConfigError(where + ": negative link length or mass");
        if (!(j.q_min <= j.q_default && j.q_default <= j.q_max))
          throw ConfigError(where + ": default angle outside limits");
      }
    }
  }
};

namespace presets {

namespace detail {

inline LimbSpec mirror(LimbSpec limb, const std::string& name, Side side, double phase) {
  limb.name = name;
  limb.side = side;
  limb.phase_offset = phase;
  return limb;
}

// Places the torso COM so the whole-body COM sits above the feet in the default
// posture; the point-footed walker then starts in balance.
inline void balance_torso(MorphologyConfig& m) {
  double moment = 0.0;  // sum of m * x for limb links, base at origin, zero pitch
  double foot_x = 0.0;
  for (const auto* l : m.limbs()) {
    double x = l->mount_x, angle = 0.0;
    for (const auto& j : l->joints) {
      angle += j.q_default;
      const double dx = j.link_length * std::sin(angle);
      moment += j.link_mass * (x + 0.5 * dx);
      x += dx;
    }
    if (l->group == LimbGroup::Legs) foot_x = x;
  }
  m.torso_com_x = (m.total_mass() * foot_x - moment) / m.torso_mass;
}

}  // namespace detail

// 3 DoF per leg (hip, knee, ankle), 2 per arm (shoulder, elbow); 30 kg total.
inline MorphologyConfig planar_walker() {
  MorphologyConfig m;
  m.preset = "planar-walker";
  m.torso_mass = 14.0;
  m.torso_inertia = 0.35;
  m.torso_top = 0.3;
  m.gait_frequency = 1.5;
  m.action_scale = 0.25;

  LimbSpec leg;
  leg.group = LimbGroup::Legs;
  leg.mount_x = 0.0;
  leg.mount_z = -0.2;
  //            name     len   mass  qmin  qmax  qdef   tau   kp     kd   amp
  leg.joints = {{"hip", 0.35, 3.0, -1.0, 1.4, 0.15, 80.0, 150.0, 3.0, 0.3},
                {"knee", 0.35, 2.0, -2.0, 0.0, -0.3, 80.0, 150.0, 3.0, -0.4},
                {"ankle", 0.05, 0.5, -0.8, 0.8, 0.15, 30.0, 40.0, 1.0, 0.1}};
  m.legs = {detail::mirror(leg, "leg_l", Side::Left, 0.0), detail::mirror(leg, "leg_r", Side::Right, 0.5)};

  LimbSpec arm;
  arm.group = LimbGroup::Arms;
  arm.mount_x = 0.0;
  arm.mount_z = 0.25;
  arm.joints = {{"shoulder", 0.25, 1.5, -1.5, 1.5, 0.0, 30.0, 40.0, 1.0, 0.3},
                {"elbow", 0.25, 1.0, 0.0, 2.0, 0.3, 15.0, 20.0, 0.5, 0.0}};
  // Arms swing against the same-side leg.
  m.arms = {detail::mirror(arm, "arm_l", Side::Left, 0.5), detail::mirror(arm, "arm_r", Side::Right, 0.0)};
  detail::balance_torso(m);
  return m;
}

// 6 DoF per leg and 4 per arm (DoF_total = 20). Out-of-plane joints become
// zero-length links in the sagittal model.
inline MorphologyConfig paper_dims() {
  MorphologyConfig m;
  m.preset = "paper-dims";
  m.torso_mass = 14.0;
  m.torso_inertia = 0.35;
  m.torso_top = 0.3;
  m.gait_frequency = 1.5;
  m.action_scale = 0.25;

  LimbSpec leg;
  leg.group = LimbGroup::Legs;
  leg.mount_z = -0.2;
  leg.joints = {{"hip_yaw", 0.0, 0.3, -0.5, 0.5, 0.0, 40.0, 60.0, 2.0, 0.0},
                {"hip_roll", 0.0, 0.3, -0.5, 0.5, 0.0, 40.0, 60.0, 2.0, 0.0},
                {"hip_pitch", 0.35, 2.4, -1.0, 1.4, 0.15, 80.0, 150.0, 3.0, 0.3},
                {"knee", 0.35, 2.0, -2.0, 0.0, -0.3, 80.0, 150.0, 3.0, -0.4},
                {"ankle_pitch", 0.0, 0.2, -0.8, 0.8, 0.15, 30.0, 40.0, 1.0, 0.1},
                {"ankle_roll", 0.05, 0.3, -0.5, 0.5, 0.0, 30.0, 40.0, 1.0, 0.0}};
  m.legs = {detail::mirror(leg, "leg_l", Side::Left, 0.0), detail::mirror(leg, "leg_r", Side::Right, 0.5)};

  LimbSpec arm;
  arm.group = LimbGroup::Arms;
  arm.mount_z = 0.25;
  arm.joints = {{"shoulder_pitch", 0.0, 0.3, -1.5, 1.5, 0.0, 30.0, 40.0, 1.0, 0.3},
                {"shoulder_roll", 0.25, 1.2, -0.5, 0.5, 0.0, 30.0, 40.0, 1.0, 0.0},
                {"elbow", 0.25, 0.8, 0.0, 2.0, 0.3, 15.0, 20.0, 0.5, 0.0},
                {"wrist", 0.0, 0.2, -0.5, 0.5, 0.0, 5.0, 10.0, 0.3, 0.0}};
  m.arms = {detail::mirror(arm, "arm_l", Side::Left, 0.5), detail::mirror(arm, "arm_r", Side::Right, 0.0)};
  detail::balance_torso(m);
  return m;
}

inline MorphologyConfig by_name(const std::string& name) {
  if (name == "planar-walker") return planar_walker();
  if (name == "paper-dims") return paper_dims();
  throw ConfigError("unknown morphology preset '" + name + "'");
}

}  // namespace presets
}  // namespace mash
