#pragma once

// Planar articulated walker: floating torso (x, z, pitch) with limb chains of
// lumped-mass links, PD actuation, penalty ground contact and pushes.
//
// Generalized coordinates are [x, z, pitch, q...]. Each link is a point mass at
// its midpoint plus a rod inertia about that point; the equations of motion
// M(q) qdd = Q(q, qd) are the exact Lagrangian dynamics of that model.
// Integration is semi-implicit Euler. Contact damping and viscous friction are
// treated implicitly in velocity so stiff contacts stay stable at 240 Hz.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mash/domain_rand.hpp"
#include "mash/errors.hpp"
#include "mash/morphology.hpp"

namespace mash::sim {

using Vec2 = Eigen::Vector2d;

struct GroundParams {
  double k_n = 2.0e4;  // N/m
  double c_n = 200.0;  // N*s/m
  double k_t = 500.0;  // N*s/m
};

inline constexpr double kContactThreshold = 0.1;  // N

struct ContactForce {
  double normal = 0.0;
  double tangent = 0.0;
  bool in_contact = false;
};

// Penalty contact against the plane z = 0.
inline ContactForce contact_forces(const Vec2& pos, const Vec2& vel, const GroundParams& g, double mu) {
  ContactForce f;
  const double penetration = std::max(0.0, -pos.y());
  if (penetration <= 0.0) return f;
  f.normal = std::max(0.0, g.k_n * penetration - g.c_n * vel.y());
  const double limit = mu * f.normal;
  f.tangent = -std::clamp(g.k_t * vel.x(), -limit, limit);
  f.in_contact = f.normal > kContactThreshold;
  return f;
}

// tau_j = clamp(kp_j (target_j - q_j) - kd_j qd_j, +-tau_max_j)
inline Eigen::VectorXd pd_torque(const Eigen::VectorXd& q, const Eigen::VectorXd& qd, const Eigen::VectorXd& target,
                                 const Eigen::VectorXd& kp, const Eigen::VectorXd& kd,
                                 const Eigen::VectorXd& tau_max) {
  require(q.size() == qd.size() && q.size() == target.size() && q.size() == kp.size() && q.size() == kd.size() &&
              q.size() == tau_max.size(),
          "pd_torque: length mismatch");
  Eigen::VectorXd tau(q.size());
  for (Eigen::Index j = 0; j < q.size(); ++j)
    tau[j] = std::clamp(kp[j] * (target[j] - q[j]) - kd[j] * qd[j], -tau_max[j], tau_max[j]);
  return tau;
}

struct CommandVector {
  double standing = 0.0;  // 0 or 1
  double vx = 0.0;        // m/s
  double vy = 0.0;        // m/s, always 0 in the planar model
  double yaw_rate = 0.0;  // rad/s, always 0 in the planar model

  bool is_standing() const { return standing > 0.5; }
  std::array<double, 4> as_array() const { return {standing, vx, vy, yaw_rate}; }
  bool operator==(const CommandVector&) const = default;
};

struct FootState {
  bool contact = false;
  double normal = 0.0;
  double tangent = 0.0;
  double air_time = 0.0;   // s since liftoff, 0 while in contact
  double liftoff_x = 0.0;  // m
  // Latched on touchdown, cleared by the environment each control step.
  bool touchdown = false;
  double touchdown_air_time = 0.0;
  double touchdown_dx = 0.0;
};

struct WalkerState {
  double x = 0.0, z = 0.0, pitch = 0.0;
  double vx = 0.0, vz = 0.0, pitch_rate = 0.0;
  Eigen::VectorXd q, qd, tau;
  std::vector<FootState> feet;
  std::vector<double> collision_forces;  // |f| per non-foot contact point
  double t = 0.0;
  std::int64_t substeps = 0;
  double push_force = 0.0;      // N, active horizontal push at the torso COM
  double push_remaining = 0.0;  // s
};

struct ModelOptions {
  bool fixed_base = false;  // pin the torso (pendulum tests)
  bool ground = true;
};

// A point rigidly attached to the torso or to a link.
struct BodyPoint {
  int limb = -1;        // -1 for the torso
  int link = 0;
  double along = 0.0;   // m from the link's proximal joint
  Vec2 local{0.0, 0.0}; // torso-frame offset when limb == -1
  std::string name;
};

struct PointKinematics {
  Vec2 p, v, bias;  // position, velocity, velocity-product acceleration (Jdot * qd)
  Eigen::Matrix<double, 2, Eigen::Dynamic> jac;
};

inline Vec2 rotate(double angle, const Vec2& v) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}
inline Vec2 perp(const Vec2& v) { return {-v.y(), v.x()}; }
inline Vec2 link_dir(double angle) { return {std::sin(angle), -std::cos(angle)}; }

class WalkerModel {
 public:
  explicit WalkerModel(MorphologyConfig morph, dr::PhysicsOverrides ov = {}, GroundParams ground = {},
                       ModelOptions opt = {})
      : morph_(std::move(morph)), ov_(ov), ground_(ground), opt_(opt) {
    morph_.validate();
    const auto limbs = morph_.limbs();
    for (std::size_t i = 0; i < limbs.size(); ++i) limb_offset_.push_back(morph_.joint_offset(i));
    dof_ = morph_.dof_total();
    kp_ = morph_.kp() * ov_.kp_scale;
    kd_ = morph_.kd() * ov_.kd_scale;
    tau_max_ = morph_.torque_limits();
    q_min_ = morph_.q_min();
    q_max_ = morph_.q_max();
    for (std::size_t i = 0; i < morph_.legs.size(); ++i) {
      const auto& leg = morph_.legs[i];
      feet_.push_back({static_cast<int>(i), static_cast<int>(leg.dof()) - 1, leg.joints.back().link_length,
                       {0, 0}, leg.name + "_foot"});
    }
    collision_.push_back({-1, 0, 0.0, {0.0, morph_.torso_top}, "torso_top"});
    collision_.push_back({-1, 0, 0.0, {morph_.legs[0].mount_x, morph_.legs[0].mount_z}, "torso_bottom"});
    for (std::size_t i = 0; i < limbs.size(); ++i) {
      const auto* l = limbs[i];
      const std::size_t last = l->group == LimbGroup::Legs ? l->dof() - 1 : l->dof();
      for (std::size_t s = 0; s < last; ++s)
        if (l->joints[s].link_length > 0)
          collision_.push_back({static_cast<int>(i), static_cast<int>(s), l->joints[s].link_length, {0, 0},
                                l->name + "_" + l->joints[s].name + "_end"});
    }
  }

  const MorphologyConfig& morphology() const { return morph_; }
  const dr::PhysicsOverrides& overrides() const { return ov_; }
  const GroundParams& ground() const { return ground_; }
  const ModelOptions& options() const { return opt_; }
  std::size_t dof() const { return dof_; }
  std::size_t generalized_dim() const { return dof_ + 3; }
  const Eigen::VectorXd& kp() const { return kp_; }
  const Eigen::VectorXd& kd() const { return kd_; }
  const Eigen::VectorXd& torque_limits() const { return tau_max_; }
  const Eigen::VectorXd& q_min() const { return q_min_; }
  const Eigen::VectorXd& q_max() const { return q_max_; }
  const std::vector<BodyPoint>& feet() const { return feet_; }
  const std::vector<BodyPoint>& collision_points() const { return collision_; }

  double total_mass() const { return morph_.total_mass() * ov_.link_mass_scale; }

  Eigen::VectorXd positions(const WalkerState& s) const {
    Eigen::VectorXd g(generalized_dim());
    g << s.x, s.z, s.pitch, s.q;
    return g;
  }
  Eigen::VectorXd velocities(const WalkerState& s) const {
    Eigen::VectorXd g(generalized_dim());
    g << s.vx, s.vz, s.pitch_rate, s.qd;
    return g;
  }

  // Blank state sized for this morphology at default posture, zero height.
  WalkerState blank_state() const {
    WalkerState s;
    s.q = morph_.q_default();
    s.qd = Eigen::VectorXd::Zero(dof_);
    s.tau = Eigen::VectorXd::Zero(dof_);
    s.feet.resize(feet_.size());
    s.collision_forces.assign(collision_.size(), 0.0);
    return s;
  }

  struct Chain {
    std::vector<Vec2> joints;  // joints[s] = proximal joint of link s; back() = tip
    std::vector<double> angle, rate;
  };
  struct Kinematics {
    Vec2 base;
    double pitch = 0.0, pitch_rate = 0.0;
    std::vector<Chain> chains;
  };

  Kinematics kinematics(const WalkerState& s) const {
    Kinematics k;
    k.base = {s.x, s.z};
    k.pitch = s.pitch;
    k.pitch_rate = s.pitch_rate;
    const auto limbs = morph_.limbs();
    k.chains.resize(limbs.size());
    for (std::size_t i = 0; i < limbs.size(); ++i) {
      const auto* l = limbs[i];
      auto& c = k.chains[i];
      Vec2 p = k.base + rotate(s.pitch, Vec2(l->mount_x, l->mount_z));
      double a = s.pitch, w = s.pitch_rate;
      c.joints.push_back(p);
      for (std::size_t j = 0; j < l->dof(); ++j) {
        const auto idx = static_cast<Eigen::Index>(limb_offset_[i] + j);
        a += s.q[idx];
        w += s.qd[idx];
        p = p + l->joints[j].link_length * link_dir(a);
        c.angle.push_back(a);
        c.rate.push_back(w);
        c.joints.push_back(p);
      }
    }
    return k;
  }

  PointKinematics point(const Kinematics& k, const BodyPoint& bp, const Eigen::VectorXd& gv) const {
    PointKinematics out;
    out.jac = Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, generalized_dim());
    out.jac(0, 0) = 1.0;
    out.jac(1, 1) = 1.0;
    if (bp.limb < 0) {
      const Vec2 r = rotate(k.pitch, bp.local);
      out.p = k.base + r;
      out.jac.col(2) = perp(r);
      out.bias = -k.pitch_rate * k.pitch_rate * r;
    } else {
      const auto& c = k.chains[static_cast<std::size_t>(bp.limb)];
      const auto link = static_cast<std::size_t>(bp.link);
      out.p = c.joints[link] + bp.along * link_dir(c.angle[link]);
      out.jac.col(2) = perp(out.p - k.base);
      const std::size_t off = limb_offset_[static_cast<std::size_t>(bp.limb)];
      for (std::size_t j = 0; j <= link; ++j) out.jac.col(static_cast<Eigen::Index>(3 + off + j)) = perp(out.p - c.joints[j]);
      out.bias = -k.pitch_rate * k.pitch_rate * (c.joints[0] - k.base);
      for (std::size_t j = 0; j < link; ++j) out.bias -= c.rate[j] * c.rate[j] * (c.joints[j + 1] - c.joints[j]);
      out.bias -= c.rate[link] * c.rate[link] * (out.p - c.joints[link]);
    }
    out.v = out.jac * gv;
    return out;
  }

  PointKinematics point(const WalkerState& s, const BodyPoint& bp) const {
    return point(kinematics(s), bp, velocities(s));
  }

  BodyPoint torso_com() const { return {-1, 0, 0.0, {morph_.torso_com_x + ov_.com_offset, 0.0}, "torso_com"}; }

  // Mass matrix and the generalized gravity + velocity-product force.
  void dynamics(const Kinematics& k, const Eigen::VectorXd& gv, Eigen::MatrixXd& mass, Eigen::VectorXd& force,
                double gravity) const {
    const auto n = static_cast<Eigen::Index>(generalized_dim());
    mass.setZero(n, n);
    force.setZero(n);
    const Vec2 g(0.0, -gravity);
    const double scale = ov_.link_mass_scale;
    auto add_point = [&](const BodyPoint& bp, double m) {
      if (m <= 0) return;
      const auto pk = point(k, bp, gv);
      mass.noalias() += m * pk.jac.transpose() * pk.jac;
      force.noalias() += m * pk.jac.transpose() * (g - pk.bias);
    };
    add_point(torso_com(), morph_.torso_mass * scale);
    mass(2, 2) += morph_.torso_inertia * scale;
    const auto limbs = morph_.limbs();
    for (std::size_t i = 0; i < limbs.size(); ++i) {
      const auto* l = limbs[i];
      for (std::size_t s = 0; s < l->dof(); ++s) {
        const auto& js = l->joints[s];
        const double m = js.link_mass * scale;
        add_point({static_cast<int>(i), static_cast<int>(s), 0.5 * js.link_length, {0, 0}, {}}, m);
        const double inertia = m * js.link_length * js.link_length / 12.0;
        if (inertia > 0) {
          // Link angular velocity = pitch rate + sum of joint rates up to s.
          std::vector<Eigen::Index> idx{2};
          for (std::size_t j = 0; j <= s; ++j) idx.push_back(static_cast<Eigen::Index>(3 + limb_offset_[i] + j));
          for (auto a : idx)
            for (auto b : idx) mass(a, b) += inertia;
        }
      }
    }
    for (std::size_t j = 0; j < dof_; ++j) mass(3 + j, 3 + j) += ov_.joint_armature;
  }

  Eigen::MatrixXd mass_matrix(const WalkerState& s) const {
    Eigen::MatrixXd m;
    Eigen::VectorXd f;
    dynamics(kinematics(s), velocities(s), m, f, ov_.gravity);
    return m;
  }

  // Kinetic plus gravitational potential energy (ground contact excluded).
  double energy(const WalkerState& s) const {
    const auto k = kinematics(s);
    const Eigen::VectorXd gv = velocities(s);
    Eigen::MatrixXd m;
    Eigen::VectorXd f;
    dynamics(k, gv, m, f, ov_.gravity);
    double e = 0.5 * gv.dot(m * gv);
    const double scale = ov_.link_mass_scale;
    e += morph_.torso_mass * scale * ov_.gravity * point(k, torso_com(), gv).p.y();
    const auto limbs = morph_.limbs();
    for (std::size_t i = 0; i < limbs.size(); ++i)
      for (std::size_t s2 = 0; s2 < limbs[i]->dof(); ++s2) {
        const auto& js = limbs[i]->joints[s2];
        const BodyPoint bp{static_cast<int>(i), static_cast<int>(s2), 0.5 * js.link_length, {0, 0}, {}};
        e += js.link_mass * scale * ov_.gravity * point(k, bp, gv).p.y();
      }
    return e;
  }

  Vec2 center_of_mass_velocity(const WalkerState& s) const {
    const auto k = kinematics(s);
    const Eigen::VectorXd gv = velocities(s);
    const double scale = ov_.link_mass_scale;
    Vec2 mv = morph_.torso_mass * scale * point(k, torso_com(), gv).v;
    const auto limbs = morph_.limbs();
    for (std::size_t i = 0; i < limbs.size(); ++i)
      for (std::size_t s2 = 0; s2 < limbs[i]->dof(); ++s2) {
        const auto& js = limbs[i]->joints[s2];
        mv += js.link_mass * scale *
              point(k, {static_cast<int>(i), static_cast<int>(s2), 0.5 * js.link_length, {0, 0}, {}}, gv).v;
      }
    return mv / total_mass();
  }

  // Base height with the default posture at zero pitch and both feet resting at
  // the static contact depth of the full body weight.
  double standing_height() const {
    WalkerState s = blank_state();
    const auto k = kinematics(s);
    double lowest = 0.0;
    for (const auto& f : feet_) lowest = std::min(lowest, point(k, f, velocities(s)).p.y());
    const double sink = total_mass() * ov_.gravity / (static_cast<double>(feet_.size()) * ground_.k_n);
    return -lowest - sink;
  }

  // One semi-implicit Euler substep with the given joint torques.
  void integrate(WalkerState& s, const Eigen::VectorXd& torques, double dt) const {
    require(dt > 0, "integrate: dt must be positive");
    require(static_cast<std::size_t>(torques.size()) == dof_, "integrate: torque vector length");
    const auto n = static_cast<Eigen::Index>(generalized_dim());
    const auto k = kinematics(s);
    Eigen::VectorXd gv = velocities(s);
    Eigen::MatrixXd mass;
    Eigen::VectorXd force;
    dynamics(k, gv, mass, force, ov_.gravity);

    for (std::size_t j = 0; j < dof_; ++j) {
      const auto idx = static_cast<Eigen::Index>(j);
      force[3 + idx] += torques[idx] - ov_.joint_damping * s.qd[idx] - ov_.joint_friction * std::tanh(s.qd[idx] / 0.1);
    }
    if (s.push_remaining > 0.0 && s.push_force != 0.0) {
      const auto pk = point(k, torso_com(), gv);
      force.noalias() += pk.jac.transpose() * Vec2(s.push_force, 0.0);
    }

    // Contact set: feet first, then collision points.
    struct Active {
      PointKinematics pk;
      double penetration;
      enum Mode { Stick, Slide, Off } mode = Stick;
      double slide_force = 0.0;
    };
    std::vector<Active> active;
    std::vector<int> active_index;  // into feet_ ++ collision_
    const std::size_t npoints = feet_.size() + collision_.size();
    if (opt_.ground) {
      for (std::size_t c = 0; c < npoints; ++c) {
        const BodyPoint& bp = c < feet_.size() ? feet_[c] : collision_[c - feet_.size()];
        auto pk = point(k, bp, gv);
        if (pk.p.y() < 0.0) {
          const double penetration = -pk.p.y();
          active.push_back({std::move(pk), penetration});
          active_index.push_back(static_cast<int>(c));
        }
      }
    }

    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index i = opt_.fixed_base ? 3 : 0; i < n; ++i) free_idx.push_back(i);
    const auto nf = static_cast<Eigen::Index>(free_idx.size());

    auto solve = [&]() {
      Eigen::MatrixXd a = mass;
      Eigen::VectorXd rhs = mass * gv + dt * force;
      for (const auto& c : active) {
        if (c.mode == Active::Off) continue;
        const auto jx = c.pk.jac.row(0);
        const auto jz = c.pk.jac.row(1);
        rhs.noalias() += dt * ground_.k_n * c.penetration * jz.transpose();
        a.noalias() += dt * ground_.c_n * jz.transpose() * jz;
        if (c.mode == Active::Stick)
          a.noalias() += dt * ground_.k_t * jx.transpose() * jx;
        else
          rhs.noalias() += dt * c.slide_force * jx.transpose();
      }
      Eigen::MatrixXd af(nf, nf);
      Eigen::VectorXd rf(nf);
      for (Eigen::Index r = 0; r < nf; ++r) {
        rf[r] = rhs[free_idx[static_cast<std::size_t>(r)]];
        for (Eigen::Index c = 0; c < nf; ++c)
          af(r, c) = a(free_idx[static_cast<std::size_t>(r)], free_idx[static_cast<std::size_t>(c)]);
      }
      const Eigen::VectorXd vf = af.ldlt().solve(rf);
      Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
      for (Eigen::Index r = 0; r < nf; ++r) out[free_idx[static_cast<std::size_t>(r)]] = vf[r];
      return out;
    };

    Eigen::VectorXd gv_new = solve();
    if (!active.empty()) {
      bool changed = false;
      for (auto& c : active) {
        const Vec2 v = c.pk.jac * gv_new;
        const double normal = ground_.k_n * c.penetration - ground_.c_n * v.y();
        if (normal <= 0.0) {
          c.mode = Active::Off;
          changed = true;
          continue;
        }
        const double limit = ov_.friction * normal;
        if (std::abs(ground_.k_t * v.x()) > limit) {
          c.mode = Active::Slide;
          c.slide_force = v.x() > 0 ? -limit : limit;
          changed = true;
        }
      }
      if (changed) gv_new = solve();
    }

    // Report contact forces at the applied velocities.
    std::vector<ContactForce> reported(npoints);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto& c = active[a];
      reported[static_cast<std::size_t>(active_index[a])] =
          contact_forces(c.pk.p, c.pk.jac * gv_new, ground_, ov_.friction);
    }

    Eigen::VectorXd gq = positions(s) + dt * gv_new;
    s.x = gq[0];
    s.z = gq[1];
    s.pitch = gq[2];
    s.vx = gv_new[0];
    s.vz = gv_new[1];
    s.pitch_rate = gv_new[2];
    s.q = gq.tail(static_cast<Eigen::Index>(dof_));
    s.qd = gv_new.tail(static_cast<Eigen::Index>(dof_));
    for (std::size_t j = 0; j < dof_; ++j) {
      const auto idx = static_cast<Eigen::Index>(j);
      if (s.q[idx] < q_min_[idx]) {
        s.q[idx] = q_min_[idx];
        s.qd[idx] = 0.0;
      } else if (s.q[idx] > q_max_[idx]) {
        s.q[idx] = q_max_[idx];
        s.qd[idx] = 0.0;
      }
    }
    s.tau = torques;
    s.t += dt;
    ++s.substeps;
    if (s.push_remaining > 0.0) {
      s.push_remaining -= dt;
      if (s.push_remaining <= 1e-12) {
        s.push_remaining = 0.0;
        s.push_force = 0.0;
      }
    }

    // Foot bookkeeping at the new configuration.
    const auto k_new = kinematics(s);
    const Eigen::VectorXd gv_s = velocities(s);
    for (std::size_t f = 0; f < feet_.size(); ++f) {
      auto& fs = s.feet[f];
      const auto& cf = reported[f];
      const bool contact = cf.in_contact;
      const double foot_x = point(k_new, feet_[f], gv_s).p.x();
      if (contact) {
        if (!fs.contact) {
          fs.touchdown = true;
          fs.touchdown_air_time = fs.air_time;
          fs.touchdown_dx = foot_x - fs.liftoff_x;
        }
        fs.air_time = 0.0;
      } else {
        if (fs.contact) fs.liftoff_x = foot_x;
        fs.air_time += dt;
      }
      fs.contact = contact;
      fs.normal = cf.normal;
      fs.tangent = cf.tangent;
    }
    for (std::size_t c = 0; c < collision_.size(); ++c) {
      const auto& cf = reported[feet_.size() + c];
      s.collision_forces[c] = std::hypot(cf.normal, cf.tangent);
    }

    if (!gq.allFinite() || !gv_new.allFinite()) throw SimulationBlowUp("non-finite walker state", s.substeps);
  }

 private:
  MorphologyConfig morph_;
  dr::PhysicsOverrides ov_;
  GroundParams ground_;
  ModelOptions opt_;
  std::size_t dof_ = 0;
  std::vector<std::size_t> limb_offset_;
  Eigen::VectorXd kp_, kd_, tau_max_, q_min_, q_max_;
  std::vector<BodyPoint> feet_, collision_;
};

// Starts a horizontal push at the torso COM. A zero force leaves the state as is.
inline WalkerState apply_push(WalkerState s, double force_x, double duration) {
  if (force_x == 0.0 || duration <= 0.0) return s;
  s.push_force = force_x;
  s.push_remaining = duration;
  return s;
}

// Default posture plus uniform joint noise, torso at the standing height.
template <typename Rng>
WalkerState env_reset(const WalkerModel& model, Rng& rng, double joint_noise = 0.05) {
  WalkerState s = model.blank_state();
  s.z = model.standing_height();
  if (!(s.z > 0.0)) throw ConfigError("infeasible morphology: feet above the torso base");
  {
    const auto k = model.kinematics(s);
    const Eigen::VectorXd gv = model.velocities(s);
    double foot_z = 0.0;
    for (const auto& f : model.feet()) foot_z = std::min(foot_z, model.point(k, f, gv).p.y());
    for (const auto& c : model.collision_points())
      if (model.point(k, c, gv).p.y() < foot_z - 1e-9)
        throw ConfigError("infeasible morphology: " + c.name + " is below the feet in the default posture");
  }
  if (joint_noise > 0.0) {
    std::uniform_real_distribution<double> u(-joint_noise, joint_noise);
    for (Eigen::Index j = 0; j < s.q.size(); ++j)
      s.q[j] = std::clamp(s.q[j] + u(rng), model.q_min()[j], model.q_max()[j]);
  }
  // Feet start on the ground.
  const auto k = model.kinematics(s);
  const Eigen::VectorXd gv = model.velocities(s);
  for (std::size_t f = 0; f < model.feet().size(); ++f) {
    const auto pk = model.point(k, model.feet()[f], gv);
    s.feet[f].contact = pk.p.y() <= 0.0;
    s.feet[f].liftoff_x = pk.p.x();
  }
  return s;
}

}  // namespace mash::sim
