#pragma once

// Control-rate wrapper around the walker model: action -> PD targets, delay
// buffer, torque noise, pushes, substepping and the per-step snapshot consumed
// by rewards and observations.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <vector>

#include "mash/domain_rand.hpp"
#include "mash/errors.hpp"
#include "mash/morphology.hpp"
#include "mash/walker.hpp"

namespace mash::sim {

struct EnvOptions {
  double control_dt = 1.0 / 60.0;
  int substeps = 4;
  double reset_noise = 0.05;          // rad, uniform half-width
  double min_height_fraction = 0.6;   // of the standing height
  double max_pitch = 1.0;             // rad
  GroundParams ground;
};

struct FootSnapshot {
  double x = 0.0, z = 0.0, vx = 0.0, vz = 0.0;
  bool contact = false;
  double normal = 0.0;
  bool touchdown = false;
  double touchdown_air_time = 0.0;
  double touchdown_dx = 0.0;
};

struct StepSnapshot {
  double t = 0.0;
  double control_dt = 0.0;
  Eigen::VectorXd q, qd, qd_prev;
  Eigen::VectorXd tau, tau_prev;
  Eigen::VectorXd action, action_prev, action_prev2;  // raw policy outputs
  Eigen::VectorXd q_target;
  double x = 0.0, z = 0.0, pitch = 0.0;
  double vx = 0.0, vz = 0.0, pitch_rate = 0.0;
  std::vector<FootSnapshot> feet;
  std::vector<double> collision_forces;
  CommandVector commands;
  double push_force = 0.0;  // active push, N
  bool terminated = false;
};

class WalkerEnv {
 public:
  explicit WalkerEnv(MorphologyConfig morph, EnvOptions opt = {})
      : morph_(std::move(morph)), opt_(opt), model_(morph_, {}, opt.ground) {
    require(opt_.control_dt > 0 && opt_.substeps > 0, "WalkerEnv: invalid control rate");
  }

  const MorphologyConfig& morphology() const { return morph_; }
  const EnvOptions& options() const { return opt_; }
  const WalkerModel& model() const { return model_; }
  const WalkerState& state() const { return state_; }
  const dr::PhysicsOverrides& overrides() const { return model_.overrides(); }
  double start_x() const { return start_x_; }
  int steps_since_reset() const { return steps_; }

  template <typename Rng>
  const StepSnapshot& reset(const dr::PhysicsOverrides& ov, const CommandVector& commands, Rng& rng) {
    model_ = WalkerModel(morph_, ov, opt_.ground);
    state_ = env_reset(model_, rng, opt_.reset_noise);
    commands_ = commands;
    const auto dof = static_cast<Eigen::Index>(model_.dof());
    action_ = action_prev_ = action_prev2_ = Eigen::VectorXd::Zero(dof);
    qd_prev_ = state_.qd;
    tau_prev_ = state_.tau;
    target_ = morph_.q_default();
    targets_.assign(1, target_);
    start_x_ = state_.x;
    steps_ = 0;
    standing_height_ = model_.standing_height();
    snapshot_ = make_snapshot();
    return snapshot_;
  }

  // Joint targets: q_default + action_scale * action, clipped to the joint limits.
  Eigen::VectorXd targets_for(const Eigen::VectorXd& action) const {
    Eigen::VectorXd t = morph_.q_default() + morph_.action_scale * action;
    return t.cwiseMax(model_.q_min()).cwiseMin(model_.q_max());
  }

  const StepSnapshot& step(const Eigen::VectorXd& action, const dr::StepPerturbation& pert) {
    const auto dof = static_cast<Eigen::Index>(model_.dof());
    require(action.size() == dof, "env_step: action width " + std::to_string(action.size()) + " != DoF_total " +
                                      std::to_string(dof));
    if (steps_ == 0) {
      action_prev_ = action_prev2_ = action;
    } else if (steps_ == 1) {
      action_prev2_ = action_;
      action_prev_ = action_;
    } else {
      action_prev2_ = action_prev_;
      action_prev_ = action_;
    }
    action_ = action;
    const Eigen::VectorXd qd_before = state_.qd;

    target_ = targets_for(action);
    targets_.push_front(target_);
    while (targets_.size() > kMaxDelay + 1) targets_.pop_back();
    const auto delay = static_cast<std::size_t>(std::max(0, pert.delay_steps));
    const Eigen::VectorXd applied = targets_[std::min(delay, targets_.size() - 1)];

    if (pert.push_started && state_.push_remaining <= 0.0)
      state_ = apply_push(std::move(state_), pert.push_force, pert.push_duration);

    for (auto& f : state_.feet) f.touchdown = false;
    const double dt = opt_.control_dt / opt_.substeps;
    const bool noisy = pert.torque_noise.size() == dof;
    const Eigen::VectorXd tau_before = state_.tau;
    for (int k = 0; k < opt_.substeps; ++k) {
      Eigen::VectorXd tau = pd_torque(state_.q, state_.qd, applied, model_.kp(), model_.kd(), model_.torque_limits());
      if (noisy) {
        tau += pert.torque_noise;
        tau = tau.cwiseMax(-model_.torque_limits()).cwiseMin(model_.torque_limits());
      }
      model_.integrate(state_, tau, dt);
    }
    if (steps_ == 0) {
      qd_prev_ = state_.qd;
      tau_prev_ = state_.tau;
    } else {
      qd_prev_ = qd_before;
      tau_prev_ = tau_before;
    }
    ++steps_;
    snapshot_ = make_snapshot();
    return snapshot_;
  }

  const StepSnapshot& snapshot() const { return snapshot_; }

 private:
  static constexpr std::size_t kMaxDelay = 8;

  StepSnapshot make_snapshot() const {
    StepSnapshot s;
    s.t = state_.t;
    s.control_dt = opt_.control_dt;
    s.q = state_.q;
    s.qd = state_.qd;
    s.qd_prev = qd_prev_;
    s.tau = state_.tau;
    s.tau_prev = tau_prev_;
    s.action = action_;
    s.action_prev = action_prev_;
    s.action_prev2 = action_prev2_;
    s.q_target = target_;
    s.x = state_.x;
    s.z = state_.z;
    s.pitch = state_.pitch;
    s.vx = state_.vx;
    s.vz = state_.vz;
    s.pitch_rate = state_.pitch_rate;
    const auto kin = model_.kinematics(state_);
    const Eigen::VectorXd gv = model_.velocities(state_);
    for (std::size_t f = 0; f < model_.feet().size(); ++f) {
      const auto pk = model_.point(kin, model_.feet()[f], gv);
      const auto& fs = state_.feet[f];
      s.feet.push_back({pk.p.x(), pk.p.y(), pk.v.x(), pk.v.y(), fs.contact, fs.normal, fs.touchdown,
                        fs.touchdown_air_time, fs.touchdown_dx});
    }
    s.collision_forces = state_.collision_forces;
    s.commands = commands_;
    s.push_force = state_.push_remaining > 0.0 ? state_.push_force : 0.0;
    s.terminated = state_.z < opt_.min_height_fraction * standing_height_ || std::abs(state_.pitch) > opt_.max_pitch;
    return s;
  }

  MorphologyConfig morph_;
  EnvOptions opt_;
  WalkerModel model_;
  WalkerState state_;
  CommandVector commands_;
  Eigen::VectorXd action_, action_prev_, action_prev2_, qd_prev_, tau_prev_, target_;
  std::deque<Eigen::VectorXd> targets_;
  StepSnapshot snapshot_;
  double start_x_ = 0.0;
  double standing_height_ = 1.0;
  int steps_ = 0;
};

}  // namespace mash::sim
