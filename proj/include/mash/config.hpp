#pragma once

// Run configuration and its JSON form.

#include <cstdint>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "mash/domain_rand.hpp"
#include "mash/errors.hpp"
#include "mash/mappo.hpp"
#include "mash/morphology.hpp"
#include "mash/rewards.hpp"
#include "mash/serialize.hpp"

namespace mash {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct EvalConfig {
  int episodes = 10;
  int steps = 240;            // control steps per evaluation episode
  double command_vx = 0.6;    // m/s
  bool randomize = false;     // draw init-time physics from the randomization table
  double phase_target = std::numbers::pi;  // rad, antiphase legs
  double w_h = 1.0;
  double w_theta = 1.0;
  std::size_t smoothing_window = 51;
};

struct RunConfig {
  std::string name = "mash-bipedal";
  rl::Mode mode = rl::Mode::Bipedal;
  rl::Algorithm algorithm = rl::Algorithm::Mash;
  std::string morphology = "planar-walker";
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  rl::TrainerConfig trainer;
  reward::RewardConfig reward;  // torque limits and base height come from the morphology
  dr::RandomizationTable randomization;
  EvalConfig evaluation;

  MorphologyConfig morph() const { return presets::by_name(morphology); }
  rl::AgentRoster roster() const { return rl::make_roster(morph(), mode, algorithm, trainer.per_limb); }

  void validate() const {
    if (name.empty() || name.find('/') != std::string::npos) throw ConfigError("config.name must be a plain directory name");
    morph();
    trainer.validate();
    randomization.validate();
    if (!(reward.sigma_tracking > 0) || !(reward.sigma_yaw > 0)) throw ConfigError("reward sigmas must be positive");
    if (evaluation.episodes < 1 || evaluation.steps < 2) throw ConfigError("evaluation needs >= 1 episode of >= 2 steps");
    if (evaluation.w_h < 0 || evaluation.w_theta < 0) throw ConfigError("stability weights must be >= 0");
    if (evaluation.smoothing_window < 1) throw ConfigError("evaluation.smoothing_window must be >= 1");
  }
};

namespace detail {

inline json range_to_json(const dr::RangeEntry& r) {
  return {{"distribution", r.distribution}, {"low", r.low}, {"high", r.high}};
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
  }
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
  const auto& t = c.trainer;
  json trainer = {{"gamma", t.gamma},
                  {"lambda", t.lambda},
                  {"clip_eps", t.clip_eps},
                  {"learning_rate", t.learning_rate},
                  {"epochs", t.epochs},
                  {"minibatches", t.minibatches},
                  {"entropy_coef", t.entropy_coef},
                  {"value_coef", t.value_coef},
                  {"max_grad_norm", t.max_grad_norm},
                  {"iterations", t.iterations},
                  {"envs", t.envs},
                  {"horizon", t.horizon},
                  {"actor_hidden", t.actor_hidden},
                  {"critic_hidden", t.critic_hidden},
                  {"per_limb", t.per_limb},
                  {"shared_advantage", t.shared_advantage},
                  {"reward_scale", t.reward_scale},
                  {"obs_noise", t.obs_noise},
                  {"command_vx_min", t.commands.vx_min},
                  {"command_vx_max", t.commands.vx_max},
                  {"standing_probability", t.commands.standing_probability},
                  {"checkpoint_every", t.checkpoint_every}};
  json scales = json::object();
  for (std::size_t i = 0; i < reward::kTermCount; ++i) scales[std::string(reward::kTermNames[i])] = c.reward.scales[i];
  json reward = {{"scales", scales},
                 {"sigma_tracking", c.reward.sigma_tracking},
                 {"sigma_yaw", c.reward.sigma_yaw},
                 {"air_time_decay", c.reward.air_time_decay},
                 {"clearance_tolerance", c.reward.clearance_tolerance},
                 {"feet_target_height", c.reward.feet_target_height},
                 {"base_target_height", c.reward.base_target_height},
                 {"literal_orientation", c.reward.literal_orientation}};
  json ranges = json::object();
  for (const auto* e : c.randomization.entries()) ranges[e->name] = detail::range_to_json(*e);
  json rand = {{"enabled", c.randomization.enabled},
               {"ranges", ranges},
               {"push_probability", c.randomization.push_probability},
               {"push_duration", c.randomization.push_duration},
               {"torque_noise_fraction", c.randomization.torque_noise_fraction},
               {"delay_stress", c.randomization.delay_stress}};
  const auto& ev = c.evaluation;
  json eval = {{"episodes", ev.episodes},       {"steps", ev.steps},   {"command_vx", ev.command_vx},
               {"randomize", ev.randomize},     {"phase_target", ev.phase_target},
               {"w_h", ev.w_h},                 {"w_theta", ev.w_theta},
               {"smoothing_window", ev.smoothing_window}};
  return {{"schema_version", kSchemaVersion},
          {"name", c.name},
          {"mode", rl::to_string(c.mode)},
          {"algorithm", rl::to_string(c.algorithm)},
          {"morphology", c.morphology},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"trainer", trainer},
          {"reward", reward},
          {"randomization", rand},
          {"evaluation", eval}};
}

inline RunConfig run_config_from_json(const json& j) {
  using detail::read;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("schema_version")) throw ConfigError("config is missing schema_version");
  if (j.at("schema_version") != kSchemaVersion)
    throw ConfigError("unsupported config schema_version " + j.at("schema_version").dump());
  RunConfig c;
  read(j, "name", c.name);
  if (j.contains("mode")) c.mode = rl::parse_mode(j.at("mode").get<std::string>());
  if (j.contains("algorithm")) c.algorithm = rl::parse_algorithm(j.at("algorithm").get<std::string>());
  read(j, "morphology", c.morphology);
  read(j, "seed", c.seed);
  read(j, "output_dir", c.output_dir);
  if (j.contains("trainer")) {
    const auto& t = j.at("trainer");
    auto& o = c.trainer;
    read(t, "gamma", o.gamma);
    read(t, "lambda", o.lambda);
    read(t, "clip_eps", o.clip_eps);
    read(t, "learning_rate", o.learning_rate);
    read(t, "epochs", o.epochs);
    read(t, "minibatches", o.minibatches);
    read(t, "entropy_coef", o.entropy_coef);
    read(t, "value_coef", o.value_coef);
    read(t, "max_grad_norm", o.max_grad_norm);
    read(t, "iterations", o.iterations);
    read(t, "envs", o.envs);
    read(t, "horizon", o.horizon);
    read(t, "actor_hidden", o.actor_hidden);
    read(t, "critic_hidden", o.critic_hidden);
    read(t, "per_limb", o.per_limb);
    read(t, "shared_advantage", o.shared_advantage);
    read(t, "reward_scale", o.reward_scale);
    read(t, "obs_noise", o.obs_noise);
    read(t, "command_vx_min", o.commands.vx_min);
    read(t, "command_vx_max", o.commands.vx_max);
    read(t, "standing_probability", o.commands.standing_probability);
    read(t, "checkpoint_every", o.checkpoint_every);
  }
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    if (r.contains("scales")) {
      for (const auto& [key, value] : r.at("scales").items()) {
        std::size_t i = 0;
        try {
          i = reward::RewardBreakdown::index(key);
        } catch (const ContractViolation&) {
          throw ConfigError("unknown reward term '" + key + "'");
        }
        c.reward.scales[i] = value.get<double>();
      }
    }
    read(r, "sigma_tracking", c.reward.sigma_tracking);
    read(r, "sigma_yaw", c.reward.sigma_yaw);
    read(r, "air_time_decay", c.reward.air_time_decay);
    read(r, "clearance_tolerance", c.reward.clearance_tolerance);
    read(r, "feet_target_height", c.reward.feet_target_height);
    read(r, "base_target_height", c.reward.base_target_height);
    read(r, "literal_orientation", c.reward.literal_orientation);
  }
  if (j.contains("randomization")) {
    const auto& r = j.at("randomization");
    read(r, "enabled", c.randomization.enabled);
    if (r.contains("ranges")) {
      const auto& ranges = r.at("ranges");
      for (const auto& [key, value] : ranges.items()) {
        dr::RangeEntry* target = nullptr;
        for (auto* e : c.randomization.entries())
          if (e->name == key) target = e;
        if (!target) throw ConfigError("unknown randomization parameter '" + key + "'");
        read(value, "distribution", target->distribution);
        read(value, "low", target->low);
        read(value, "high", target->high);
      }
    }
    read(r, "push_probability", c.randomization.push_probability);
    read(r, "push_duration", c.randomization.push_duration);
    read(r, "torque_noise_fraction", c.randomization.torque_noise_fraction);
    read(r, "delay_stress", c.randomization.delay_stress);
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    auto& o = c.evaluation;
    read(e, "episodes", o.episodes);
    read(e, "steps", o.steps);
    read(e, "command_vx", o.command_vx);
    read(e, "randomize", o.randomize);
    read(e, "phase_target", o.phase_target);
    read(e, "w_h", o.w_h);
    read(e, "w_theta", o.w_theta);
    read(e, "smoothing_window", o.smoothing_window);
  }
  c.validate();
  return c;
}

// Fingerprint of the canonical (sorted-key, compact) serialization.
inline std::string config_hash(const RunConfig& c) { return nn::hex64(nn::fnv1a64(to_json(c).dump())); }

// Reward settings for a morphology: torque limits always come from the joints,
// the base height target from the standing height unless set explicitly.
inline reward::RewardConfig resolve_reward(const RunConfig& c, const MorphologyConfig& m) {
  reward::RewardConfig r = c.reward;
  r.torque_limits = m.torque_limits();
  if (!(r.base_target_height > 0)) r.base_target_height = sim::WalkerModel(m).standing_height();
  return r;
}

}  // namespace mash
