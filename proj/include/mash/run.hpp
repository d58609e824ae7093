#pragma once

// Run-directory lifecycle behind the walker CLI:
//   <output_dir>/<name>/{config.json, train_log.csv, checkpoints/, eval/}

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mash/checkpoint.hpp"
#include "mash/config.hpp"
#include "mash/evaluate.hpp"
#include "mash/mappo.hpp"
#include "mash/metrics.hpp"
#include "mash/plot.hpp"

namespace mash::run {

namespace fs = std::filesystem;

// Exclusive lock file; a second holder fails until the first releases it.
class RunLock {
 public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw Error("run directory is in use (lock file " + path_.string() + " exists)");
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

inline fs::path run_dir(const RunConfig& c) { return fs::path(c.output_dir) / c.name; }

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline const char* kTrainLogHeader =
    "iteration,mean_episode_reward,mean_step_reward,terminations,policy_loss,value_loss,entropy,clip_fraction,"
    "mean_ratio,first_ratio_deviation,explained_variance,wall_clock_s";

struct TrainOptions {
  bool deterministic = false;  // serial collection, wall clock logged as 0
  int threads = 1;
  std::function<void(const rl::IterationStats&)> on_iteration;
};

struct TrainOutcome {
  fs::path dir;
  fs::path final_checkpoint;
  std::vector<double> reward_curve;  // mean episode reward per iteration
};

inline TrainOutcome train(const RunConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  TrainOutcome out;
  out.dir = run_dir(cfg);
  fs::create_directories(out.dir);
  RunLock lock(out.dir / ".lock");
  fs::create_directories(out.dir / "checkpoints");
  write_text(out.dir / "config.json", to_json(cfg).dump(2) + "\n");

  const auto m = cfg.morph();
  rl::Trainer<float> trainer(m, cfg.roster(), cfg.trainer, resolve_reward(cfg, m), cfg.randomization, cfg.seed,
                             opt.deterministic ? 1 : std::max(1, opt.threads));
  std::ofstream log(out.dir / "train_log.csv", std::ios::trunc);
  if (!log) throw Error("cannot open train_log.csv in " + out.dir.string());
  log << kTrainLogHeader << "\n";
  const auto start = std::chrono::steady_clock::now();
  for (int it = 0; it < cfg.trainer.iterations; ++it) {
    const auto s = trainer.iterate();
    const double wall =
        opt.deterministic ? 0.0 : std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << s.iteration << "," << num(s.rollout.mean_episode_reward) << "," << num(s.rollout.mean_step_reward) << ","
        << s.rollout.terminations << "," << num(s.update.policy_loss) << "," << num(s.update.value_loss) << ","
        << num(s.update.entropy) << "," << num(s.update.clip_fraction) << "," << num(s.update.mean_ratio) << ","
        << num(s.update.first_ratio_deviation) << "," << num(s.update.explained_variance) << "," << num(wall) << "\n";
    log.flush();
    out.reward_curve.push_back(s.rollout.mean_episode_reward);
    if (opt.on_iteration) opt.on_iteration(s);
    if (s.iteration % cfg.trainer.checkpoint_every == 0 && s.iteration != cfg.trainer.iterations) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%06d", s.iteration);
      save_checkpoint(out.dir / "checkpoints" / name, cfg, trainer.policy(), s.iteration, trainer.rng());
    }
  }
  out.final_checkpoint = out.dir / "checkpoints" / "final";
  save_checkpoint(out.final_checkpoint, cfg, trainer.policy(), trainer.iteration(), trainer.rng());
  return out;
}

// T_conv from a run's train_log.csv, if there is one long enough.
inline std::optional<double> convergence_from_log(const fs::path& log, std::size_t window) {
  if (!fs::exists(log)) return std::nullopt;
  try {
    const auto curve = plot::read_csv(log.string()).column("mean_episode_reward");
    return static_cast<double>(metrics::convergence_time(curve, std::min(window, curve.size())));
  } catch (const Error&) {
    return std::nullopt;
  }
}

struct EvalOutcome {
  eval::EvalSummary summary;
  fs::path dir;
};

// Deterministic (mean-action) evaluation of a checkpoint; writes metrics.json
// and one trajectory CSV per episode into `out_dir` (default: the run's eval/).
inline EvalOutcome evaluate_checkpoint(const fs::path& ckpt, int episodes, std::uint64_t seed,
                                       std::optional<fs::path> out_dir = std::nullopt,
                                       const RunConfig* expected = nullptr) {
  auto ck = load_checkpoint(ckpt, expected);
  if (episodes > 0) ck.config.evaluation.episodes = episodes;
  const auto m = ck.config.morph();
  const auto roster = ck.config.roster();
  const fs::path run = ck.dir.parent_path().parent_path();
  EvalOutcome out;
  out.dir = out_dir ? *out_dir : run / "eval";
  fs::create_directories(out.dir);
  auto res = eval::evaluate(ck.config, eval::policy_mean(ck.policy, roster, m), seed);
  res.summary.t_conv = convergence_from_log(run / "train_log.csv", ck.config.evaluation.smoothing_window);
  for (std::size_t i = 0; i < res.traces.size(); ++i) {
    char name[48];
    std::snprintf(name, sizeof name, "trajectory_ep%03zu.csv", i);
    eval::write_trajectory_csv((out.dir / name).string(), res.traces[i], m);
  }
  auto j = res.summary.to_json();
  j["method"] = rl::to_string(ck.config.algorithm);
  j["mode"] = rl::to_string(ck.config.mode);
  j["morphology"] = ck.config.morphology;
  j["checkpoint_iteration"] = ck.iteration;
  j["seed"] = seed;
  write_text(out.dir / "metrics.json", j.dump(2) + "\n");
  out.summary = res.summary;
  return out;
}

// Fields that must agree for two configs to be compared fairly.
inline json protocol_of(const RunConfig& c) {
  auto j = to_json(c);
  const auto& t = j.at("trainer");
  return {{"mode", j.at("mode")},
          {"morphology", j.at("morphology")},
          {"reward", j.at("reward")},
          {"randomization", j.at("randomization")},
          {"evaluation", j.at("evaluation")},
          {"budget", {{"iterations", t.at("iterations")}, {"envs", t.at("envs")}, {"horizon", t.at("horizon")}}}};
}

struct MethodResult {
  std::string label;
  std::vector<eval::EvalSummary> per_seed;
  double t_conv = 0.0, s_action = 0.0, s_torso = 0.0, c_limb = 0.0, displacement = 0.0;
  int aperiodic_episodes = 0;
};

struct CompareOptions {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  TrainOptions train;
};

inline MethodResult run_method(const RunConfig& base, const CompareOptions& opt) {
  MethodResult r;
  r.label = base.name + " (" + rl::to_string(base.algorithm) + ")";
  for (auto seed : opt.seeds) {
    RunConfig c = base;
    c.seed = seed;
    c.name = base.name + "-seed" + std::to_string(seed);
    const auto trained = train(c, opt.train);
    auto ev = evaluate_checkpoint(trained.final_checkpoint, c.evaluation.episodes, seed);
    r.per_seed.push_back(ev.summary);
  }
  const double inv = 1.0 / static_cast<double>(r.per_seed.size());
  for (const auto& s : r.per_seed) {
    r.t_conv += s.t_conv.value_or(static_cast<double>(base.trainer.iterations)) * inv;
    r.s_action += s.s_action * inv;
    r.s_torso += s.s_torso * inv;
    r.c_limb += s.c_limb * inv;
    r.displacement += s.mean_displacement * inv;
    r.aperiodic_episodes += s.aperiodic_episodes;
  }
  return r;
}

// Markdown table with one row per method and one column per metric; the
// better (lower) value in each column is bold.
inline std::string comparison_table(const std::string& mode, const MethodResult& a, const MethodResult& b,
                                    const std::vector<std::uint64_t>& seeds) {
  auto cell = [](double mine, double other, bool sci) {
    char buf[48];
    std::snprintf(buf, sizeof buf, sci ? "%.3e" : "%.3f", mine);
    return mine < other ? "**" + std::string(buf) + "**" : std::string(buf);
  };
  std::ostringstream o;
  o << "| Method | T_Conv (" << mode << ") ↓ | S_action (" << mode << ") ↓ | S_torso (" << mode << ") ↓ | C_limb ("
    << mode << ") ↓ | Displacement (m) |\n";
  o << "|---|---|---|---|---|---|\n";
  for (const auto* m : {&a, &b}) {
    const auto* other = m == &a ? &b : &a;
    char disp[32];
    std::snprintf(disp, sizeof disp, "%.3f", m->displacement);
    o << "| " << m->label << " | " << cell(m->t_conv, other->t_conv, false) << " | "
      << cell(m->s_action, other->s_action, false) << " | " << cell(m->s_torso, other->s_torso, true) << " | "
      << cell(m->c_limb, other->c_limb, false) << " | " << disp << " |\n";
  }
  o << "\nSeeds:";
  for (auto s : seeds) o << " " << s;
  o << ". Means over seeds; lower is better for all four metrics.";
  if (a.aperiodic_episodes + b.aperiodic_episodes > 0)
    o << " Episodes without a periodic gait count C_limb = pi (" << a.aperiodic_episodes << " for the first method, "
      << b.aperiodic_episodes << " for the second).";
  o << "\n";
  return o.str();
}

inline std::string compare(const RunConfig& a, const RunConfig& b, const CompareOptions& opt) {
  if (protocol_of(a) != protocol_of(b))
    throw ConfigError("compare: configs differ in morphology, mode, rewards, randomization, evaluation or budget");
  if (opt.seeds.empty()) throw ConfigError("compare: empty seed list");
  const auto ra = run_method(a, opt);
  const auto rb = run_method(b, opt);
  return comparison_table(rl::to_string(a.mode), ra, rb, opt.seeds);
}

// Reward-curve or joint-trajectory chart from one or more CSVs. Nothing is
// written when any input is unreadable or of an unknown schema.
inline void plot_files(const std::vector<std::string>& inputs, const fs::path& out, std::size_t window = 51) {
  require(!inputs.empty(), "plot: no input files");
  std::vector<plot::Series> series;
  std::string kind;
  for (const auto& path : inputs) {
    const auto t = plot::read_csv(path);
    std::string this_kind;
    if (t.has("iteration") && t.has("mean_episode_reward")) {
      this_kind = "reward";
      const auto label = fs::path(path).parent_path().filename().string();
      series.push_back({label.empty() ? path : label, t.column("iteration"),
                        metrics::smooth(t.column("mean_episode_reward"), window), false});
    } else if (t.has("t") && t.has("hip_left_q") && t.has("hip_left_ref")) {
      this_kind = "trajectory";
      const auto label = fs::path(path).stem().string();
      series.push_back({label + " hip_left", t.column("t"), t.column("hip_left_q"), false});
      series.push_back({label + " hip_left reference", t.column("t"), t.column("hip_left_ref"), true});
      if (t.has("hip_right_q") && t.has("hip_right_ref")) {
        series.push_back({label + " hip_right", t.column("t"), t.column("hip_right_q"), false});
        series.push_back({label + " hip_right reference", t.column("t"), t.column("hip_right_ref"), true});
      }
    } else {
      std::string missing;
      for (const char* c : {"iteration", "mean_episode_reward"})
        if (!t.has(c)) missing += std::string(missing.empty() ? "" : ", ") + c;
      std::string missing_traj;
      for (const char* c : {"t", "hip_left_q", "hip_left_ref"})
        if (!t.has(c)) missing_traj += std::string(missing_traj.empty() ? "" : ", ") + c;
      throw ConfigError(path + ": unrecognized CSV schema; reward logs need [" + missing +
                        "] and trajectories need [" + missing_traj + "]");
    }
    if (!kind.empty() && kind != this_kind) throw ConfigError("plot: cannot mix reward logs and trajectories");
    kind = this_kind;
  }
  const std::string svg = kind == "reward"
                              ? plot::render_svg("Smoothed reward", "iteration", "mean episode reward", series)
                              : plot::render_svg("Hip joint trajectory", "time (s)", "angle (rad)", series);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, svg);
}

}  // namespace mash::run
