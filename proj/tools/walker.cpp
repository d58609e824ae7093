// walker: config scaffolding, training, evaluation, comparison and plots.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mash/checkpoint.hpp"
#include "mash/config.hpp"
#include "mash/mappo.hpp"
#include "mash/run.hpp"

namespace fs = std::filesystem;

namespace {

mash::RunConfig load_config(const std::string& path) {
  try {
    return mash::run_config_from_json(mash::json::parse(mash::read_text(path)));
  } catch (const mash::json::exception& e) {
    throw mash::ConfigError(path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent locomotion training for a planar walker"};
  app.require_subcommand(1);

  auto* config = app.add_subcommand("config", "Configuration files");
  config->require_subcommand(1);
  auto* init = config->add_subcommand("init", "Write the default configuration");
  std::string init_path = "walker.json";
  bool force = false;
  std::string init_mode = "bipedal", init_algo = "mash", init_morph = "planar-walker";
  init->add_option("path", init_path, "Output file")->capture_default_str();
  init->add_flag("--force", force, "Overwrite an existing file");
  init->add_option("--mode", init_mode, "bipedal or arm-swing")->capture_default_str();
  init->add_option("--algorithm", init_algo, "mash or single-agent-ppo")->capture_default_str();
  init->add_option("--morphology", init_morph, "planar-walker or paper-dims")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a policy");
  std::string train_config;
  std::optional<std::uint64_t> train_seed;
  bool deterministic = false;
  train->add_option("--config", train_config, "Run configuration")->required();
  train->add_option("--seed", train_seed, "Override the configured seed");
  train->add_flag("--deterministic", deterministic, "Serial collection and zeroed wall clock for byte-identical logs");

  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt;
  int episodes = 0;
  std::uint64_t eval_seed = 0;
  std::string eval_out;
  evalc->add_option("--ckpt", ckpt, "Checkpoint directory or manifest.json")->required();
  evalc->add_option("--episodes", episodes, "Evaluation episodes")->required();
  evalc->add_option("--seed", eval_seed, "Evaluation seed")->capture_default_str();
  evalc->add_option("--out", eval_out, "Output directory (default: <run>/eval)");

  auto* cmp = app.add_subcommand("compare", "Train and evaluate two configurations over several seeds");
  std::string cmp_a, cmp_b, cmp_out;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  cmp->add_option("--a", cmp_a, "First configuration")->required();
  cmp->add_option("--b", cmp_b, "Second configuration")->required();
  cmp->add_option("--seeds", seeds, "Seed list")->delimiter(',')->capture_default_str();
  cmp->add_option("--out", cmp_out, "Also write the Markdown table here");
  cmp->add_flag("--deterministic", deterministic, "Serial collection for reproducible runs");

  auto* plt = app.add_subcommand("plot", "Render a reward log or trajectory CSV as SVG");
  std::vector<std::string> plot_inputs;
  std::string plot_out;
  plt->add_option("--input", plot_inputs, "CSV file (repeatable)")->required();
  plt->add_option("--out", plot_out, "SVG file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const int threads = mash::rl::thread_count_from_env();
    if (*init) {
      if (fs::exists(init_path) && !force)
        throw mash::ConfigError(init_path + " already exists (use --force to overwrite)");
      mash::RunConfig c;
      c.mode = mash::rl::parse_mode(init_mode);
      c.algorithm = mash::rl::parse_algorithm(init_algo);
      c.morphology = init_morph;
      c.name = std::string(c.algorithm == mash::rl::Algorithm::Mash ? "mash" : "ppo") + "-" + init_mode;
      c.validate();
      if (fs::path(init_path).has_parent_path()) fs::create_directories(fs::path(init_path).parent_path());
      mash::write_text(init_path, mash::to_json(c).dump(2) + "\n");
      std::cout << "wrote " << init_path << "\n";
    } else if (*train) {
      auto c = load_config(train_config);
      if (train_seed) c.seed = *train_seed;
      mash::run::TrainOptions opt;
      opt.deterministic = deterministic;
      opt.threads = threads;
      opt.on_iteration = [&](const mash::rl::IterationStats& s) {
        if (s.iteration % 10 == 0 || s.iteration == c.trainer.iterations)
          std::cerr << "iter " << s.iteration << "/" << c.trainer.iterations
                    << " reward " << s.rollout.mean_episode_reward << " falls " << s.rollout.terminations << "\n";
      };
      const auto out = mash::run::train(c, opt);
      std::cout << out.final_checkpoint.string() << "\n";
    } else if (*evalc) {
      if (episodes < 1) throw mash::ConfigError("--episodes must be >= 1");
      std::optional<fs::path> dir;
      if (!eval_out.empty()) dir = eval_out;
      const auto out = mash::run::evaluate_checkpoint(ckpt, episodes, eval_seed, dir);
      std::cout << (out.dir / "metrics.json").string() << "\n";
    } else if (*cmp) {
      mash::run::CompareOptions opt;
      opt.seeds = seeds;
      opt.train.deterministic = deterministic;
      opt.train.threads = threads;
      const auto table = mash::run::compare(load_config(cmp_a), load_config(cmp_b), opt);
      if (!cmp_out.empty()) mash::write_text(cmp_out, table);
      std::cout << table;
    } else if (*plt) {
      mash::run::plot_files(plot_inputs, plot_out);
      std::cout << plot_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "walker: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
