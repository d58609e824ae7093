#pragma once

// Checkpoints: <dir>/params.bin (float32 blob) and <dir>/manifest.json. A
// checkpoint directory is written under a temporary name and renamed into
// place, so readers never see a partial one.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mash/config.hpp"
#include "mash/errors.hpp"
#include "mash/mappo.hpp"
#include "mash/observation.hpp"
#include "mash/serialize.hpp"

namespace mash {

namespace fs = std::filesystem;

inline json layout_to_json(const obs::Layout& l) {
  json a = json::array();
  for (const auto& f : l.fields) a.push_back({{"name", f.name}, {"width", f.width}});
  return a;
}

inline json roster_to_json(const rl::AgentRoster& r) {
  json agents = json::array();
  for (std::size_t i = 0; i < r.agents.size(); ++i)
    agents.push_back({{"name", r.agents[i].name()}, {"obs_width", r.layouts[i].width()}});
  json actors = json::array();
  for (const auto& a : r.actors) actors.push_back({{"name", a.name}, {"in", a.in_dim}, {"out", a.out_dim}});
  return {{"mode", rl::to_string(r.mode)},
          {"algorithm", rl::to_string(r.algorithm)},
          {"per_limb", r.per_limb},
          {"agents", agents},
          {"actors", actors},
          {"critic_in", r.critic_in},
          {"critic_heads", r.heads}};
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("short write to " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Scalar>
void save_checkpoint(const fs::path& dir, const RunConfig& cfg, rl::Policy<Scalar>& pol, int iteration,
                     const std::mt19937_64& rng) {
  const auto roster = cfg.roster();
  rl::check_policy(pol, roster);
  nn::ParamBlob blob;
  nn::append_tensors(blob, pol.tensors());
  std::ostringstream rng_state;
  rng_state << rng;
  const auto m = cfg.morph();
  json agent_layouts = json::object();
  for (std::size_t i = 0; i < roster.agents.size(); ++i)
    agent_layouts[roster.agents[i].name()] = layout_to_json(roster.layouts[i]);
  json manifest = {{"schema_version", kSchemaVersion},
                   {"iteration", iteration},
                   {"config_hash", config_hash(cfg)},
                   {"config", to_json(cfg)},
                   {"morphology", {{"preset", m.preset}, {"dof_total", m.dof_total()}, {"joints", m.joint_names()}}},
                   {"roster", roster_to_json(roster)},
                   {"layouts", {{"agents", agent_layouts}, {"critic", layout_to_json(obs::critic_layout(m.dof_total()))}}},
                   {"rng_state", rng_state.str()},
                   {"params_hash", blob.hash()},
                   {"params_bytes", blob.bytes.size()},
                   {"tensors", blob.manifest}};

  fs::create_directories(dir.parent_path());
  const fs::path tmp = dir.parent_path() / (dir.filename().string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  nn::write_bytes((tmp / "params.bin").string(), blob.bytes);
  write_text(tmp / "manifest.json", manifest.dump(2) + "\n");
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

struct LoadedCheckpoint {
  RunConfig config;
  rl::Policy<float> policy;
  int iteration = 0;
  json manifest;
  fs::path dir;
};

// Accepts the checkpoint directory or its manifest.json. When `expected` is
// given, the checkpoint's morphology, roster and layouts must match it.
inline LoadedCheckpoint load_checkpoint(const fs::path& where, const RunConfig* expected = nullptr) {
  const fs::path dir = fs::is_directory(where) ? where : where.parent_path();
  if (!fs::exists(dir / "manifest.json")) throw ConfigError("no checkpoint manifest at " + dir.string());
  LoadedCheckpoint ck;
  ck.dir = dir;
  try {
    ck.manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw ConfigError("unreadable checkpoint manifest: " + std::string(e.what()));
  }
  if (ck.manifest.value("schema_version", 0) != kSchemaVersion) throw ConfigError("unsupported checkpoint schema version");
  ck.config = run_config_from_json(ck.manifest.at("config"));
  if (config_hash(ck.config) != ck.manifest.at("config_hash").get<std::string>())
    throw ConfigError("checkpoint config hash does not match its recorded config");
  ck.iteration = ck.manifest.at("iteration").get<int>();

  const auto m = ck.config.morph();
  const auto roster = ck.config.roster();
  if (ck.manifest.at("roster") != roster_to_json(roster))
    throw ConfigError("checkpoint roster does not match its configuration");
  if (ck.manifest.at("morphology").at("dof_total").get<std::size_t>() != m.dof_total() ||
      ck.manifest.at("morphology").at("joints").get<std::vector<std::string>>() != m.joint_names())
    throw ConfigError("checkpoint morphology does not match preset '" + m.preset + "'");
  if (expected) {
    const auto em = expected->morph();
    if (em.preset != m.preset || em.joint_names() != m.joint_names())
      throw ConfigError("checkpoint morphology '" + m.preset + "' does not match configured '" + em.preset + "'");
    if (roster_to_json(expected->roster()) != roster_to_json(roster))
      throw ConfigError("checkpoint roster does not match the configured mode/algorithm");
  }

  nn::ParamBlob blob;
  blob.bytes = nn::read_bytes((dir / "params.bin").string());
  blob.manifest = ck.manifest.at("tensors");
  if (blob.hash() != ck.manifest.at("params_hash").get<std::string>())
    throw ConfigError("checkpoint parameter blob does not match its manifest hash");
  std::mt19937_64 unused(0);
  const auto& t = ck.config.trainer;
  ck.policy = rl::make_policy<float>(roster, t.actor_hidden, t.critic_hidden, unused);
  nn::load_tensors(blob, ck.policy.tensors());
  return ck;
}

}  // namespace mash
