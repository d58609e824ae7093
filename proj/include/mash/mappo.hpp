#pragma once

// Multi-agent PPO with shared-parameter group actors and a multi-head
// privileged critic. The single-agent baseline is the same machinery with one
// actor over the concatenated observation and a one-head critic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "mash/adam.hpp"
#include "mash/domain_rand.hpp"
#include "mash/env.hpp"
#include "mash/errors.hpp"
#include "mash/gaussian.hpp"
#include "mash/mlp.hpp"
#include "mash/morphology.hpp"
#include "mash/observation.hpp"
#include "mash/ppo.hpp"
#include "mash/rewards.hpp"

namespace mash::rl {

enum class Mode { Bipedal, ArmSwing };
enum class Algorithm { Mash, SingleAgent };

inline const char* to_string(Mode m) { return m == Mode::Bipedal ? "bipedal" : "arm-swing"; }
inline const char* to_string(Algorithm a) { return a == Algorithm::Mash ? "mash" : "single-agent-ppo"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "bipedal") return Mode::Bipedal;
  if (s == "arm-swing") return Mode::ArmSwing;
  throw ConfigError("unknown mode '" + s + "' (expected bipedal or arm-swing)");
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "mash") return Algorithm::Mash;
  if (s == "single-agent-ppo") return Algorithm::SingleAgent;
  throw ConfigError("unknown algorithm '" + s + "' (expected mash or single-agent-ppo)");
}

// Slice [first, first + count) of an actor evaluation's output, owned by the
// agent whose critic head is `head`.
struct Unit {
  std::size_t first = 0;
  std::size_t count = 0;
  std::size_t head = 0;
};

// One forward pass of an actor: the listed agents' observations are
// concatenated as input and the output lands at action_offset in the joint
// action vector.
struct Evaluation {
  std::size_t actor = 0;
  std::vector<std::size_t> agents;
  std::size_t action_offset = 0;
  std::vector<Unit> units;
};

struct ActorSpec {
  std::string name;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
};

struct AgentRoster {
  Mode mode = Mode::Bipedal;
  Algorithm algorithm = Algorithm::Mash;
  bool per_limb = false;
  std::vector<obs::AgentId> agents;
  std::vector<obs::Layout> layouts;  // per agent
  std::vector<ActorSpec> actors;
  std::vector<Evaluation> evaluations;
  std::size_t heads = 0;           // critic output width
  std::size_t controlled_dof = 0;  // leading joints driven by the policy
  std::size_t critic_in = 0;

  std::size_t agent_count() const { return agents.size(); }

  // (evaluation, unit) pairs in a fixed order.
  std::vector<std::pair<std::size_t, std::size_t>> units() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t e = 0; e < evaluations.size(); ++e)
      for (std::size_t u = 0; u < evaluations[e].units.size(); ++u) out.emplace_back(e, u);
    return out;
  }
};

inline AgentRoster make_roster(const MorphologyConfig& m, Mode mode, Algorithm algorithm, bool per_limb = false) {
  m.validate();
  if (mode == Mode::ArmSwing && m.arms.empty()) throw ConfigError("arm-swing mode needs a morphology with arms");
  AgentRoster r;
  r.mode = mode;
  r.algorithm = algorithm;
  r.per_limb = per_limb;
  r.critic_in = obs::critic_layout(m.dof_total()).width();

  std::vector<LimbGroup> groups = {LimbGroup::Legs};
  if (mode == Mode::ArmSwing) groups.push_back(LimbGroup::Arms);
  for (LimbGroup g : groups)
    for (Side s : {Side::Left, Side::Right}) {
      obs::AgentId id{g, s};
      r.agents.push_back(id);
      r.layouts.push_back(obs::agent_layout(m.limbs()[id.limb_index()]->dof()));
    }
  for (const auto& id : r.agents) r.controlled_dof += m.limbs()[id.limb_index()]->dof();

  if (algorithm == Algorithm::SingleAgent) {
    Evaluation ev;
    std::size_t in = 0;
    for (std::size_t a = 0; a < r.agents.size(); ++a) {
      ev.agents.push_back(a);
      in += r.layouts[a].width();
    }
    ev.units.push_back({0, r.controlled_dof, 0});
    r.actors.push_back({"policy", in, r.controlled_dof});
    r.evaluations.push_back(ev);
    r.heads = 1;
    return r;
  }

  r.heads = r.agents.size();
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const std::size_t left = 2 * gi, right = 2 * gi + 1;
    const std::size_t dof = m.limbs()[r.agents[left].limb_index()]->dof();
    const std::size_t obs_w = r.layouts[left].width();
    const std::size_t offset = m.joint_offset(r.agents[left].limb_index());
    const std::string name = to_string(groups[gi]);
    if (per_limb) {
      r.actors.push_back({name, obs_w, dof});
      r.evaluations.push_back({r.actors.size() - 1, {left}, offset, {{0, dof, left}}});
      r.evaluations.push_back({r.actors.size() - 1, {right}, m.joint_offset(r.agents[right].limb_index()),
                               {{0, dof, right}}});
    } else {
      r.actors.push_back({name, 2 * obs_w, 2 * dof});
      r.evaluations.push_back({r.actors.size() - 1, {left, right}, offset, {{0, dof, left}, {dof, dof, right}}});
    }
  }
  return r;
}

struct TrainerConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_eps = 0.2;
  double learning_rate = 3e-4;
  int epochs = 5;
  int minibatches = 4;
  double entropy_coef = 0.005;
  double value_coef = 1.0;
  double max_grad_norm = 1.0;
  int iterations = 3000;
  int envs = 256;
  int horizon = 48;  // steps per rollout and per training episode
  std::vector<std::size_t> actor_hidden = {256, 256, 256};
  std::vector<std::size_t> critic_hidden = {512, 512, 512};
  bool per_limb = false;
  bool shared_advantage = false;  // one advantage per env from head-averaged values
  double reward_scale = 1.0;      // multiplies the team reward before GAE
  double obs_noise = 0.0;
  obs::CommandRanges commands;
  int checkpoint_every = 100;

  void validate() const {
    if (!(gamma >= 0 && gamma < 1)) throw ConfigError("trainer.gamma must be in [0, 1)");
    if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("trainer.lambda must be in [0, 1]");
    if (!(clip_eps > 0)) throw ConfigError("trainer.clip_eps must be > 0");
    if (!(learning_rate > 0)) throw ConfigError("trainer.learning_rate must be > 0");
    if (epochs < 1 || minibatches < 1) throw ConfigError("trainer epochs and minibatches must be >= 1");
    if (iterations < 1 || envs < 1 || horizon < 1) throw ConfigError("trainer iterations, envs, horizon must be >= 1");
    if (envs * horizon < minibatches) throw ConfigError("trainer: fewer samples than minibatches");
    if (!(reward_scale > 0)) throw ConfigError("trainer.reward_scale must be > 0");
    if (checkpoint_every < 1) throw ConfigError("trainer.checkpoint_every must be >= 1");
  }
};

template <typename Scalar>
struct Actor {
  std::string name;
  nn::Mlp<Scalar> net;
  nn::Vector<Scalar> log_std;

  std::vector<nn::TensorRef<Scalar>> tensors() {
    auto t = net.tensors("actor." + name);
    t.push_back({"actor." + name + ".log_std",
                 {static_cast<std::size_t>(log_std.size())},
                 std::span<Scalar>(log_std.data(), static_cast<std::size_t>(log_std.size()))});
    return t;
  }
};

template <typename Scalar>
struct Policy {
  std::vector<Actor<Scalar>> actors;
  nn::Mlp<Scalar> critic;

  std::vector<nn::TensorRef<Scalar>> critic_tensors() { return critic.tensors("critic"); }
  std::vector<nn::TensorRef<Scalar>> tensors() {
    std::vector<nn::TensorRef<Scalar>> all;
    for (auto& a : actors)
      for (auto& t : a.tensors()) all.push_back(t);
    for (auto& t : critic_tensors()) all.push_back(t);
    return all;
  }

  Policy zeros_like() const {
    Policy z;
    for (const auto& a : actors) z.actors.push_back({a.name, a.net.zeros_like(), nn::Vector<Scalar>::Zero(a.log_std.size())});
    z.critic = critic.zeros_like();
    return z;
  }

  template <typename Other>
  Policy<Other> cast() const {
    Policy<Other> p;
    for (const auto& a : actors) p.actors.push_back({a.name, a.net.template cast<Other>(), a.log_std.template cast<Other>()});
    p.critic = critic.template cast<Other>();
    return p;
  }
};

template <typename Scalar, typename Rng>
Policy<Scalar> make_policy(const AgentRoster& roster, const std::vector<std::size_t>& actor_hidden,
                           const std::vector<std::size_t>& critic_hidden, Rng& rng) {
  Policy<Scalar> p;
  for (const auto& spec : roster.actors)
    p.actors.push_back({spec.name, nn::make_mlp<Scalar>(spec.in_dim, actor_hidden, spec.out_dim, 0.01, rng),
                        nn::Vector<Scalar>::Zero(static_cast<Eigen::Index>(spec.out_dim))});
  p.critic = nn::make_mlp<Scalar>(roster.critic_in, critic_hidden, roster.heads, 1.0, rng);
  return p;
}

template <typename Scalar>
void check_policy(const Policy<Scalar>& p, const AgentRoster& roster) {
  require(p.actors.size() == roster.actors.size(), "policy: actor count does not match roster");
  for (std::size_t i = 0; i < p.actors.size(); ++i) {
    require(p.actors[i].net.in_dim() == roster.actors[i].in_dim && p.actors[i].net.out_dim() == roster.actors[i].out_dim,
            "policy: actor " + roster.actors[i].name + " has the wrong shape");
    require(static_cast<std::size_t>(p.actors[i].log_std.size()) == roster.actors[i].out_dim,
            "policy: log_std width mismatch for " + roster.actors[i].name);
  }
  require(p.critic.in_dim() == roster.critic_in, "critic_values: critic input width mismatch");
  require(p.critic.out_dim() == roster.heads, "critic_values: critic output width " + std::to_string(p.critic.out_dim()) +
                                                   " != " + std::to_string(roster.heads) + " heads");
}

// Per-agent values, one row per critic head and one column per observation.
template <typename Scalar>
Eigen::MatrixXd critic_values(const nn::Mlp<Scalar>& critic, const nn::Matrix<Scalar>& critic_obs, std::size_t heads) {
  require(critic.out_dim() == heads, "critic_values: critic has " + std::to_string(critic.out_dim()) +
                                         " heads, roster needs " + std::to_string(heads));
  return nn::mlp_forward_batch(critic, critic_obs).template cast<double>();
}

// Log-density of the agent's slice of a group action; the group head factorizes per dimension.
template <typename Scalar>
double per_agent_log_prob(const nn::GaussianHead<Scalar>& group_head, const nn::Vector<Scalar>& joint_action,
                          const Unit& slice) {
  require(slice.first + slice.count <= group_head.dim(), "per_agent_log_prob: agent slice out of bounds");
  const nn::GaussianHead<double> h{group_head.mean.template cast<double>(), group_head.log_std.template cast<double>()};
  return nn::gaussian_log_prob(h, Eigen::VectorXd(joint_action.template cast<double>()), slice.first, slice.count);
}

namespace detail {

// Column-wise slice log-probs of `actions` under N(mean, exp(log_std)).
template <typename Scalar>
std::vector<double> slice_log_probs(const nn::Matrix<Scalar>& mean, const nn::Vector<Scalar>& log_std,
                                    const nn::Matrix<Scalar>& actions, const Unit& u) {
  std::vector<double> out(static_cast<std::size_t>(mean.cols()));
  for (Eigen::Index b = 0; b < mean.cols(); ++b) {
    double total = 0.0;
    for (std::size_t d = u.first; d < u.first + u.count; ++d) {
      const auto i = static_cast<Eigen::Index>(d);
      const double ls = static_cast<double>(log_std[i]);
      const double z = (static_cast<double>(actions(i, b)) - static_cast<double>(mean(i, b))) / std::exp(ls);
      total += -0.5 * z * z - ls - nn::kHalfLog2Pi;
    }
    out[static_cast<std::size_t>(b)] = total;
  }
  return out;
}

template <typename Scalar>
double slice_entropy(const nn::Vector<Scalar>& log_std, const Unit& u) {
  double total = 0.0;
  for (std::size_t d = u.first; d < u.first + u.count; ++d)
    total += static_cast<double>(log_std[static_cast<Eigen::Index>(d)]) + nn::kHalfLog2PiE;
  return total;
}

inline std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

// Independent 64-bit seed for stream `stream` of a run seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed;
  detail::splitmix64(x);
  x ^= 0xD1B54A32D192ED03ull * (stream + 1);
  return detail::splitmix64(x);
}

inline int thread_count_from_env() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* v = std::getenv("WALKER_THREADS")) {
    char* end = nullptr;
    const long parsed = std::strtol(v, &end, 10);
    if (end != v && parsed >= 1) n = static_cast<int>(std::min<long>(parsed, n));
  }
  return n;
}

// Runs f(i) for i in [0, n) on up to `threads` threads. The lowest-index
// exception is rethrown after all workers finish.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& f) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) {
          try {
            f(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename Scalar>
struct RolloutBuffer {
  std::size_t steps = 0;  // T
  std::size_t envs = 0;   // E; sample index is t * E + e
  std::vector<nn::Matrix<Scalar>> inputs;   // per evaluation
  std::vector<nn::Matrix<Scalar>> actions;  // per evaluation
  std::vector<std::vector<double>> log_probs;  // per roster unit
  nn::Matrix<Scalar> critic_inputs;
  Eigen::MatrixXd values;     // heads x samples
  Eigen::MatrixXd bootstrap;  // heads x envs
  std::vector<double> rewards;
  std::vector<bool> dones;
  Eigen::MatrixXd advantages;  // heads x samples
  Eigen::MatrixXd returns;

  std::size_t size() const { return steps * envs; }
};

struct MinibatchStats {
  double policy_loss = 0.0;  // -sum over agents of the clipped surrogate
  double value_loss = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double mean_ratio = 0.0;
  double max_ratio_deviation = 0.0;  // max |r - 1|
  double clip_fraction = 0.0;
};

template <typename Scalar>
struct Minibatch {
  std::vector<nn::Matrix<Scalar>> inputs;
  std::vector<nn::Matrix<Scalar>> actions;
  std::vector<std::vector<double>> old_log_probs;  // per roster unit
  nn::Matrix<Scalar> critic_inputs;
  std::vector<std::vector<double>> advantages;  // per head
  std::vector<std::vector<double>> returns;     // per head
};

template <typename Scalar>
Minibatch<Scalar> gather(const RolloutBuffer<Scalar>& buf, const std::vector<std::size_t>& idx) {
  Minibatch<Scalar> mb;
  const auto n = static_cast<Eigen::Index>(idx.size());
  auto cols = [&](const nn::Matrix<Scalar>& m) {
    nn::Matrix<Scalar> out(m.rows(), n);
    for (Eigen::Index b = 0; b < n; ++b) out.col(b) = m.col(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(b)]));
    return out;
  };
  for (const auto& m : buf.inputs) mb.inputs.push_back(cols(m));
  for (const auto& m : buf.actions) mb.actions.push_back(cols(m));
  mb.critic_inputs = cols(buf.critic_inputs);
  for (const auto& lp : buf.log_probs) {
    std::vector<double> v(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) v[b] = lp[idx[b]];
    mb.old_log_probs.push_back(std::move(v));
  }
  for (Eigen::Index h = 0; h < buf.advantages.rows(); ++h) {
    std::vector<double> a(idx.size()), r(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      a[b] = buf.advantages(h, static_cast<Eigen::Index>(idx[b]));
      r[b] = buf.returns(h, static_cast<Eigen::Index>(idx[b]));
    }
    mb.advantages.push_back(std::move(a));
    mb.returns.push_back(std::move(r));
  }
  return mb;
}

// Loss = -sum_units mean(clipped surrogate) - c_ent * H + c_v * mean_heads mean((V_h - R_h)^2).
// When `grads` is non-null it receives d loss / d parameters (overwritten).
template <typename Scalar>
MinibatchStats mappo_loss(const Policy<Scalar>& pol, const AgentRoster& roster, const Minibatch<Scalar>& mb,
                          const TrainerConfig& cfg, Policy<Scalar>* grads = nullptr) {
  MinibatchStats st;
  if (grads) *grads = pol.zeros_like();
  std::size_t flat = 0;
  double ratio_sum = 0.0, clipped = 0.0, ratio_count = 0.0;
  for (std::size_t e = 0; e < roster.evaluations.size(); ++e) {
    const auto& ev = roster.evaluations[e];
    const auto& actor = pol.actors[ev.actor];
    nn::MlpCache<Scalar> cache;
    const nn::Matrix<Scalar> mean = nn::mlp_forward_batch(actor.net, mb.inputs[e], grads ? &cache : nullptr);
    const Eigen::Index batch = mean.cols();
    nn::Matrix<Scalar> d_mean;
    Eigen::VectorXd d_log_std;
    if (grads) {
      d_mean = nn::Matrix<Scalar>::Zero(mean.rows(), batch);
      d_log_std = Eigen::VectorXd::Zero(actor.log_std.size());
    }
    for (const auto& u : ev.units) {
      const auto& old = mb.old_log_probs[flat++];
      const auto& adv = mb.advantages[u.head];
      const auto fresh = detail::slice_log_probs(mean, actor.log_std, mb.actions[e], u);
      const ClipLoss cl = ppo_clip_loss(fresh, old, adv, cfg.clip_eps);
      st.policy_loss += cl.loss;
      st.entropy += detail::slice_entropy(actor.log_std, u);
      for (double r : cl.ratios) {
        st.max_ratio_deviation = std::max(st.max_ratio_deviation, std::abs(r - 1.0));
        ratio_sum += r;
        if (std::abs(r - 1.0) > cfg.clip_eps) clipped += 1.0;
      }
      ratio_count += static_cast<double>(cl.ratios.size());
      if (!grads) continue;
      const double inv_b = 1.0 / static_cast<double>(batch);
      for (Eigen::Index b = 0; b < batch; ++b) {
        const double r = cl.ratios[static_cast<std::size_t>(b)];
        // d loss / d log_prob = -(1/B) * d surrogate / d ratio * ratio
        const double w = -inv_b * clipped_surrogate_grad(r, adv[static_cast<std::size_t>(b)], cfg.clip_eps) * r;
        if (w == 0.0) continue;
        for (std::size_t d = u.first; d < u.first + u.count; ++d) {
          const auto i = static_cast<Eigen::Index>(d);
          const double inv_std = std::exp(-static_cast<double>(actor.log_std[i]));
          const double z = (static_cast<double>(mb.actions[e](i, b)) - static_cast<double>(mean(i, b))) * inv_std;
          d_mean(i, b) += static_cast<Scalar>(w * z * inv_std);
          d_log_std[i] += w * (z * z - 1.0);
        }
      }
      for (std::size_t d = u.first; d < u.first + u.count; ++d) d_log_std[static_cast<Eigen::Index>(d)] -= cfg.entropy_coef;
    }
    if (grads) {
      auto g = nn::mlp_backward_batch(actor.net, cache, d_mean, false);
      auto& ga = grads->actors[ev.actor];
      nn::accumulate(ga.net, g.params);
      ga.log_std += d_log_std.template cast<Scalar>();
    }
  }

  nn::MlpCache<Scalar> ccache;
  const nn::Matrix<Scalar> v = nn::mlp_forward_batch(pol.critic, mb.critic_inputs, grads ? &ccache : nullptr);
  const auto heads = static_cast<std::size_t>(v.rows());
  require(heads == mb.returns.size(), "mappo_loss: critic heads do not match returns");
  double vsum = 0.0;
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<double> vh(static_cast<std::size_t>(v.cols()));
    for (Eigen::Index b = 0; b < v.cols(); ++b) vh[static_cast<std::size_t>(b)] = static_cast<double>(v(static_cast<Eigen::Index>(h), b));
    vsum += value_mse(vh, mb.returns[h]);
  }
  st.value_loss = cfg.value_coef * (vsum / static_cast<double>(heads));
  if (grads) {
    nn::Matrix<Scalar> dv(v.rows(), v.cols());
    const double k = cfg.value_coef * 2.0 / (static_cast<double>(heads) * static_cast<double>(v.cols()));
    for (Eigen::Index h = 0; h < v.rows(); ++h)
      for (Eigen::Index b = 0; b < v.cols(); ++b)
        dv(h, b) = static_cast<Scalar>(k * (static_cast<double>(v(h, b)) -
                                            mb.returns[static_cast<std::size_t>(h)][static_cast<std::size_t>(b)]));
    grads->critic = nn::mlp_backward_batch(pol.critic, ccache, dv, false).params;
  }
  st.total = st.policy_loss - cfg.entropy_coef * st.entropy + st.value_loss;
  st.mean_ratio = ratio_count > 0 ? ratio_sum / ratio_count : 1.0;
  st.clip_fraction = ratio_count > 0 ? clipped / ratio_count : 0.0;
  return st;
}

// Plain PPO losses for one actor over its full output and a one-head critic.
template <typename Scalar>
MinibatchStats ppo_loss(const Actor<Scalar>& actor, const nn::Mlp<Scalar>& critic, const nn::Matrix<Scalar>& inputs,
                        const nn::Matrix<Scalar>& actions, const std::vector<double>& old_log_probs,
                        const std::vector<double>& advantages, const nn::Matrix<Scalar>& critic_inputs,
                        const std::vector<double>& returns, const TrainerConfig& cfg) {
  MinibatchStats st;
  const nn::Matrix<Scalar> mean = nn::mlp_forward_batch(actor.net, inputs);
  const Unit all{0, static_cast<std::size_t>(mean.rows()), 0};
  const ClipLoss cl = ppo_clip_loss(detail::slice_log_probs(mean, actor.log_std, actions, all), old_log_probs,
                                    advantages, cfg.clip_eps);
  st.policy_loss = cl.loss;
  st.entropy = detail::slice_entropy(actor.log_std, all);
  const nn::Matrix<Scalar> v = nn::mlp_forward_batch(critic, critic_inputs);
  require(v.rows() == 1, "ppo_loss: critic must have one head");
  std::vector<double> vh(static_cast<std::size_t>(v.cols()));
  for (Eigen::Index b = 0; b < v.cols(); ++b) vh[static_cast<std::size_t>(b)] = static_cast<double>(v(0, b));
  st.value_loss = cfg.value_coef * value_mse(vh, returns);
  st.total = st.policy_loss - cfg.entropy_coef * st.entropy + st.value_loss;
  st.mean_ratio = cl.mean_ratio;
  st.clip_fraction = cl.clip_fraction;
  return st;
}

// Per-head GAE over each env's column of the buffer, then per-head advantage
// normalization over the batch.
template <typename Scalar>
void finalize_advantages(RolloutBuffer<Scalar>& buf, const TrainerConfig& cfg) {
  const auto heads = buf.values.rows();
  const auto n = static_cast<Eigen::Index>(buf.size());
  buf.advantages = Eigen::MatrixXd::Zero(heads, n);
  buf.returns = Eigen::MatrixXd::Zero(heads, n);
  std::vector<double> r(buf.steps), v(buf.steps);
  std::vector<bool> d(buf.steps);
  auto run = [&](std::size_t e, const std::function<double(std::size_t)>& value_at, double boot,
                 const std::function<void(std::size_t, double, double)>& store) {
    for (std::size_t t = 0; t < buf.steps; ++t) {
      const std::size_t k = t * buf.envs + e;
      r[t] = buf.rewards[k];
      d[t] = buf.dones[k];
      v[t] = value_at(k);
    }
    const auto g = compute_gae(r, v, d, boot, cfg.gamma, cfg.lambda);
    for (std::size_t t = 0; t < buf.steps; ++t) store(t * buf.envs + e, g.advantages[t], g.returns[t]);
  };
  for (std::size_t e = 0; e < buf.envs; ++e) {
    if (cfg.shared_advantage) {
      auto mean_v = [&](std::size_t k) { return buf.values.col(static_cast<Eigen::Index>(k)).mean(); };
      run(e, mean_v, buf.bootstrap.col(static_cast<Eigen::Index>(e)).mean(), [&](std::size_t k, double a, double ret) {
        buf.advantages.col(static_cast<Eigen::Index>(k)).setConstant(a);
        buf.returns.col(static_cast<Eigen::Index>(k)).setConstant(ret);
      });
      continue;
    }
    for (Eigen::Index h = 0; h < heads; ++h)
      run(e, [&](std::size_t k) { return buf.values(h, static_cast<Eigen::Index>(k)); },
          buf.bootstrap(h, static_cast<Eigen::Index>(e)), [&](std::size_t k, double a, double ret) {
            buf.advantages(h, static_cast<Eigen::Index>(k)) = a;
            buf.returns(h, static_cast<Eigen::Index>(k)) = ret;
          });
  }
  for (Eigen::Index h = 0; h < heads; ++h) {
    std::vector<double> a(buf.size());
    for (Eigen::Index k = 0; k < n; ++k) a[static_cast<std::size_t>(k)] = buf.advantages(h, k);
    normalize(a);
    for (Eigen::Index k = 0; k < n; ++k) buf.advantages(h, k) = a[static_cast<std::size_t>(k)];
  }
}

// One environment instance with its own random stream.
struct EnvSlot {
  sim::WalkerEnv env;
  std::mt19937_64 rng;
  reward::RewardConfig reward;
  double episode_return = 0.0;
};

struct RolloutContext {
  const MorphologyConfig* morph = nullptr;
  const AgentRoster* roster = nullptr;
  const TrainerConfig* cfg = nullptr;
  const dr::RandomizationTable* table = nullptr;
  int threads = 1;
};

template <typename Rng>
void reset_env(sim::WalkerEnv& env, const dr::RandomizationTable& table, const obs::CommandRanges& commands, Rng& rng) {
  const auto ov = dr::sample_init_randomization(table, rng);
  const auto cmd = obs::sample_commands(rng, commands);
  env.reset(ov, cmd, rng);
}

// Fills column `col` of each evaluation input and of the critic input from the
// env's current snapshot.
template <typename Scalar, typename Rng>
void write_observations(const sim::WalkerEnv& env, const AgentRoster& roster, const MorphologyConfig& m,
                        const obs::ObsNoise& noise, Rng& rng, std::vector<nn::Matrix<Scalar>>& inputs,
                        nn::Matrix<Scalar>* critic_inputs, Eigen::Index col) {
  const auto& snap = env.snapshot();
  std::vector<Eigen::VectorXd> agent_obs;
  for (std::size_t a = 0; a < roster.agents.size(); ++a)
    agent_obs.push_back(obs::build_agent_obs(snap, roster.agents[a], m, roster.layouts[a], noise, &rng));
  for (std::size_t e = 0; e < roster.evaluations.size(); ++e) {
    Eigen::Index row = 0;
    for (std::size_t a : roster.evaluations[e].agents) {
      inputs[e].col(col).segment(row, agent_obs[a].size()) = agent_obs[a].template cast<Scalar>();
      row += agent_obs[a].size();
    }
  }
  if (critic_inputs)
    critic_inputs->col(col) =
        obs::build_critic_obs(snap, env.overrides(), m, obs::critic_layout(m.dof_total())).template cast<Scalar>();
}

struct RolloutStats {
  double mean_step_reward = 0.0;      // team reward per transition, before reward_scale
  double mean_episode_reward = 0.0;   // summed team reward per env over the rollout
  int terminations = 0;
};

// Resets every env, then runs `horizon` steps with sampled actions. Episodes
// that terminate early are reset in place; the rest are truncated at the
// horizon and bootstrapped from the critic.
template <typename Scalar>
RolloutStats collect_rollouts(const Policy<Scalar>& pol, std::vector<EnvSlot>& slots, const RolloutContext& ctx,
                              RolloutBuffer<Scalar>& buf) {
  const auto& roster = *ctx.roster;
  const auto& m = *ctx.morph;
  const auto& cfg = *ctx.cfg;
  check_policy(pol, roster);
  const std::size_t E = slots.size(), T = static_cast<std::size_t>(cfg.horizon);
  const auto n = static_cast<Eigen::Index>(E * T);
  const auto units = roster.units();
  buf.steps = T;
  buf.envs = E;
  buf.inputs.assign(roster.evaluations.size(), {});
  buf.actions.assign(roster.evaluations.size(), {});
  for (std::size_t e = 0; e < roster.evaluations.size(); ++e) {
    const auto& spec = roster.actors[roster.evaluations[e].actor];
    buf.inputs[e].resize(static_cast<Eigen::Index>(spec.in_dim), n);
    buf.actions[e].resize(static_cast<Eigen::Index>(spec.out_dim), n);
  }
  buf.log_probs.assign(units.size(), std::vector<double>(E * T));
  buf.critic_inputs.resize(static_cast<Eigen::Index>(roster.critic_in), n);
  buf.values.resize(static_cast<Eigen::Index>(roster.heads), n);
  buf.rewards.assign(E * T, 0.0);
  buf.dones.assign(E * T, false);

  const obs::ObsNoise noise{cfg.obs_noise};
  const auto Ei = static_cast<Eigen::Index>(E);
  std::vector<nn::Matrix<Scalar>> step_inputs(roster.evaluations.size());
  for (std::size_t e = 0; e < roster.evaluations.size(); ++e)
    step_inputs[e].resize(buf.inputs[e].rows(), Ei);
  nn::Matrix<Scalar> step_critic(static_cast<Eigen::Index>(roster.critic_in), Ei);
  std::vector<Eigen::VectorXd> joint_actions(E, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.dof_total())));

  parallel_for(E, ctx.threads, [&](std::size_t i) {
    reset_env(slots[i].env, *ctx.table, cfg.commands, slots[i].rng);
    slots[i].episode_return = 0.0;
    write_observations(slots[i].env, roster, m, noise, slots[i].rng, step_inputs, &step_critic,
                       static_cast<Eigen::Index>(i));
  });

  RolloutStats stats;
  double reward_total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const Eigen::Index base = static_cast<Eigen::Index>(t * E);
    std::vector<nn::Matrix<Scalar>> means;
    for (std::size_t e = 0; e < roster.evaluations.size(); ++e) {
      means.push_back(nn::mlp_forward_batch(pol.actors[roster.evaluations[e].actor].net, step_inputs[e]));
      buf.inputs[e].middleCols(base, Ei) = step_inputs[e];
    }
    buf.critic_inputs.middleCols(base, Ei) = step_critic;
    buf.values.middleCols(base, Ei) = critic_values(pol.critic, step_critic, roster.heads);

    for (std::size_t i = 0; i < E; ++i) {
      std::size_t flat = 0;
      joint_actions[i].setZero();
      for (std::size_t e = 0; e < roster.evaluations.size(); ++e) {
        const auto& ev = roster.evaluations[e];
        const auto& actor = pol.actors[ev.actor];
        const nn::GaussianHead<Scalar> head{means[e].col(static_cast<Eigen::Index>(i)), actor.log_std};
        const auto sample = nn::gaussian_sample(head, slots[i].rng);
        const auto col = base + static_cast<Eigen::Index>(i);
        buf.actions[e].col(col) = sample.action;
        joint_actions[i].segment(static_cast<Eigen::Index>(ev.action_offset), sample.action.size()) =
            sample.action.template cast<double>();
        for (const auto& u : ev.units) buf.log_probs[flat++][t * E + i] = per_agent_log_prob(head, sample.action, u);
      }
    }

    std::vector<double> step_reward(E, 0.0);
    std::vector<char> step_done(E, 0);
    parallel_for(E, ctx.threads, [&](std::size_t i) {
      auto& s = slots[i];
      const auto pert = dr::sample_step_randomization(*ctx.table, s.rng, s.env.state().t, m.torque_limits(),
                                                      s.env.options().control_dt);
      const sim::StepSnapshot* snap = nullptr;
      try {
        snap = &s.env.step(joint_actions[i], pert);
      } catch (const SimulationBlowUp& err) {
        throw SimulationBlowUp(std::string(err.what()) + " in env " + std::to_string(i) + " at rollout step " +
                                   std::to_string(t),
                               err.step_index);
      }
      const auto br = reward::compute_reward_terms(*snap, reward::reference_signals(*snap, m), s.reward);
      step_reward[i] = br.total;
      step_done[i] = snap->terminated ? 1 : 0;
      if (snap->terminated) reset_env(s.env, *ctx.table, cfg.commands, s.rng);
      write_observations(s.env, roster, m, noise, s.rng, step_inputs, &step_critic, static_cast<Eigen::Index>(i));
    });
    for (std::size_t i = 0; i < E; ++i) {
      buf.rewards[t * E + i] = cfg.reward_scale * step_reward[i];
      buf.dones[t * E + i] = step_done[i] != 0;
      reward_total += step_reward[i];
      stats.terminations += step_done[i];
    }
  }
  buf.bootstrap = critic_values(pol.critic, step_critic, roster.heads);
  stats.mean_step_reward = reward_total / static_cast<double>(E * T);
  stats.mean_episode_reward = reward_total / static_cast<double>(E);
  return stats;
}

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double first_ratio_deviation = 0.0;  // max |r - 1| on the first minibatch, before any step
  double explained_variance = 0.0;
  int minibatches = 0;
};

template <typename Scalar>
struct Optimizers {
  std::vector<nn::AdamState<Scalar>> actors;
  nn::AdamState<Scalar> critic;

  static Optimizers create(Policy<Scalar>& pol, double lr) {
    Optimizers o;
    nn::AdamHyper h;
    h.lr = lr;
    for (auto& a : pol.actors) o.actors.push_back(nn::AdamState<Scalar>::for_tensors(a.tensors(), h));
    o.critic = nn::AdamState<Scalar>::for_tensors(pol.critic_tensors(), h);
    return o;
  }
};

// Epochs of shuffled minibatch steps on a finalized buffer. Each network's
// gradient is clipped to max_grad_norm and stepped by its own Adam state.
template <typename Scalar, typename Rng>
UpdateStats mappo_update(const RolloutBuffer<Scalar>& buf, Policy<Scalar>& pol, Optimizers<Scalar>& opt,
                         const AgentRoster& roster, const TrainerConfig& cfg, Rng& rng) {
  UpdateStats us;
  {
    std::vector<double> v(buf.size() * static_cast<std::size_t>(buf.values.rows()));
    std::vector<double> r(v.size());
    for (Eigen::Index h = 0, k = 0; h < buf.values.rows(); ++h)
      for (Eigen::Index c = 0; c < buf.values.cols(); ++c, ++k) {
        v[static_cast<std::size_t>(k)] = buf.values(h, c);
        r[static_cast<std::size_t>(k)] = buf.returns(h, c);
      }
    us.explained_variance = explained_variance(v, r);
  }
  std::vector<std::size_t> order(buf.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb_size = buf.size() / static_cast<std::size_t>(cfg.minibatches);
  int k = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with an explicit draw so the permutation is library-independent.
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
    for (int b = 0; b < cfg.minibatches; ++b, ++k) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b * mb_size),
                                         b + 1 == cfg.minibatches
                                             ? order.end()
                                             : order.begin() + static_cast<std::ptrdiff_t>((b + 1) * mb_size));
      const auto mb = gather(buf, idx);
      Policy<Scalar> g;
      const auto st = mappo_loss(pol, roster, mb, cfg, &g);
      if (!std::isfinite(st.total))
        throw TrainingDivergence("non-finite loss in minibatch " + std::to_string(k) + " (epoch " +
                                 std::to_string(epoch) + ")");
      if (k == 0) us.first_ratio_deviation = st.max_ratio_deviation;
      us.policy_loss += st.policy_loss;
      us.value_loss += st.value_loss;
      us.entropy += st.entropy;
      us.mean_ratio += st.mean_ratio;
      us.clip_fraction += st.clip_fraction;
      for (std::size_t a = 0; a < pol.actors.size(); ++a) {
        auto gt = g.actors[a].tensors();
        nn::clip_global_norm(gt, cfg.max_grad_norm);
        nn::adam_step(opt.actors[a], pol.actors[a].tensors(), gt);
        for (auto& v : pol.actors[a].log_std) v = nn::clamp_log_std(v);
      }
      auto gc = g.critic_tensors();
      nn::clip_global_norm(gc, cfg.max_grad_norm);
      nn::adam_step(opt.critic, pol.critic_tensors(), gc);
    }
  }
  us.minibatches = k;
  const double inv = k > 0 ? 1.0 / k : 0.0;
  us.policy_loss *= inv;
  us.value_loss *= inv;
  us.entropy *= inv;
  us.mean_ratio *= inv;
  us.clip_fraction *= inv;
  return us;
}

struct IterationStats {
  int iteration = 0;
  RolloutStats rollout;
  UpdateStats update;
};

template <typename Scalar = float>
class Trainer {
 public:
  Trainer(MorphologyConfig morph, AgentRoster roster, TrainerConfig cfg, reward::RewardConfig reward_cfg,
          dr::RandomizationTable table, std::uint64_t seed, int threads = 1,
          sim::EnvOptions env_opt = {})
      : morph_(std::move(morph)), roster_(std::move(roster)), cfg_(std::move(cfg)), table_(std::move(table)),
        rng_(derive_seed(seed, 0)), threads_(threads) {
    cfg_.validate();
    table_.validate();
    reward_cfg.validate();
    std::mt19937_64 init_rng(derive_seed(seed, 1));
    policy_ = make_policy<Scalar>(roster_, cfg_.actor_hidden, cfg_.critic_hidden, init_rng);
    opt_ = Optimizers<Scalar>::create(policy_, cfg_.learning_rate);
    for (int e = 0; e < cfg_.envs; ++e)
      slots_.push_back({sim::WalkerEnv(morph_, env_opt), std::mt19937_64(derive_seed(seed, 100 + static_cast<std::uint64_t>(e))),
                        reward_cfg, 0.0});
  }

  IterationStats iterate() {
    IterationStats s;
    s.iteration = ++iteration_;
    RolloutContext ctx{&morph_, &roster_, &cfg_, &table_, threads_};
    s.rollout = collect_rollouts(policy_, slots_, ctx, buffer_);
    finalize_advantages(buffer_, cfg_);
    s.update = mappo_update(buffer_, policy_, opt_, roster_, cfg_, rng_);
    return s;
  }

  const Policy<Scalar>& policy() const { return policy_; }
  Policy<Scalar>& policy() { return policy_; }
  const AgentRoster& roster() const { return roster_; }
  const TrainerConfig& config() const { return cfg_; }
  const RolloutBuffer<Scalar>& buffer() const { return buffer_; }
  int iteration() const { return iteration_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  MorphologyConfig morph_;
  AgentRoster roster_;
  TrainerConfig cfg_;
  dr::RandomizationTable table_;
  std::mt19937_64 rng_;
  int threads_ = 1;
  Policy<Scalar> policy_;
  Optimizers<Scalar> opt_;
  std::vector<EnvSlot> slots_;
  RolloutBuffer<Scalar> buffer_;
  int iteration_ = 0;
};

// Deterministic joint action (group means) for the env's current snapshot.
template <typename Scalar>
Eigen::VectorXd mean_action(const Policy<Scalar>& pol, const AgentRoster& roster, const MorphologyConfig& m,
                            const sim::WalkerEnv& env) {
  std::vector<nn::Matrix<Scalar>> inputs(roster.evaluations.size());
  for (std::size_t e = 0; e < roster.evaluations.size(); ++e)
    inputs[e].resize(static_cast<Eigen::Index>(roster.actors[roster.evaluations[e].actor].in_dim), 1);
  std::mt19937_64 unused(0);
  write_observations<Scalar>(env, roster, m, {}, unused, inputs, nullptr, 0);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.dof_total()));
  for (std::size_t e = 0; e < roster.evaluations.size(); ++e) {
    const auto& ev = roster.evaluations[e];
    const nn::Matrix<Scalar> mean = nn::mlp_forward_batch(pol.actors[ev.actor].net, inputs[e]);
    a.segment(static_cast<Eigen::Index>(ev.action_offset), mean.rows()) = mean.col(0).template cast<double>();
  }
  return a;
}

}  // namespace mash::rl
