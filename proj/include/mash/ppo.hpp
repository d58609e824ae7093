#pragma once

// Advantage estimation and the clipped policy objective shared by the
// multi-agent trainer and the single-agent baseline.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mash/errors.hpp"

namespace mash::rl {

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
// V_T is `bootstrap`.
inline GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                             const std::vector<bool>& dones, double bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  require(values.size() == n && dones.size() == n, "compute_gae: rewards, values and dones must align");
  GaeResult out{std::vector<double>(n), std::vector<double>(n)};
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double next_value = k + 1 < n ? values[k + 1] : bootstrap;
    const double delta = rewards[k] + gamma * next_value * live - values[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[k] = next_adv;
    out.returns[k] = next_adv + values[k];
  }
  return out;
}

// In-place standardization to zero mean and unit (population) std.
inline void normalize(std::vector<double>& v) {
  if (v.size() < 2) return;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double inv = 1.0 / (std::sqrt(var) + 1e-12);
  for (double& x : v) x = (x - mean) * inv;
}

// min(r * A, clip(r, 1 - eps, 1 + eps) * A)
inline double clipped_surrogate(double ratio, double advantage, double eps) {
  require(eps > 0, "clipped_surrogate: eps must be positive");
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

// d clipped_surrogate / d ratio: A on the unclipped branch, 0 where the clip binds.
inline double clipped_surrogate_grad(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return ratio * advantage <= clipped * advantage ? advantage : 0.0;
}

struct ClipLoss {
  double loss = 0.0;           // -mean(surrogate)
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;  // share of samples whose ratio left [1 - eps, 1 + eps]
  std::vector<double> ratios;
};

inline ClipLoss ppo_clip_loss(const std::vector<double>& new_log_prob, const std::vector<double>& old_log_prob,
                              const std::vector<double>& advantages, double eps) {
  const std::size_t n = new_log_prob.size();
  require(n > 0 && old_log_prob.size() == n && advantages.size() == n, "ppo_clip_loss: inputs must align");
  ClipLoss out;
  out.ratios.resize(n);
  double surrogate = 0.0, ratio_sum = 0.0, clipped = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const double r = std::exp(new_log_prob[b] - old_log_prob[b]);
    out.ratios[b] = r;
    surrogate += clipped_surrogate(r, advantages[b], eps);
    ratio_sum += r;
    if (std::abs(r - 1.0) > eps) clipped += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.loss = -surrogate * inv;
  out.mean_ratio = ratio_sum * inv;
  out.clip_fraction = clipped * inv;
  return out;
}

// mean_b (v_b - R_b)^2
inline double value_mse(const std::vector<double>& values, const std::vector<double>& returns) {
  require(!values.empty() && values.size() == returns.size(), "value_mse: inputs must align");
  double s = 0.0;
  for (std::size_t b = 0; b < values.size(); ++b) s += (values[b] - returns[b]) * (values[b] - returns[b]);
  return s / static_cast<double>(values.size());
}

// 1 - Var(R - V) / Var(R); 0 when the returns are constant.
inline double explained_variance(const std::vector<double>& values, const std::vector<double>& returns) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  auto var = [n](const std::vector<double>& x) {
    double m = 0.0, v = 0.0;
    for (double a : x) m += a;
    m /= static_cast<double>(n);
    for (double a : x) v += (a - m) * (a - m);
    return v / static_cast<double>(n);
  };
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) resid[i] = returns[i] - values[i];
  const double vr = var(returns);
  return vr > 0.0 ? 1.0 - var(resid) / vr : 0.0;
}

}  // namespace mash::rl
