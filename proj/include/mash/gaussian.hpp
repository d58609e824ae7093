#pragma once

// Diagonal Gaussian action distribution with a state-independent log std.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mash/errors.hpp"
#include "mash/mlp.hpp"

namespace mash::nn {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 1.0;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;       // 0.5 log(2 pi)
inline constexpr double kHalfLog2PiE = 1.41893853320467274178;      // 0.5 log(2 pi e)

template <typename Scalar>
struct GaussianHead {
  Vector<Scalar> mean;
  Vector<Scalar> log_std;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

template <typename Scalar>
Scalar clamp_log_std(Scalar v) {
  return std::clamp(v, Scalar(kLogStdMin), Scalar(kLogStdMax));
}

// Log density of `action`, optionally restricted to dims [first, first + count).
template <typename Scalar>
Scalar gaussian_log_prob(const GaussianHead<Scalar>& head, const Vector<Scalar>& action, std::size_t first,
                         std::size_t count) {
  require(head.log_std.size() == head.mean.size(), "gaussian_log_prob: mean/log_std width mismatch");
  require(action.size() == head.mean.size(), "gaussian_log_prob: action width " + std::to_string(action.size()) +
                                                  " != " + std::to_string(head.mean.size()));
  require(first + count <= head.dim(), "gaussian_log_prob: slice out of bounds");
  Scalar total = 0;
  for (std::size_t d = first; d < first + count; ++d) {
    const Scalar z = (action[d] - head.mean[d]) / std::exp(head.log_std[d]);
    total += Scalar(-0.5) * z * z - head.log_std[d] - Scalar(kHalfLog2Pi);
  }
  return total;
}

template <typename Scalar>
Scalar gaussian_log_prob(const GaussianHead<Scalar>& head, const Vector<Scalar>& action) {
  return gaussian_log_prob(head, action, 0, head.dim());
}

template <typename Scalar>
Scalar gaussian_entropy(const GaussianHead<Scalar>& head) {
  Scalar total = 0;
  for (Eigen::Index d = 0; d < head.log_std.size(); ++d) total += head.log_std[d] + Scalar(kHalfLog2PiE);
  return total;
}

template <typename Scalar>
struct GaussianSample {
  Vector<Scalar> action;
  Scalar log_prob;
};

// action = mean + std * z with z drawn coordinate by coordinate from `rng`.
template <typename Scalar, typename Rng>
GaussianSample<Scalar> gaussian_sample(const GaussianHead<Scalar>& head, Rng& rng) {
  require(head.log_std.size() == head.mean.size(), "gaussian_sample: mean/log_std width mismatch");
  std::normal_distribution<double> normal(0.0, 1.0);
  GaussianSample<Scalar> s{Vector<Scalar>(head.mean.size()), Scalar(0)};
  for (Eigen::Index d = 0; d < head.mean.size(); ++d)
    s.action[d] = head.mean[d] + std::exp(head.log_std[d]) * static_cast<Scalar>(normal(rng));
  s.log_prob = gaussian_log_prob(head, s.action);
  return s;
}

// Partial derivatives of the slice log-prob with respect to the mean and log std.
template <typename Scalar>
void gaussian_log_prob_grad(const GaussianHead<Scalar>& head, const Vector<Scalar>& action, std::size_t first,
                            std::size_t count, Scalar weight, Eigen::Ref<Vector<Scalar>> d_mean,
                            Eigen::Ref<Vector<Scalar>> d_log_std) {
  for (std::size_t d = first; d < first + count; ++d) {
    const Scalar inv_std = std::exp(-head.log_std[d]);
    const Scalar z = (action[d] - head.mean[d]) * inv_std;
    d_mean[d] += weight * z * inv_std;
    d_log_std[d] += weight * (z * z - Scalar(1));
  }
}

}  // namespace mash::nn
