#pragma once

// Locomotion evaluation metrics: convergence time, action smoothness, torso
// stability, limb coordination and the phase extraction they rely on.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "mash/errors.hpp"

namespace mash::metrics {

inline constexpr double kPi = std::numbers::pi;

// Wraps to (-pi, pi].
inline double wrap_angle(double a) { return a - 2.0 * kPi * std::ceil((a - kPi) / (2.0 * kPi)); }

// Centered moving average; the window shrinks symmetrically near the ends.
inline std::vector<double> smooth(const std::vector<double>& x, std::size_t window) {
  require(window >= 1, "smooth: window must be >= 1");
  const std::size_t half = window / 2;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t reach = std::min({half, i, x.size() - 1 - i});
    double s = 0.0;
    for (std::size_t j = i - reach; j <= i + reach; ++j) s += x[j];
    out[i] = s / static_cast<double>(2 * reach + 1);
  }
  return out;
}

// First 1-based iteration from which the smoothed curve stays at or above 95%
// of its asymptote (mean of the final 10%). Returns the curve length if that
// only happens at the last point, and 1 for a flat curve.
inline std::size_t convergence_time(const std::vector<double>& curve, std::size_t window = 51) {
  require(window >= 1, "convergence_time: window must be >= 1");
  if (curve.size() < window) throw InsufficientData("convergence_time: curve shorter than the smoothing window");
  if (std::all_of(curve.begin(), curve.end(), [&](double v) { return v == curve.front(); })) return 1;
  const auto s = smooth(curve, window);
  const std::size_t tail = std::max<std::size_t>(1, s.size() / 10);
  double asym = 0.0;
  for (std::size_t i = s.size() - tail; i < s.size(); ++i) asym += s[i];
  asym /= static_cast<double>(tail);
  const double threshold = asym - 0.05 * std::abs(asym);
  std::size_t first = s.size();
  for (std::size_t i = s.size(); i-- > 0;) {
    if (s[i] < threshold) break;
    first = i;
  }
  return std::min(first + 1, s.size());
}

// (1/T) sum_t sum_i (a_{i,t+1} - a_{i,t})^2 with one row per time step.
inline double action_smoothness(const Eigen::MatrixXd& actions) {
  const auto T = actions.rows();
  if (T < 2) throw InsufficientData("action_smoothness: need at least 2 steps");
  return (actions.bottomRows(T - 1) - actions.topRows(T - 1)).squaredNorm() / static_cast<double>(T);
}

// (1/T) sum_t sum_i (a_{i,t+2} - 2 a_{i,t+1} + a_{i,t})^2
inline double action_smoothness_second(const Eigen::MatrixXd& actions) {
  const auto T = actions.rows();
  if (T < 3) throw InsufficientData("action_smoothness_second: need at least 3 steps");
  return (actions.bottomRows(T - 2) - 2.0 * actions.middleRows(1, T - 2) + actions.topRows(T - 2)).squaredNorm() /
         static_cast<double>(T);
}

inline double population_variance(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  // Corrected two-pass sum.
  double s = 0.0, c = 0.0;
  for (double v : x) {
    s += (v - m) * (v - m);
    c += v - m;
  }
  const double n = static_cast<double>(x.size());
  return std::max(0.0, (s - c * c / n) / n);
}

struct StabilityWeights {
  double w_h = 1.0;      // 1/m^2
  double w_theta = 1.0;  // 1/rad^2
};

// w_h Var(h) + w_theta sum_c Var(theta_c)
inline double torso_stability(const std::vector<double>& heights, const std::vector<std::vector<double>>& angles,
                              StabilityWeights w = {}) {
  if (heights.size() < 2) throw InsufficientData("torso_stability: need at least 2 samples");
  require(w.w_h >= 0 && w.w_theta >= 0, "torso_stability: weights must be non-negative");
  double s = w.w_h * population_variance(heights);
  for (const auto& c : angles) {
    require(c.size() == heights.size(), "torso_stability: angle series length mismatch");
    s += w.w_theta * population_variance(c);
  }
  return s;
}

inline double torso_stability(const std::vector<double>& heights, const std::vector<double>& pitch,
                              StabilityWeights w = {}) {
  return torso_stability(heights, std::vector<std::vector<double>>{pitch}, w);
}

// (1/T) sum_t |wrap(phi_left - phi_right - phi_target)|
inline double limb_coordination(const std::vector<double>& left, const std::vector<double>& right, double target) {
  require(left.size() == right.size(), "limb_coordination: phase series must align");
  if (left.empty()) throw InsufficientData("limb_coordination: empty phase series");
  double s = 0.0;
  for (std::size_t t = 0; t < left.size(); ++t) s += std::abs(wrap_angle(left[t] - right[t] - target));
  return s / static_cast<double>(left.size());
}

struct Spectrum {
  double frequency = 0.0;  // Hz, refined dominant frequency
  double peak_power = 0.0;
  double median_power = 0.0;
};

// Dominant frequency of the zero-mean series via a direct DFT, refined by a
// parabola through the peak bin and its neighbours.
inline Spectrum dominant_frequency(const std::vector<double>& x, double dt) {
  const std::size_t n = x.size();
  if (n < 8) throw InsufficientData("extract_phase: need at least 8 samples");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  const std::size_t bins = n / 2;
  std::vector<double> power(bins + 1, 0.0);
  for (std::size_t k = 1; k <= bins; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t)
      acc += (x[t] - mean) * std::polar(1.0, -2.0 * kPi * static_cast<double>(k * t % n) / static_cast<double>(n));
    power[k] = std::norm(acc);
  }
  std::size_t peak = 1;
  for (std::size_t k = 2; k <= bins; ++k)
    if (power[k] > power[peak]) peak = k;
  std::vector<double> sorted(power.begin() + 1, power.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  Spectrum s;
  s.peak_power = power[peak];
  s.median_power = sorted[sorted.size() / 2];
  double offset = 0.0;
  if (peak > 1 && peak < bins) {
    const double a = std::sqrt(power[peak - 1]), b = std::sqrt(power[peak]), c = std::sqrt(power[peak + 1]);
    const double denom = a - 2.0 * b + c;
    if (denom != 0.0) offset = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
  }
  s.frequency = (static_cast<double>(peak) + offset) / (static_cast<double>(n) * dt);
  return s;
}

// Phase of a periodic joint trajectory: atan2(x(t), x(t + P/4)) on the
// zero-mean series, with P the dominant period. Near the end the shifted copy
// is taken as -x(t - P/4). Phases are wrapped to (-pi, pi].
inline std::vector<double> extract_phase(const std::vector<double>& traj, double dt) {
  require(dt > 0, "extract_phase: dt must be positive");
  const auto [lo, hi] = std::minmax_element(traj.begin(), traj.end());
  if (!traj.empty() && *hi - *lo <= 1e-9 * std::max(1.0, std::abs(*hi)))
    throw AperiodicGait("extract_phase: constant trajectory");
  const auto spec = dominant_frequency(traj, dt);
  if (!(spec.peak_power > 0.0) || spec.peak_power < 3.0 * spec.median_power)
    throw AperiodicGait("extract_phase: no dominant periodic component (peak power " + std::to_string(spec.peak_power) +
                        ", median " + std::to_string(spec.median_power) + ")");
  const std::size_t n = traj.size();
  if (spec.frequency * static_cast<double>(n) * dt < 2.0 - 1e-9)
    throw InsufficientData("extract_phase: trajectory spans fewer than 2 cycles");
  double mean = 0.0;
  for (double v : traj) mean += v;
  mean /= static_cast<double>(n);
  auto at = [&](double pos) {
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(i);
    const double a = traj[i] - mean;
    const double b = i + 1 < n ? traj[i + 1] - mean : a;
    return a + f * (b - a);
  };
  const double quarter = 0.25 / (spec.frequency * dt);  // samples
  std::vector<double> phase(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double ahead = static_cast<double>(t) + quarter;
    const double cosine = ahead <= static_cast<double>(n - 1) ? at(ahead) : -at(static_cast<double>(t) - quarter);
    phase[t] = wrap_angle(std::atan2(traj[t] - mean, cosine));
  }
  return phase;
}

}  // namespace mash::metrics
