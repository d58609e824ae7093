#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mash/errors.hpp"
#include "mash/mlp.hpp"

namespace mash::nn {

struct AdamHyper {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamHyper hyper;
  std::int64_t step = 0;
  std::vector<std::vector<Scalar>> first;   // one accumulator per tensor
  std::vector<std::vector<Scalar>> second;

  static AdamState for_tensors(const std::vector<TensorRef<Scalar>>& params, AdamHyper h) {
    AdamState s;
    s.hyper = h;
    for (const auto& t : params) {
      s.first.emplace_back(t.data.size(), Scalar(0));
      s.second.emplace_back(t.data.size(), Scalar(0));
    }
    return s;
  }
};

template <typename Scalar>
double global_norm(const std::vector<TensorRef<Scalar>>& grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (Scalar v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

// Rescales grads so their joint L2 norm is at most max_norm. Returns the norm before clipping.
template <typename Scalar>
double clip_global_norm(const std::vector<TensorRef<Scalar>>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0) {
    const Scalar factor = static_cast<Scalar>(max_norm / (norm + 1e-12));
    for (const auto& g : grads)
      for (Scalar& v : g.data) v *= factor;
  }
  return norm;
}

// One bias-corrected Adam descent step: params -= lr * mhat / (sqrt(vhat) + eps).
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, const std::vector<TensorRef<Scalar>>& params,
               const std::vector<TensorRef<Scalar>>& grads) {
  require(params.size() == grads.size() && params.size() == state.first.size(),
          "adam_step: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].data.size() == grads[i].data.size() && params[i].data.size() == state.first[i].size(),
            "adam_step: shape mismatch for " + params[i].name);
    for (Scalar v : grads[i].data)
      if (!std::isfinite(static_cast<double>(v)))
        throw TrainingDivergence("non-finite gradient in tensor " + params[i].name);
  }
  ++state.step;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const Scalar b1 = static_cast<Scalar>(h.beta1), b2 = static_cast<Scalar>(h.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(params[i].data.size());
    Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> p(params[i].data.data(), n);
    Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> g(grads[i].data.data(), n);
    Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> m(state.first[i].data(), n);
    Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> v(state.second[i].data(), n);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g * g;
    p -= (h.lr * (m.template cast<double>() / c1) / ((v.template cast<double>() / c2).sqrt() + h.eps))
             .template cast<Scalar>();
  }
}

}  // namespace mash::nn
