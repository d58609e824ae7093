#pragma once

// Fixed-architecture multilayer perceptron with hand-written reverse mode.
//
// Batched evaluation stores one sample per column, so a batch of B inputs of
// width n is an n x B matrix.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mash/errors.hpp"

namespace mash::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Activation { Tanh, Identity };

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;    // out
  Activation activation = Activation::Identity;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

// Named view of one parameter tensor, used by the optimizer and serializer.
// Data is laid out column-major, matching Eigen storage.
template <typename Scalar>
struct TensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<Scalar> data;
};

template <typename Scalar>
struct Mlp {
  std::vector<DenseLayer<Scalar>> layers;

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  // Layer widths including input and output, e.g. {46, 256, 256, 256, 6}.
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w;
    if (layers.empty()) return w;
    w.push_back(in_dim());
    for (const auto& l : layers) w.push_back(l.out_dim());
    return w;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  void validate() const {
    require(!layers.empty(), "mlp: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      require(l.bias.size() == l.weight.rows(), "mlp: bias/weight mismatch in layer " + std::to_string(i));
      if (i + 1 < layers.size())
        require(l.out_dim() == layers[i + 1].in_dim(), "mlp: layer " + std::to_string(i) + " does not compose");
      require(l.weight.allFinite() && l.bias.allFinite(), "mlp: non-finite parameter in layer " + std::to_string(i));
    }
  }

  Mlp zeros_like() const {
    Mlp z;
    for (const auto& l : layers)
      z.layers.push_back({Matrix<Scalar>::Zero(l.weight.rows(), l.weight.cols()),
                          Vector<Scalar>::Zero(l.bias.size()), l.activation});
    return z;
  }

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out;
    for (const auto& l : layers)
      out.layers.push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>(), l.activation});
    return out;
  }

  std::vector<TensorRef<Scalar>> tensors(const std::string& prefix) {
    std::vector<TensorRef<Scalar>> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string base = prefix + ".layer" + std::to_string(i);
      out.push_back({base + ".weight",
                     {static_cast<std::size_t>(l.weight.rows()), static_cast<std::size_t>(l.weight.cols())},
                     std::span<Scalar>(l.weight.data(), static_cast<std::size_t>(l.weight.size()))});
      out.push_back({base + ".bias",
                     {static_cast<std::size_t>(l.bias.size())},
                     std::span<Scalar>(l.bias.data(), static_cast<std::size_t>(l.bias.size()))});
    }
    return out;
  }
};

// Layer inputs and pre-activation outputs retained for the backward pass.
template <typename Scalar>
struct MlpCache {
  std::vector<Matrix<Scalar>> inputs;   // inputs[i] feeds layer i
  std::vector<Matrix<Scalar>> outputs;  // post-activation output of layer i
};

template <typename Scalar>
struct MlpGradient {
  Mlp<Scalar> params;
  Matrix<Scalar> input;  // same shape as the forward input
};

namespace detail {

template <typename Scalar>
void apply_activation(Activation a, Matrix<Scalar>& m) {
  if (a == Activation::Tanh) m = m.array().tanh().matrix();
}

}  // namespace detail

template <typename Scalar>
Matrix<Scalar> mlp_forward_batch(const Mlp<Scalar>& net, const Matrix<Scalar>& input,
                                 MlpCache<Scalar>* cache = nullptr) {
  require(!net.layers.empty(), "mlp_forward: empty network");
  require(static_cast<std::size_t>(input.rows()) == net.in_dim(),
          "mlp_forward: input width " + std::to_string(input.rows()) + " != " + std::to_string(net.in_dim()));
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Matrix<Scalar> x = input;
  for (const auto& layer : net.layers) {
    Matrix<Scalar> y = layer.weight * x;
    y.colwise() += layer.bias;
    detail::apply_activation(layer.activation, y);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->outputs.push_back(y);
    }
    x = std::move(y);
  }
  return x;
}

template <typename Scalar>
Vector<Scalar> mlp_forward(const Mlp<Scalar>& net, const Vector<Scalar>& input) {
  return mlp_forward_batch<Scalar>(net, Matrix<Scalar>(input));
}

// Gradients of sum_b <output_b, output_grad_b> with respect to all parameters
// (summed over the batch) and, unless with_input is false, to every input column.
template <typename Scalar>
MlpGradient<Scalar> mlp_backward_batch(const Mlp<Scalar>& net, const MlpCache<Scalar>& cache,
                                       const Matrix<Scalar>& output_grad, bool with_input = true) {
  require(cache.inputs.size() == net.layers.size(), "mlp_backward: cache does not match network");
  require(static_cast<std::size_t>(output_grad.rows()) == net.out_dim() &&
              output_grad.cols() == cache.outputs.back().cols(),
          "mlp_backward: output gradient shape mismatch");
  MlpGradient<Scalar> g{net.zeros_like(), {}};
  Matrix<Scalar> delta = output_grad;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const auto& layer = net.layers[k];
    if (layer.activation == Activation::Tanh)
      delta = (delta.array() * (Scalar(1) - cache.outputs[k].array().square())).matrix();
    g.params.layers[k].weight.noalias() = delta * cache.inputs[k].transpose();
    g.params.layers[k].bias = delta.rowwise().sum();
    if (k > 0 || with_input) delta = layer.weight.transpose() * delta;
  }
  if (with_input) g.input = std::move(delta);
  return g;
}

template <typename Scalar>
MlpGradient<Scalar> mlp_backward(const Mlp<Scalar>& net, const Vector<Scalar>& input,
                                 const Vector<Scalar>& output_grad) {
  require(static_cast<std::size_t>(output_grad.size()) == net.out_dim(), "mlp_backward: output gradient width");
  MlpCache<Scalar> cache;
  mlp_forward_batch<Scalar>(net, Matrix<Scalar>(input), &cache);
  return mlp_backward_batch<Scalar>(net, cache, Matrix<Scalar>(output_grad));
}

// Accumulates b into a (same architecture).
template <typename Scalar>
void accumulate(Mlp<Scalar>& a, const Mlp<Scalar>& b) {
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    a.layers[i].weight += b.layers[i].weight;
    a.layers[i].bias += b.layers[i].bias;
  }
}

// Random matrix with orthonormal rows or columns scaled by gain.
template <typename Scalar, typename Rng>
Matrix<Scalar> orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t big = std::max(rows, cols);
  const std::size_t small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Fix the sign ambiguity so the distribution is uniform over orthogonal matrices.
  Eigen::MatrixXd r = qr.matrixQR().topRows(small).template triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  Eigen::MatrixXd w = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
  return (gain * w).template cast<Scalar>();
}

// Builds an MLP with tanh hidden layers and an identity output layer.
template <typename Scalar, typename Rng>
Mlp<Scalar> make_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden, std::size_t out_dim,
                     double output_gain, Rng& rng, double hidden_gain = std::sqrt(2.0)) {
  require(in_dim > 0 && out_dim > 0, "make_mlp: zero-width input or output");
  Mlp<Scalar> net;
  std::size_t prev = in_dim;
  for (std::size_t width : hidden) {
    net.layers.push_back({orthogonal_init<Scalar>(width, prev, hidden_gain, rng), Vector<Scalar>::Zero(width),
                          Activation::Tanh});
    prev = width;
  }
  net.layers.push_back({orthogonal_init<Scalar>(out_dim, prev, output_gain, rng), Vector<Scalar>::Zero(out_dim),
                        Activation::Identity});
  return net;
}

}  // namespace mash::nn
