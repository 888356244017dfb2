#pragma once

#include "mmif/core/ops.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace mmif {

using Rng = std::mt19937_64;

template <typename Scalar>
using ParamList = std::vector<std::pair<std::string, Var<Scalar>>>;

template <typename Scalar>
Tensor<Scalar> normal_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor<Scalar> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Var<Scalar> parameter(Tensor<Scalar> t) {
  return Var<Scalar>(std::move(t), true);
}

/// 2-D convolution layer with LeCun-normal init (std = 1/sqrt(fan_in)).
template <typename Scalar>
struct Conv2d {
  Var<Scalar> weight;
  Var<Scalar> bias;
  ConvSpec spec;

  Conv2d() = default;
  Conv2d(Index in, Index out, int kernel, Rng& rng, ConvSpec s = {}, bool with_bias = true) : spec(s) {
    const double fan_in = static_cast<double>(in * kernel * kernel);
    weight = parameter(normal_tensor<Scalar>(Shape{out, in, kernel, kernel}, rng, 1.0 / std::sqrt(fan_in)));
    if (with_bias) bias = parameter(Tensor<Scalar>(Shape{out}));
  }
  /// "Same" padding for odd kernels at the given dilation and stride.
  static Conv2d same(Index in, Index out, int kernel, Rng& rng, int stride = 1, int dilation = 1) {
    return Conv2d(in, out, kernel, rng, ConvSpec{stride, dilation * (kernel - 1) / 2, dilation});
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return conv2d(x, weight, bias, spec); }
  Index in_channels() const { return weight.dim(1); }
  Index out_channels() const { return weight.dim(0); }

  void collect(ParamList<Scalar>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  }
};

/// y = x W + b for x of shape (B, in).
template <typename Scalar>
struct Linear {
  Var<Scalar> weight;  // (in, out)
  Var<Scalar> bias;    // (1, out)

  Linear() = default;
  Linear(Index in, Index out, Rng& rng, double gain = 1.0) {
    weight = parameter(normal_tensor<Scalar>(Shape{in, out}, rng, gain / std::sqrt(static_cast<double>(in))));
    bias = parameter(Tensor<Scalar>(Shape{1, out}));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return add(matmul(x, weight), bias); }

  void collect(ParamList<Scalar>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// Zero-mean, unit-variance normalization over one axis (no affine). LN over
/// channels uses axis 1 of NCHW; instance norm of latent rows uses the last axis.
template <typename Scalar>
Var<Scalar> normalize_axis(const Var<Scalar>& x, int axis, Scalar eps) {
  Var<Scalar> centered = sub(x, mean_axis(x, axis));
  Var<Scalar> var = mean_axis(square(centered), axis);
  return div(centered, sqrt(add_scalar(var, eps)));
}

/// Per-channel normalization over spatial positions of an NCHW tensor.
template <typename Scalar>
Var<Scalar> instance_norm2d(const Var<Scalar>& x, Scalar eps) {
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return reshape(normalize_axis(reshape(x, Shape{b, c, h * w}), 2, eps), Shape{b, c, h, w});
}

template <typename Scalar>
void zero_grads(const ParamList<Scalar>& params) {
  for (const auto& [name, p] : params) p.zero_grad();
}

template <typename Scalar>
void set_trainable(const ParamList<Scalar>& params, bool trainable) {
  for (const auto& [name, p] : params) p.set_requires_grad(trainable);
}

template <typename Scalar>
Index count_parameters(const ParamList<Scalar>& params) {
  Index n = 0;
  for (const auto& [name, p] : params) n += p.size();
  return n;
}

}  // namespace mmif
