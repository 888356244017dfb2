#pragma once

#include "mmif/core/nn.hpp"
#include "mmif/model/config.hpp"

#include <vector>

namespace mmif::model {

/// Feature map with a single-channel gate in [0,1].
template <typename Scalar>
struct GatedFeature {
  Var<Scalar> f;  // (B,C,h,w)
  Var<Scalar> g;  // (B,1,h,w)
};

/// f = elu(conv_f(x)) * g, g = sigmoid(conv_g(x)).
template <typename Scalar>
struct GatedConv {
  Conv2d<Scalar> feat;
  Conv2d<Scalar> gate;

  GatedConv() = default;
  GatedConv(Index in, Index out, int kernel, Rng& rng, int stride = 1, int dilation = 1);
  GatedFeature<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Non-local block over all positions, residual weight starting at zero.
template <typename Scalar>
struct SelfAttention2d {
  Conv2d<Scalar> query, key, value;
  Var<Scalar> gamma;

  SelfAttention2d() = default;
  SelfAttention2d(Index channels, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

template <typename Scalar>
struct BackboneOutput {
  std::vector<Var<Scalar>> skips;  // strides 2, 4, 8, 16
  GatedFeature<Scalar> out;        // stride 32
};

/// Five stride-2 layers; attention after the fourth; the fifth is gated.
template <typename Scalar>
struct Backbone {
  std::vector<Conv2d<Scalar>> convs;  // layers 1-4
  SelfAttention2d<Scalar> attention;
  GatedConv<Scalar> tail;

  Backbone() = default;
  Backbone(Index in_channels, const std::vector<int>& channels, Rng& rng);
  BackboneOutput<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Adaptive contextual bottleneck: dilated paths mixed by per-location softmax weights.
template <typename Scalar>
struct ACBLayer {
  std::vector<int> rates;
  std::vector<Conv2d<Scalar>> paths;       // C -> C, dilation r
  std::vector<Conv2d<Scalar>> path_gates;  // [f_r; g; g_prev] -> Cg
  Conv2d<Scalar> fc1, fc2;                 // shared 1x1 MLP on pooled gate maps
  Conv2d<Scalar> out_gate;                 // f_out -> 1

  ACBLayer() = default;
  ACBLayer(Index channels, const std::vector<int>& rates, Index gate_channels, Index fc_hidden, Rng& rng);

  GatedFeature<Scalar> operator()(const GatedFeature<Scalar>& in, const Var<Scalar>& g_prev) const;
  /// Per-path outputs f_r and their mixing weights (B,|R|,h,w).
  std::vector<Var<Scalar>> path_features(const Var<Scalar>& f) const;
  Var<Scalar> path_weights(const std::vector<Var<Scalar>>& f_r, const Var<Scalar>& g, const Var<Scalar>& g_prev) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Two-conv residual block used by the RES ablation.
template <typename Scalar>
struct ResLayer {
  Conv2d<Scalar> conv1, conv2, out_gate;

  ResLayer() = default;
  ResLayer(Index channels, Rng& rng);
  GatedFeature<Scalar> operator()(const GatedFeature<Scalar>& in) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Split-transform-merge block with a learned blend against the input (AOT-like ablation).
template <typename Scalar>
struct AOTLayer {
  std::vector<Conv2d<Scalar>> paths;  // C -> C/|R| each
  Conv2d<Scalar> fuse, blend, out_gate;

  AOTLayer() = default;
  AOTLayer(Index channels, const std::vector<int>& rates, Rng& rng);
  GatedFeature<Scalar> operator()(const GatedFeature<Scalar>& in) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

template <typename Scalar>
struct Bottleneck {
  BottleneckKind kind = BottleneckKind::ACB;
  std::vector<ACBLayer<Scalar>> acb;
  std::vector<ResLayer<Scalar>> res;
  std::vector<AOTLayer<Scalar>> aot;

  Bottleneck() = default;
  Bottleneck(const ModelConfig& cfg, Rng& rng);
  /// T sequential layers; ACB layers see (g_t, g_{t-1}) with g_{-1} = g_0.
  GatedFeature<Scalar> operator()(const GatedFeature<Scalar>& g0) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

template <typename Scalar>
struct EncoderOutput {
  std::vector<Var<Scalar>> skips;
  GatedFeature<Scalar> initial;   // backbone tail
  GatedFeature<Scalar> enhanced;  // after the bottleneck stack
};

template <typename Scalar>
struct Encoder {
  Backbone<Scalar> backbone;
  Bottleneck<Scalar> bottleneck;

  Encoder() = default;
  Encoder(const ModelConfig& cfg, Rng& rng);
  EncoderOutput<Scalar> operator()(const Var<Scalar>& input) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

}  // namespace mmif::model
