#pragma once

#include "mmif/model/encoder.hpp"

#include <array>
#include <optional>

namespace mmif::model {

/// gamma * LN_c(f) + beta, with gamma and beta from convs over the condition maps.
template <typename Scalar>
struct ADN {
  Conv2d<Scalar> gamma, beta;

  ADN() = default;
  ADN(Index channels, Index cond_channels, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& f, const Var<Scalar>& cond) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Per-channel affine from pooled condition features applied to instance-normalized input.
template <typename Scalar>
struct AdaINNorm {
  Linear<Scalar> gamma, beta;

  AdaINNorm() = default;
  AdaINNorm(Index channels, Index cond_channels, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& f, const Var<Scalar>& cond) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Spatial affine from a shared hidden conv over the condition, on instance-normalized input.
template <typename Scalar>
struct SpadeNorm {
  Conv2d<Scalar> hidden, gamma, beta;

  SpadeNorm() = default;
  SpadeNorm(Index channels, Index cond_channels, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& f, const Var<Scalar>& cond) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Patch attention with softmax rows scaled by a per-key-patch gate.
/// q, k, v: (B,C,h,w); gate: (B,1,h/p,w/p). Scores are divided by sqrt(p*p*C/heads).
template <typename Scalar>
Var<Scalar> gma_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, const Var<Scalar>& gate,
                          int patch, int heads);

template <typename Scalar>
struct GMA {
  Conv2d<Scalar> query, key, value;
  Conv2d<Scalar> gate_conv;  // [gating; mask] pooled to the patch grid -> 1
  int patch = 1;
  int heads = 1;

  GMA() = default;
  GMA(Index channels, int patch, int heads, Rng& rng);
  /// The per-patch gate M' from the (B,2,h,w) gate input.
  Var<Scalar> patch_gate(const Var<Scalar>& gate_input) const;
  Var<Scalar> operator()(const Var<Scalar>& fused, const Var<Scalar>& gate_input) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// conv_v(x) * sigmoid(conv_g(x)); both 1x1.
template <typename Scalar>
struct GatedFeedForward {
  Conv2d<Scalar> value, gate;

  GatedFeedForward() = default;
  GatedFeedForward(Index channels, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Merges the three branches into the inpainting branch at one scale.
template <typename Scalar>
struct FusionBlock {
  FusionKind kind = FusionKind::GmaAdn;
  ADN<Scalar> adn;
  AdaINNorm<Scalar> adain;
  SpadeNorm<Scalar> spade;
  GMA<Scalar> gma;
  Conv2d<Scalar> concat1, concat2;
  GatedFeedForward<Scalar> ffn;

  FusionBlock() = default;
  FusionBlock(FusionKind kind, Index channels, Index cond_channels, int patch, int heads, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& f_inpt, const Var<Scalar>& f_edge, const Var<Scalar>& f_seg,
                         const Var<Scalar>& cond, const Var<Scalar>& gate_input) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

template <typename Scalar>
struct ScalePrediction {
  Var<Scalar> rgb;   // (B,3,h,w), tanh
  Var<Scalar> edge;  // (B,1,h,w), sigmoid
  Var<Scalar> seg;   // (B,K,h,w), softmax over K
  /// [seg; edge; rgb] along channels.
  Var<Scalar> stacked() const { return concat<Scalar>({seg, edge, rgb}, 1); }
};

template <typename Scalar>
struct DecoderOutput {
  std::array<ScalePrediction<Scalar>, 3> preds;  // strides 4, 2, 1
  std::array<Var<Scalar>, 3> taps;               // inpainting-branch features at the same scales
};

/// One upsampling trunk: two skip-fused stages then three prediction stages, each with a head.
template <typename Scalar>
struct Branch {
  std::array<Conv2d<Scalar>, 5> ups;
  std::array<Conv2d<Scalar>, 3> heads;

  Branch() = default;
  Branch(const std::vector<int>& enc, Index full, Index head_channels, Rng& rng);
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Ground-truth structure maps for one scale, used by the `gt` guidance switch.
template <typename Scalar>
struct GuideMaps {
  std::array<Var<Scalar>, 3> edge;    // (B,1,h,w)
  std::array<Var<Scalar>, 3> onehot;  // (B,K,h,w)
};

template <typename Scalar>
struct Decoder {
  ModelConfig cfg;
  Branch<Scalar> inpt, edge, seg;
  Conv2d<Scalar> image_in;  // masked RGB into the full-resolution inpainting stage
  std::array<FusionBlock<Scalar>, 3> fusion;

  Decoder() = default;
  Decoder(const ModelConfig& cfg, Rng& rng);
  /// `mask` is (B,1,s,s); `guide` is required only for ground-truth guidance.
  DecoderOutput<Scalar> operator()(const EncoderOutput<Scalar>& enc, const Var<Scalar>& masked_image,
                                   const Var<Scalar>& mask, const GuideMaps<Scalar>* guide = nullptr) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

}  // namespace mmif::model
