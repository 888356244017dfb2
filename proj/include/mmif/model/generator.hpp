#pragma once

#include "mmif/core/nn.hpp"
#include "mmif/model/config.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>

namespace mmif::model {

/// Modulate input channels by `style` (B,I), convolve with shared weights, then (optionally)
/// demodulate each output channel by 1/sqrt(sum W^2 s^2 + 1e-8). No bias.
template <typename Scalar>
Var<Scalar> modulated_conv(const Var<Scalar>& x, const Var<Scalar>& style, const Var<Scalar>& weight, bool demodulate);

/// z -> w: pixel norm then leaky-ReLU linear layers.
template <typename Scalar>
struct MappingNetwork {
  std::vector<Linear<Scalar>> layers;

  MappingNetwork() = default;
  MappingNetwork(Index dim, int num_layers, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& z) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// One style-modulated layer: affine(w) -> style, modulated conv, noise, bias, activation.
template <typename Scalar>
struct StyledConv {
  Linear<Scalar> affine;
  Var<Scalar> weight;        // (O,I,k,k)
  Var<Scalar> bias;          // (1,O,1,1)
  Var<Scalar> noise_scale;   // (1,1,1,1), starts at 0
  bool demodulate = true;
  bool activate = true;

  StyledConv() = default;
  StyledConv(Index w_dim, Index in, Index out, int kernel, bool demod, bool activate, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& noise) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Skip-RGB synthesis network. Layer l of w* drives style layer l.
template <typename Scalar>
struct Generator {
  int resolution = 64;
  bool noise = true;
  int gen_base = 32;
  int gen_max = 512;
  MappingNetwork<Scalar> mapping;
  Var<Scalar> constant_input;  // (1,C,4,4)
  std::vector<StyledConv<Scalar>> convs;  // 4x4 conv, then two per resolution
  std::vector<StyledConv<Scalar>> to_rgb;

  Generator() = default;
  Generator(const ModelConfig& cfg, Rng& rng);

  int num_layers() const;
  /// min(gen_max, gen_base * s / res)
  Index channels_at(int res) const;
  /// `taps` maps a resolution to a (B,C_res,res,res) feature added after that block's first conv.
  /// Noise images are drawn from `noise_seed` when noise is on.
  Var<Scalar> synthesize(const Var<Scalar>& w_star, const std::map<int, Var<Scalar>>& taps,
                         std::uint64_t noise_seed) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// 1x1 projections from decoder taps to generator widths (trained with the encoder).
template <typename Scalar>
struct TapProjection {
  std::array<Conv2d<Scalar>, 3> proj;
  std::array<int, 3> resolutions{};

  TapProjection() = default;
  TapProjection(const ModelConfig& cfg, const Generator<Scalar>& g, Rng& rng);
  std::map<int, Var<Scalar>> operator()(const std::array<Var<Scalar>, 3>& taps) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

}  // namespace mmif::model
