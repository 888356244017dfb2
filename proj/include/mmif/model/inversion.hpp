#pragma once

#include "mmif/core/nn.hpp"
#include "mmif/model/config.hpp"

#include <array>
#include <cstdint>
#include <functional>

namespace mmif::model {

/// 2*log2(s) - 2 style-modulation layers for a generator of resolution s.
int num_style_layers(int resolution);

/// Level (0 coarse, 1 middle, 2 fine) driving style layer l: ceil(L/3) coarse, ceil(L/3) middle, the rest fine.
int style_level(int layer, int num_layers);

/// Stride-2 3x3 convs with leaky ReLU down to 1x1, then a linear map to w_dim.
template <typename Scalar>
struct Map2Style {
  std::vector<Conv2d<Scalar>> convs;
  Linear<Scalar> out;

  Map2Style() = default;
  Map2Style(Index in_channels, Index spatial, Index hidden, Index w_dim, Rng& rng);
  /// (B,C,h,w) -> (B,w_dim)
  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Two-layer map from a structure vector to a per-layer affine (sigma = 1 + delta, mu).
template <typename Scalar>
struct PremodLayer {
  Linear<Scalar> sigma1, sigma2, mu1, mu2;

  PremodLayer() = default;
  PremodLayer(Index w_dim, Index hidden, Rng& rng);
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// w*_l = sigma_l * IN(w'_r) + mu_l. w_prime, structure: (B,3,D); returns (B,L,D).
template <typename Scalar>
Var<Scalar> premodulate(const Var<Scalar>& w_prime, const Var<Scalar>& structure,
                        const std::vector<PremodLayer<Scalar>>& layers);

/// Affine-free variant used for checks: sigma and mu given as (B,L,D) tensors.
template <typename Scalar>
Var<Scalar> premodulate_affine(const Var<Scalar>& w_prime, const Var<Scalar>& sigma, const Var<Scalar>& mu);

template <typename Scalar>
struct StyleBundle {
  Var<Scalar> w_prime;    // (B,3,D)
  Var<Scalar> structure;  // (B,3,D)
  Var<Scalar> w_star;     // (B,L,D)
};

template <typename Scalar>
struct Inversion {
  std::array<Map2Style<Scalar>, 3> map2style;      // coarse, middle, fine taps
  std::array<Map2Style<Scalar>, 3> map2structure;  // decoder predictions at strides 4, 2, 1
  std::vector<PremodLayer<Scalar>> premod;

  Inversion() = default;
  Inversion(const ModelConfig& cfg, Rng& rng);
  /// taps: ACB output (s/32), backbone layer 4 (s/16), backbone layer 3 (s/8); preds: stacked [S;E;Y] per scale.
  StyleBundle<Scalar> operator()(const std::array<Var<Scalar>, 3>& taps, const std::array<Var<Scalar>, 3>& preds) const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

/// Online and target mean latent codes, both (L,D), with the update factor. Kept in double
/// so the geometric approach to the target is not swamped by rounding.
struct MeanLatentState {
  Tensor<double> online;
  Tensor<double> target;
  double tau = 0.001;
  std::uint64_t resamples = 0;
};

/// Draws a fresh target given the resample count (so resampling is reproducible).
using MeanLatentSampler = std::function<Tensor<double>(std::uint64_t resample_index)>;

inline constexpr double kResampleTolerance = 1e-6;

/// online <- (1 - tau) online + tau target; when max|online - target| < tolerance the online
/// code snaps to the old target and a new target is drawn. Returns true on resample.
bool soft_update(MeanLatentState& state, const MeanLatentSampler& sampler);

/// Mean of n mapped standard-normal draws, replicated to L rows.
/// `mapper` maps a (n,z_dim) batch of z to (n,D) in chunks.
Tensor<double> sample_mean_latent(const std::function<Tensor<float>(const Tensor<float>&)>& mapper, Index z_dim, int n,
                                  int num_layers, std::uint64_t seed);

}  // namespace mmif::model
