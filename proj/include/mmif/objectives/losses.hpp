#pragma once

#include "mmif/core/nn.hpp"
#include "mmif/model/decoder.hpp"

#include <array>
#include <map>
#include <stdexcept>
#include <string>

namespace mmif::objectives {

inline constexpr double kProbEps = 1e-7;

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Frozen dilated conv pyramid with fixed-seed random weights. Each tap is a ReLU output.
template <typename Scalar>
struct FeatureExtractor {
  std::vector<Conv2d<Scalar>> convs;
  std::vector<bool> is_tap;

  FeatureExtractor() = default;
  /// Widths (16, 32, 64) unless overridden; stride-2 layers alternate with dilated ones.
  explicit FeatureExtractor(std::uint64_t seed, Index base = 16);
  std::vector<Var<Scalar>> taps(const Var<Scalar>& image) const;
  /// Global-average-pooled last tap concatenated with pooled earlier taps: (B, d).
  Tensor<Scalar> embed(const Tensor<Scalar>& images) const;
};

/// Sum over taps of ||psi(a) - psi(b)||_2 / N (N = per-sample element count), averaged over the batch.
template <typename Scalar>
Var<Scalar> perceptual_loss(const std::vector<Var<Scalar>>& taps_a, const std::vector<Var<Scalar>>& taps_b);
template <typename Scalar>
Var<Scalar> perceptual_loss(const FeatureExtractor<Scalar>& ex, const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> l1_loss(const Var<Scalar>& a, const Var<Scalar>& b);
/// Mean binary cross-entropy with probabilities clamped to [eps, 1-eps].
template <typename Scalar>
Var<Scalar> bce_loss(const Var<Scalar>& prob, const Var<Scalar>& target);
/// Mean over pixels of -sum_k onehot_k log p_k; probs and onehot are (B,K,h,w).
template <typename Scalar>
Var<Scalar> ce_loss(const Var<Scalar>& prob, const Var<Scalar>& onehot);
/// ||a - b||_2 per sample, averaged over the batch; b may omit the batch axis.
template <typename Scalar>
Var<Scalar> fidelity_loss(const Var<Scalar>& w_star, const Var<Scalar>& w_bar);

/// -mean(D(fake))
template <typename Scalar>
Var<Scalar> adversarial_g_loss(const Var<Scalar>& fake_scores);
/// mean(relu(1 - D(real))) + mean(relu(1 + D(fake)))
template <typename Scalar>
Var<Scalar> discriminator_loss(const Var<Scalar>& real_scores, const Var<Scalar>& fake_scores);
/// Non-saturating generator loss mean(softplus(-D(fake))), used only for generator pretraining.
template <typename Scalar>
Var<Scalar> nonsaturating_g_loss(const Var<Scalar>& fake_scores);
/// mean(softplus(-D(real))) + mean(softplus(D(fake))), the matching discriminator side.
template <typename Scalar>
Var<Scalar> nonsaturating_d_loss(const Var<Scalar>& real_scores, const Var<Scalar>& fake_scores);

/// Ground truth at the three decoder scales (strides 4, 2, 1).
template <typename Scalar>
struct MultiScaleTarget {
  std::array<Var<Scalar>, 3> rgb;     // (B,3,h,w)
  std::array<Var<Scalar>, 3> edge;    // (B,1,h,w) in {0,1}
  std::array<Var<Scalar>, 3> onehot;  // (B,K,h,w)
};

/// Area-averaged RGB, max-pooled edges, nearest labels as one-hot.
template <typename Scalar>
MultiScaleTarget<Scalar> make_targets(const Tensor<Scalar>& rgb, const Tensor<Scalar>& edge,
                                      const Tensor<std::int32_t>& labels, int num_classes);

template <typename Scalar>
struct MsrParts {
  Var<Scalar> total;
  std::array<Scalar, 3> rec{}, perceptual{}, edge{}, seg{};
};

/// Sum over scales of L1 + perceptual + edge BCE + seg CE.
template <typename Scalar>
MsrParts<Scalar> msr_loss(const std::array<model::ScalePrediction<Scalar>, 3>& preds,
                          const MultiScaleTarget<Scalar>& target, const FeatureExtractor<Scalar>& ex);

struct LossWeights {
  double msr = 0.5;
  double fid = 0.005;
};

/// L_ipt + msr * L_msr + fid * L_fid; throws naming the first non-finite term.
template <typename Scalar>
Var<Scalar> total_loss(const Var<Scalar>& ipt, const Var<Scalar>& msr, const Var<Scalar>& fid, const LossWeights& w);

/// Power-iteration spectral normalization with persistent singular vectors.
template <typename Scalar>
struct SpectralNorm {
  Tensor<Scalar> u;  // (out)
  Tensor<Scalar> v;  // (in*k*k)

  SpectralNorm() = default;
  /// Runs `init_iters` iterations so the estimate starts converged.
  SpectralNorm(const Tensor<Scalar>& weight, Rng& rng, int init_iters = 50);
  /// One power iteration (when `update`), then W / (u^T W v); differentiable in W.
  Var<Scalar> operator()(const Var<Scalar>& weight, bool update);
  void iterate(const Tensor<Scalar>& weight);
};

/// Five spectrally normalized convs on [image; edge].
template <typename Scalar>
struct Discriminator {
  std::vector<Conv2d<Scalar>> convs;
  std::vector<SpectralNorm<Scalar>> norms;

  Discriminator() = default;
  Discriminator(Index in_channels, Index base, Rng& rng);
  /// (B,4,s,s) -> patch scores (B,1,h,w). `update` advances the power iterations.
  Var<Scalar> operator()(const Var<Scalar>& x, bool update = true);
  /// Normalized weights as used by the last forward.
  std::vector<Tensor<Scalar>> normalized_weights() const;
  void collect(ParamList<Scalar>& out, const std::string& prefix) const;
};

}  // namespace mmif::objectives
