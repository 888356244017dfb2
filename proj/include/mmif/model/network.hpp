#pragma once

#include "mmif/model/decoder.hpp"
#include "mmif/model/generator.hpp"
#include "mmif/model/inversion.hpp"

namespace mmif::model {

/// Unmasked inputs at model resolution; masking happens inside `encode_input`.
template <typename Scalar>
struct NetInput {
  Tensor<Scalar> image;  // (B,3,s,s) in [-1,1]
  Tensor<Scalar> mask;   // (B,1,s,s), 1 = missing
  Tensor<Scalar> edge;   // (B,1,s,s); zeros when no edge hint
  Tensor<Scalar> seg;    // (B,K,s,s) one-hot; zeros when no segmentation hint
};

/// [Y_M; E_M; S_M; M] with every modality multiplied by (1 - M).
template <typename Scalar>
Tensor<Scalar> encode_input(const NetInput<Scalar>& in);

/// Structure maps for the `gt` guidance switch built from the input's own (unmasked) hint
/// channels: edges max-pooled, one-hot labels sampled nearest, at strides 4, 2 and 1.
template <typename Scalar>
GuideMaps<Scalar> guide_from_hints(const NetInput<Scalar>& in);

template <typename Scalar>
struct ForwardResult {
  EncoderOutput<Scalar> enc;
  DecoderOutput<Scalar> dec;
  StyleBundle<Scalar> style;
  Var<Scalar> output;  // raw generator image (B,3,s,s)
};

/// Encoder, mutual decoder, inversion, tap projections and the generator, owned together.
template <typename Scalar>
struct InpaintNet {
  ModelConfig cfg;
  Encoder<Scalar> encoder;
  Decoder<Scalar> decoder;
  Inversion<Scalar> inversion;
  Generator<Scalar> generator;
  TapProjection<Scalar> projection;

  InpaintNet() = default;
  /// The generator draws from its own stream of `seed`, so its init does not depend on encoder widths.
  InpaintNet(const ModelConfig& cfg, std::uint64_t seed);

  /// With `gt` guidance and no `guide`, the maps come from `guide_from_hints(in)`.
  ForwardResult<Scalar> forward(const NetInput<Scalar>& in, std::uint64_t noise_seed,
                                const GuideMaps<Scalar>* guide = nullptr) const;

  /// Everything trained in the encoder phase.
  ParamList<Scalar> encoder_params() const;
  ParamList<Scalar> generator_params() const;
  ParamList<Scalar> all_params() const;
};

}  // namespace mmif::model
