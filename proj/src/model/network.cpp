#include "mmif/model/network.hpp"

#include <algorithm>

namespace mmif::model {

template <typename S>
Tensor<S> encode_input(const NetInput<S>& in) {
  const Index b = in.image.dim(0), s = in.image.dim(2);
  require_shape(in.image.shape() == Shape({b, 3, s, s}), "image must be (B,3,s,s), got " + in.image.shape().str());
  require_shape(in.mask.shape() == Shape({b, 1, s, s}), "mask must be (B,1,s,s), got " + in.mask.shape().str());
  require_shape(in.edge.shape() == Shape({b, 1, s, s}), "edge must be (B,1,s,s), got " + in.edge.shape().str());
  require_shape(in.seg.rank() == 4 && in.seg.dim(0) == b && in.seg.dim(2) == s && in.seg.dim(3) == s,
                "seg must be (B,K,s,s), got " + in.seg.shape().str());
  NoGradGuard ng;
  auto keep = sub(constant(Tensor<S>::ones(in.mask.shape())), constant(in.mask));
  return concat<S>({mul(constant(in.image), keep), mul(constant(in.edge), keep), mul(constant(in.seg), keep),
                    constant(in.mask)},
                   1)
      .value();
}

template <typename S>
GuideMaps<S> guide_from_hints(const NetInput<S>& in) {
  const Index b = in.edge.dim(0), s = in.edge.dim(2);
  GuideMaps<S> g;
  for (int r = 0; r < 3; ++r) {
    const Index f = 4 >> r, h = s / f;
    Tensor<S> e(Shape{b, 1, h, h});
    for (Index n = 0; n < b; ++n)
      for (Index y = 0; y < s; ++y)
        for (Index x = 0; x < s; ++x) {
          S& dst = e[(n * h + y / f) * h + x / f];
          dst = std::max(dst, in.edge[(n * s + y) * s + x]);
        }
    g.edge[static_cast<size_t>(r)] = constant(std::move(e));
    g.onehot[static_cast<size_t>(r)] = constant(f > 1 ? resize_nearest(in.seg, h, h) : in.seg);
  }
  return g;
}

template <typename S>
InpaintNet<S>::InpaintNet(const ModelConfig& c, std::uint64_t seed) : cfg(c) {
  cfg.validate();
  Rng gen_rng(seed * 0x9E3779B97F4A7C15ULL + 1);
  generator = Generator<S>(cfg, gen_rng);
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 2);
  encoder = Encoder<S>(cfg, rng);
  decoder = Decoder<S>(cfg, rng);
  inversion = Inversion<S>(cfg, rng);
  projection = TapProjection<S>(cfg, generator, rng);
}

template <typename S>
ForwardResult<S> InpaintNet<S>::forward(const NetInput<S>& in, std::uint64_t noise_seed, const GuideMaps<S>* guide) const {
  require_shape(in.image.dim(2) == cfg.resolution && in.image.dim(3) == cfg.resolution,
                "input resolution " + in.image.shape().str() + " does not match the model (" +
                    std::to_string(cfg.resolution) + ")");
  require_shape(in.seg.dim(1) == cfg.num_classes,
                "seg has " + std::to_string(in.seg.dim(1)) + " classes, model expects " + std::to_string(cfg.num_classes));
  ForwardResult<S> r;
  Var<S> x = constant(encode_input(in));
  r.enc = encoder(x);
  Var<S> mask = constant(in.mask);
  Var<S> masked_rgb = slice(x, 1, 0, 3);
  GuideMaps<S> own;
  if (cfg.guidance == GuidanceKind::GroundTruth && !guide) {
    own = guide_from_hints(in);
    guide = &own;
  }
  r.dec = decoder(r.enc, masked_rgb, mask, guide);
  std::array<Var<S>, 3> taps{r.enc.enhanced.f, r.enc.skips[3], r.enc.skips[2]};
  std::array<Var<S>, 3> preds{r.dec.preds[0].stacked(), r.dec.preds[1].stacked(), r.dec.preds[2].stacked()};
  r.style = inversion(taps, preds);
  r.output = generator.synthesize(r.style.w_star, projection(r.dec.taps), noise_seed);
  return r;
}

template <typename S>
ParamList<S> InpaintNet<S>::encoder_params() const {
  ParamList<S> out;
  encoder.collect(out, "encoder");
  decoder.collect(out, "decoder");
  inversion.collect(out, "inversion");
  projection.collect(out, "projection");
  return out;
}

template <typename S>
ParamList<S> InpaintNet<S>::generator_params() const {
  ParamList<S> out;
  generator.collect(out, "generator");
  return out;
}

template <typename S>
ParamList<S> InpaintNet<S>::all_params() const {
  ParamList<S> out = encoder_params();
  generator.collect(out, "generator");
  return out;
}

template GuideMaps<float> guide_from_hints(const NetInput<float>&);
template GuideMaps<double> guide_from_hints(const NetInput<double>&);
template Tensor<float> encode_input(const NetInput<float>&);
template Tensor<double> encode_input(const NetInput<double>&);
template struct InpaintNet<float>;
template struct InpaintNet<double>;

}  // namespace mmif::model
