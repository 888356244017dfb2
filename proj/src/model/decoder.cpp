#include "mmif/model/decoder.hpp"

#include <cmath>

namespace mmif::model {

namespace {
template <typename S>
void set_bias(const Conv2d<S>& c, S v) {
  c.bias.mutable_value().data().setConstant(v);
}
}  // namespace

template <typename S>
ADN<S>::ADN(Index channels, Index cond_channels, Rng& rng)
    : gamma(Conv2d<S>::same(cond_channels, channels, 3, rng)), beta(Conv2d<S>::same(cond_channels, channels, 3, rng)) {
  set_bias(gamma, S(1));
}

template <typename S>
Var<S> ADN<S>::operator()(const Var<S>& f, const Var<S>& cond) const {
  return add(mul(gamma(cond), normalize_axis(f, 1, S(1e-5))), beta(cond));
}

template <typename S>
void ADN<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  gamma.collect(out, prefix + ".gamma");
  beta.collect(out, prefix + ".beta");
}

template <typename S>
AdaINNorm<S>::AdaINNorm(Index channels, Index cond_channels, Rng& rng)
    : gamma(cond_channels, channels, rng), beta(cond_channels, channels, rng) {
  gamma.bias.mutable_value().data().setOnes();
}

template <typename S>
Var<S> AdaINNorm<S>::operator()(const Var<S>& f, const Var<S>& cond) const {
  const Index b = cond.dim(0), cc = cond.dim(1), c = f.dim(1);
  Var<S> pooled = reshape(mean_axis(reshape(cond, Shape{b, cc, cond.dim(2) * cond.dim(3)}), 2), Shape{b, cc});
  Var<S> g = reshape(gamma(pooled), Shape{b, c, 1, 1});
  Var<S> be = reshape(beta(pooled), Shape{b, c, 1, 1});
  return add(mul(g, instance_norm2d(f, S(1e-5))), be);
}

template <typename S>
void AdaINNorm<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  gamma.collect(out, prefix + ".gamma");
  beta.collect(out, prefix + ".beta");
}

template <typename S>
SpadeNorm<S>::SpadeNorm(Index channels, Index cond_channels, Rng& rng)
    : hidden(Conv2d<S>::same(cond_channels, channels, 3, rng)),
      gamma(Conv2d<S>::same(channels, channels, 3, rng)),
      beta(Conv2d<S>::same(channels, channels, 3, rng)) {
  set_bias(gamma, S(1));
}

template <typename S>
Var<S> SpadeNorm<S>::operator()(const Var<S>& f, const Var<S>& cond) const {
  Var<S> h = relu(hidden(cond));
  return add(mul(gamma(h), instance_norm2d(f, S(1e-5))), beta(h));
}

template <typename S>
void SpadeNorm<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  hidden.collect(out, prefix + ".hidden");
  gamma.collect(out, prefix + ".gamma");
  beta.collect(out, prefix + ".beta");
}

template <typename S>
Var<S> gma_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& gate, int patch, int heads) {
  const Index b = q.dim(0), c = q.dim(1), h = q.dim(2), w = q.dim(3);
  require_shape(k.shape() == q.shape() && v.shape() == q.shape(), "gma_attention: q/k/v shapes differ");
  require_shape(h % patch == 0 && w % patch == 0, "gma_attention: patch " + std::to_string(patch) +
                                                      " does not divide " + std::to_string(h) + "x" +
                                                      std::to_string(w));
  const Index n = (h / patch) * (w / patch);
  require_shape(gate.shape() == Shape({b, 1, h / patch, w / patch}),
                "gma_attention: gate " + gate.shape().str() + " does not match the patch grid");
  const double dim = static_cast<double>(patch * patch * (c / heads));
  Var<S> qt = patchify(q, patch, heads);
  Var<S> kt = patchify(k, patch, heads);
  Var<S> vt = patchify(v, patch, heads);
  Var<S> scores = scale(matmul(qt, transpose(kt)), static_cast<S>(1.0 / std::sqrt(dim)));
  Var<S> g = reshape(gate, Shape{b, 1, 1, n});
  if (heads > 1) g = concat(std::vector<Var<S>>(static_cast<size_t>(heads), g), 1);
  Var<S> alpha = mul(softmax(scores, 2), reshape(g, Shape{b * heads, 1, n}));
  return unpatchify(matmul(alpha, vt), b, c, h, w, patch, heads);
}

template <typename S>
GMA<S>::GMA(Index channels, int p, int hd, Rng& rng)
    : query(channels, channels, 1, rng),
      key(channels, channels, 1, rng, ConvSpec{}, false),
      value(channels, channels, 1, rng),
      gate_conv(Conv2d<S>::same(2, 1, 3, rng)),
      patch(p),
      heads(hd) {}

template <typename S>
Var<S> GMA<S>::patch_gate(const Var<S>& gate_input) const {
  return sigmoid(gate_conv(patch > 1 ? avg_pool(gate_input, patch) : gate_input));
}

template <typename S>
Var<S> GMA<S>::operator()(const Var<S>& fused, const Var<S>& gate_input) const {
  return gma_attention(query(fused), key(fused), value(fused), patch_gate(gate_input), patch, heads);
}

template <typename S>
void GMA<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  query.collect(out, prefix + ".query");
  key.collect(out, prefix + ".key");
  value.collect(out, prefix + ".value");
  gate_conv.collect(out, prefix + ".gate");
}

template <typename S>
GatedFeedForward<S>::GatedFeedForward(Index channels, Rng& rng)
    : value(channels, channels, 1, rng), gate(channels, channels, 1, rng) {}

template <typename S>
Var<S> GatedFeedForward<S>::operator()(const Var<S>& x) const {
  return mul(value(x), sigmoid(gate(x)));
}

template <typename S>
void GatedFeedForward<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  value.collect(out, prefix + ".value");
  gate.collect(out, prefix + ".gate");
}

template <typename S>
FusionBlock<S>::FusionBlock(FusionKind k, Index channels, Index cond_channels, int patch, int heads, Rng& rng)
    : kind(k) {
  switch (kind) {
    case FusionKind::GmaAdn: adn = ADN<S>(channels, cond_channels, rng); break;
    case FusionKind::GmaAdaIN: adain = AdaINNorm<S>(channels, cond_channels, rng); break;
    case FusionKind::GmaSpade: spade = SpadeNorm<S>(channels, cond_channels, rng); break;
    case FusionKind::Concat:
      concat1 = Conv2d<S>::same(3 * channels, channels, 3, rng);
      concat2 = Conv2d<S>::same(channels, channels, 3, rng);
      break;
    case FusionKind::Add: break;
  }
  if (kind == FusionKind::GmaAdn || kind == FusionKind::GmaAdaIN || kind == FusionKind::GmaSpade)
    gma = GMA<S>(channels, patch, heads, rng);
  ffn = GatedFeedForward<S>(channels, rng);
}

template <typename S>
Var<S> FusionBlock<S>::operator()(const Var<S>& f_inpt, const Var<S>& f_edge, const Var<S>& f_seg,
                                  const Var<S>& cond, const Var<S>& gate_input) const {
  Var<S> f;
  switch (kind) {
    case FusionKind::Add: f = add(add(f_inpt, f_edge), f_seg); break;
    case FusionKind::Concat: f = concat2(elu(concat1(concat<S>({f_inpt, f_edge, f_seg}, 1)))); break;
    default: {
      Var<S> fused = kind == FusionKind::GmaAdn     ? adn(f_inpt, cond)
                     : kind == FusionKind::GmaAdaIN ? adain(f_inpt, cond)
                                                    : spade(f_inpt, cond);
      f = add(f_inpt, gma(fused, gate_input));
    }
  }
  return add(f, ffn(f));
}

template <typename S>
void FusionBlock<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  switch (kind) {
    case FusionKind::GmaAdn: adn.collect(out, prefix + ".adn"); break;
    case FusionKind::GmaAdaIN: adain.collect(out, prefix + ".adain"); break;
    case FusionKind::GmaSpade: spade.collect(out, prefix + ".spade"); break;
    case FusionKind::Concat:
      concat1.collect(out, prefix + ".concat1");
      concat2.collect(out, prefix + ".concat2");
      break;
    case FusionKind::Add: break;
  }
  if (gma.query.weight.defined()) gma.collect(out, prefix + ".gma");
  ffn.collect(out, prefix + ".ffn");
}

template <typename S>
Branch<S>::Branch(const std::vector<int>& enc, Index full, Index head_channels, Rng& rng) {
  const Index widths[6] = {enc[4], enc[3], enc[2], enc[1], enc[0], full};
  for (int i = 0; i < 5; ++i) ups[static_cast<size_t>(i)] = Conv2d<S>::same(widths[i], widths[i + 1], 3, rng);
  for (int r = 0; r < 3; ++r) heads[static_cast<size_t>(r)] = Conv2d<S>::same(widths[r + 3], head_channels, 3, rng);
}

template <typename S>
void Branch<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  for (size_t i = 0; i < ups.size(); ++i) ups[i].collect(out, prefix + ".up" + std::to_string(i));
  for (size_t i = 0; i < heads.size(); ++i) heads[i].collect(out, prefix + ".head" + std::to_string(i));
}

template <typename S>
Decoder<S>::Decoder(const ModelConfig& c, Rng& rng) : cfg(c) {
  cfg.validate();
  const auto& enc = cfg.enc_channels;
  inpt = Branch<S>(enc, cfg.dec_full_channels, 3, rng);
  edge = Branch<S>(enc, cfg.dec_full_channels, 1, rng);
  seg = Branch<S>(enc, cfg.dec_full_channels, cfg.num_classes, rng);
  image_in = Conv2d<S>::same(3, cfg.dec_full_channels, 3, rng);
  const Index widths[3] = {enc[1], enc[0], cfg.dec_full_channels};
  for (int r = 0; r < 3; ++r) {
    const Index cond = cfg.guidance == GuidanceKind::Unbiased ? 2 * widths[r] : 1 + cfg.num_classes;
    fusion[static_cast<size_t>(r)] =
        FusionBlock<S>(cfg.fusion, widths[r], cond, cfg.patch_sizes[static_cast<size_t>(r)], cfg.heads, rng);
  }
}

template <typename S>
DecoderOutput<S> Decoder<S>::operator()(const EncoderOutput<S>& enc, const Var<S>& masked_image, const Var<S>& mask,
                                        const GuideMaps<S>* guide) const {
  require_shape(enc.skips.size() == 4, "decoder expects four encoder skips");
  const Index s = mask.dim(2);
  auto stage = [&](const Branch<S>& br, int i, const Var<S>& x) {
    Var<S> y = elu(br.ups[static_cast<size_t>(i)](upsample_nearest(x, 2)));
    if (i < 4) {
      const Var<S>& skip = enc.skips[static_cast<size_t>(3 - i)];
      require_shape(skip.shape() == y.shape(), "decoder skip " + skip.shape().str() + " vs " + y.shape().str());
      y = add(y, skip);
    }
    return y;
  };
  Var<S> xi = enc.enhanced.f, xe = enc.enhanced.f, xs = enc.enhanced.f;
  for (int i = 0; i < 2; ++i) {
    xi = stage(inpt, i, xi);
    xe = stage(edge, i, xe);
    xs = stage(seg, i, xs);
  }
  DecoderOutput<S> out;
  for (int r = 0; r < 3; ++r) {
    const auto ri = static_cast<size_t>(r);
    xi = stage(inpt, r + 2, xi);
    xe = stage(edge, r + 2, xe);
    xs = stage(seg, r + 2, xs);
    if (r == 2) xi = add(xi, image_in(masked_image));
    Var<S> e_pred = sigmoid(edge.heads[ri](xe));
    Var<S> s_pred = softmax(seg.heads[ri](xs), 1);
    Var<S> cond;
    switch (cfg.guidance) {
      case GuidanceKind::Unbiased: cond = concat<S>({xe, xs}, 1); break;
      case GuidanceKind::Biased: cond = concat<S>({e_pred, s_pred}, 1); break;
      case GuidanceKind::GroundTruth:
        if (!guide) throw ConfigError("ground-truth guidance needs guide maps");
        cond = concat<S>({guide->edge[ri], guide->onehot[ri]}, 1);
        break;
    }
    const Index res = xi.dim(2);
    const int up = static_cast<int>(res / enc.enhanced.g.dim(2));
    const int down = static_cast<int>(s / res);
    Var<S> gate_input = concat<S>({upsample_nearest(enc.enhanced.g, up), down > 1 ? avg_pool(mask, down) : mask}, 1);
    xi = fusion[ri](xi, xe, xs, cond, gate_input);
    out.preds[ri] = {tanh(inpt.heads[ri](xi)), e_pred, s_pred};
    out.taps[ri] = xi;
  }
  return out;
}

template <typename S>
void Decoder<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  inpt.collect(out, prefix + ".inpt");
  edge.collect(out, prefix + ".edge");
  seg.collect(out, prefix + ".seg");
  image_in.collect(out, prefix + ".image_in");
  for (size_t r = 0; r < 3; ++r) fusion[r].collect(out, prefix + ".fusion" + std::to_string(r));
}

#define MMIF_INSTANTIATE_DECODER(S)                                                                     \
  template struct ADN<S>;                                                                               \
  template struct AdaINNorm<S>;                                                                         \
  template struct SpadeNorm<S>;                                                                         \
  template struct GMA<S>;                                                                               \
  template struct GatedFeedForward<S>;                                                                  \
  template struct FusionBlock<S>;                                                                       \
  template struct Branch<S>;                                                                            \
  template struct Decoder<S>;                                                                           \
  template Var<S> gma_attention(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, int, int);

MMIF_INSTANTIATE_DECODER(float)
MMIF_INSTANTIATE_DECODER(double)

}  // namespace mmif::model
