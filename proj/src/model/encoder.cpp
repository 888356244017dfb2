#include "mmif/model/encoder.hpp"

namespace mmif::model {

template <typename S>
GatedConv<S>::GatedConv(Index in, Index out, int kernel, Rng& rng, int stride, int dilation)
    : feat(Conv2d<S>::same(in, out, kernel, rng, stride, dilation)),
      gate(Conv2d<S>::same(in, 1, kernel, rng, stride, dilation)) {}

template <typename S>
GatedFeature<S> GatedConv<S>::operator()(const Var<S>& x) const {
  Var<S> g = sigmoid(gate(x));
  return {mul(elu(feat(x)), g), g};
}

template <typename S>
void GatedConv<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  feat.collect(out, prefix + ".feat");
  gate.collect(out, prefix + ".gate");
}

template <typename S>
SelfAttention2d<S>::SelfAttention2d(Index channels, Rng& rng) {
  const Index inner = std::max<Index>(1, channels / 8);
  query = Conv2d<S>(channels, inner, 1, rng);
  // A key bias only shifts each query row of scores by a constant, which softmax ignores.
  key = Conv2d<S>(channels, inner, 1, rng, ConvSpec{}, false);
  value = Conv2d<S>(channels, channels, 1, rng);
  gamma = parameter(Tensor<S>(Shape{1, 1, 1, 1}));
}

template <typename S>
Var<S> SelfAttention2d<S>::operator()(const Var<S>& x) const {
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), n = h * w;
  const Index inner = query.out_channels();
  Var<S> q = transpose(reshape(query(x), Shape{b, inner, n}));
  Var<S> k = reshape(key(x), Shape{b, inner, n});
  Var<S> attn = softmax(matmul(q, k), 2);
  Var<S> v = reshape(value(x), Shape{b, c, n});
  Var<S> o = reshape(matmul(v, transpose(attn)), Shape{b, c, h, w});
  return add(x, mul(o, gamma));
}

template <typename S>
void SelfAttention2d<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  query.collect(out, prefix + ".query");
  key.collect(out, prefix + ".key");
  value.collect(out, prefix + ".value");
  out.emplace_back(prefix + ".gamma", gamma);
}

template <typename S>
Backbone<S>::Backbone(Index in_channels, const std::vector<int>& ch, Rng& rng) {
  Index prev = in_channels;
  for (int i = 0; i < 4; ++i) {
    convs.push_back(Conv2d<S>::same(prev, ch[i], 3, rng, 2));
    prev = ch[i];
  }
  attention = SelfAttention2d<S>(prev, rng);
  tail = GatedConv<S>(prev, ch[4], 3, rng, 2);
}

template <typename S>
BackboneOutput<S> Backbone<S>::operator()(const Var<S>& x) const {
  BackboneOutput<S> out;
  Var<S> h = x;
  for (size_t i = 0; i < convs.size(); ++i) {
    h = elu(convs[i](h));
    if (i + 1 == convs.size()) h = attention(h);
    out.skips.push_back(h);
  }
  out.out = tail(h);
  return out;
}

template <typename S>
void Backbone<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  for (size_t i = 0; i < convs.size(); ++i) convs[i].collect(out, prefix + ".conv" + std::to_string(i + 1));
  attention.collect(out, prefix + ".attention");
  tail.collect(out, prefix + ".tail");
}

template <typename S>
ACBLayer<S>::ACBLayer(Index channels, const std::vector<int>& r, Index gate_channels, Index fc_hidden, Rng& rng)
    : rates(r) {
  for (int rate : rates) {
    paths.push_back(Conv2d<S>::same(channels, channels, 3, rng, 1, rate));
    path_gates.push_back(Conv2d<S>::same(channels + 2, gate_channels, 3, rng));
  }
  fc1 = Conv2d<S>(1, fc_hidden, 1, rng);
  fc2 = Conv2d<S>(fc_hidden, 1, 1, rng);
  out_gate = Conv2d<S>::same(channels, 1, 3, rng);
}

template <typename S>
std::vector<Var<S>> ACBLayer<S>::path_features(const Var<S>& f) const {
  std::vector<Var<S>> out;
  for (const auto& p : paths) out.push_back(elu(p(f)));
  return out;
}

template <typename S>
Var<S> ACBLayer<S>::path_weights(const std::vector<Var<S>>& f_r, const Var<S>& g, const Var<S>& g_prev) const {
  auto fc = [&](const Var<S>& m) { return fc2(relu(fc1(m))); };
  std::vector<Var<S>> logits;
  for (size_t i = 0; i < f_r.size(); ++i) {
    Var<S> g_r = path_gates[i](concat<S>({f_r[i], g, g_prev}, 1));
    logits.push_back(sigmoid(add(fc(mean_axis(g_r, 1)), fc(max_axis(g_r, 1)))));
  }
  return softmax(concat(logits, 1), 1);
}

template <typename S>
GatedFeature<S> ACBLayer<S>::operator()(const GatedFeature<S>& in, const Var<S>& g_prev) const {
  std::vector<Var<S>> f_r = path_features(in.f);
  Var<S> w = path_weights(f_r, in.g, g_prev);
  Var<S> f = in.f;
  for (size_t i = 0; i < f_r.size(); ++i) f = add(f, mul(slice(w, 1, static_cast<Index>(i), 1), f_r[i]));
  return {f, sigmoid(out_gate(f))};
}

template <typename S>
void ACBLayer<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  for (size_t i = 0; i < paths.size(); ++i) {
    paths[i].collect(out, prefix + ".path" + std::to_string(rates[i]));
    path_gates[i].collect(out, prefix + ".path_gate" + std::to_string(rates[i]));
  }
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
  out_gate.collect(out, prefix + ".out_gate");
}

template <typename S>
ResLayer<S>::ResLayer(Index channels, Rng& rng)
    : conv1(Conv2d<S>::same(channels, channels, 3, rng)),
      conv2(Conv2d<S>::same(channels, channels, 3, rng)),
      out_gate(Conv2d<S>::same(channels, 1, 3, rng)) {}

template <typename S>
GatedFeature<S> ResLayer<S>::operator()(const GatedFeature<S>& in) const {
  Var<S> f = add(in.f, conv2(elu(conv1(in.f))));
  return {f, sigmoid(out_gate(f))};
}

template <typename S>
void ResLayer<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  conv1.collect(out, prefix + ".conv1");
  conv2.collect(out, prefix + ".conv2");
  out_gate.collect(out, prefix + ".out_gate");
}

template <typename S>
AOTLayer<S>::AOTLayer(Index channels, const std::vector<int>& rates, Rng& rng) {
  const Index part = channels / static_cast<Index>(rates.size());
  for (int r : rates) paths.push_back(Conv2d<S>::same(channels, part, 3, rng, 1, r));
  fuse = Conv2d<S>::same(part * static_cast<Index>(rates.size()), channels, 3, rng);
  blend = Conv2d<S>::same(channels, channels, 3, rng);
  out_gate = Conv2d<S>::same(channels, 1, 3, rng);
}

template <typename S>
GatedFeature<S> AOTLayer<S>::operator()(const GatedFeature<S>& in) const {
  std::vector<Var<S>> parts;
  for (const auto& p : paths) parts.push_back(relu(p(in.f)));
  Var<S> y = fuse(concat(parts, 1));
  Var<S> m = sigmoid(blend(in.f));
  // f * (1 - m) + y * m
  Var<S> f = add(in.f, mul(sub(y, in.f), m));
  return {f, sigmoid(out_gate(f))};
}

template <typename S>
void AOTLayer<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  for (size_t i = 0; i < paths.size(); ++i) paths[i].collect(out, prefix + ".path" + std::to_string(i));
  fuse.collect(out, prefix + ".fuse");
  blend.collect(out, prefix + ".blend");
  out_gate.collect(out, prefix + ".out_gate");
}

template <typename S>
Bottleneck<S>::Bottleneck(const ModelConfig& cfg, Rng& rng) : kind(cfg.bottleneck) {
  const Index c = cfg.enc_channels[4];
  const Index gate_ch = cfg.acb_gate_channels > 0 ? cfg.acb_gate_channels : std::max<Index>(1, c / 4);
  for (int t = 0; t < cfg.acb_layers; ++t) {
    switch (kind) {
      case BottleneckKind::ACB: acb.emplace_back(c, cfg.acb_rates, gate_ch, cfg.acb_fc_hidden, rng); break;
      case BottleneckKind::RES: res.emplace_back(c, rng); break;
      case BottleneckKind::AOT: aot.emplace_back(c, cfg.acb_rates, rng); break;
    }
  }
}

template <typename S>
GatedFeature<S> Bottleneck<S>::operator()(const GatedFeature<S>& g0) const {
  GatedFeature<S> cur = g0;
  Var<S> g_prev = g0.g;
  for (const auto& l : acb) {
    GatedFeature<S> next = l(cur, g_prev);
    g_prev = cur.g;
    cur = next;
  }
  for (const auto& l : res) cur = l(cur);
  for (const auto& l : aot) cur = l(cur);
  return cur;
}

template <typename S>
void Bottleneck<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  for (size_t i = 0; i < acb.size(); ++i) acb[i].collect(out, prefix + ".acb" + std::to_string(i));
  for (size_t i = 0; i < res.size(); ++i) res[i].collect(out, prefix + ".res" + std::to_string(i));
  for (size_t i = 0; i < aot.size(); ++i) aot[i].collect(out, prefix + ".aot" + std::to_string(i));
}

template <typename S>
Encoder<S>::Encoder(const ModelConfig& cfg, Rng& rng)
    : backbone(cfg.input_channels(), cfg.enc_channels, rng), bottleneck(cfg, rng) {}

template <typename S>
EncoderOutput<S> Encoder<S>::operator()(const Var<S>& input) const {
  BackboneOutput<S> b = backbone(input);
  return {b.skips, b.out, bottleneck(b.out)};
}

template <typename S>
void Encoder<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  backbone.collect(out, prefix + ".backbone");
  bottleneck.collect(out, prefix + ".bottleneck");
}

#define MMIF_INSTANTIATE_ENCODER(S) \
  template struct GatedConv<S>;     \
  template struct SelfAttention2d<S>; \
  template struct Backbone<S>;      \
  template struct ACBLayer<S>;      \
  template struct ResLayer<S>;      \
  template struct AOTLayer<S>;      \
  template struct Bottleneck<S>;    \
  template struct Encoder<S>;

MMIF_INSTANTIATE_ENCODER(float)
MMIF_INSTANTIATE_ENCODER(double)

}  // namespace mmif::model
