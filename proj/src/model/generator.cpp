#include "mmif/model/generator.hpp"

#include "mmif/model/inversion.hpp"

#include <cmath>

namespace mmif::model {

template <typename S>
Var<S> modulated_conv(const Var<S>& x, const Var<S>& style, const Var<S>& weight, bool demodulate) {
  const Index b = x.dim(0), in = x.dim(1), out = weight.dim(0), k = weight.dim(2);
  require_shape(weight.dim(1) == in, "modulated_conv: weight " + weight.shape().str() + " vs input " + x.shape().str());
  require_shape(style.shape() == Shape({b, in}), "modulated_conv: style must be (B," + std::to_string(in) + ")");
  Var<S> y = conv2d(mul(x, reshape(style, Shape{b, in, 1, 1})), weight, Var<S>(),
                    ConvSpec{1, static_cast<int>(k / 2), 1});
  if (!demodulate) return y;
  Var<S> wsq = reshape(sum_axis(reshape(square(weight), Shape{out, in, k * k}), 2), Shape{out, in});
  Var<S> energy = matmul(square(style), transpose(wsq));  // (B,O)
  Var<S> demod = div(constant(Tensor<S>::ones(Shape{1})), sqrt(add_scalar(energy, S(1e-8))));
  return mul(y, reshape(demod, Shape{b, out, 1, 1}));
}

template <typename S>
MappingNetwork<S>::MappingNetwork(Index dim, int num_layers, Rng& rng) {
  for (int i = 0; i < num_layers; ++i) layers.emplace_back(dim, dim, rng, std::sqrt(2.0));
}

template <typename S>
Var<S> MappingNetwork<S>::operator()(const Var<S>& z) const {
  Var<S> h = div(z, sqrt(add_scalar(mean_axis(square(z), 1), S(1e-8))));
  for (const auto& l : layers) h = leaky_relu(l(h), S(0.2));
  return h;
}

template <typename S>
void MappingNetwork<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  for (size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".fc" + std::to_string(i));
}

template <typename S>
StyledConv<S>::StyledConv(Index w_dim, Index in, Index out, int kernel, bool demod, bool act, Rng& rng)
    : affine(w_dim, in, rng), demodulate(demod), activate(act) {
  affine.bias.mutable_value().data().setOnes();
  weight = parameter(normal_tensor<S>(Shape{out, in, kernel, kernel}, rng, 1.0 / std::sqrt(double(in * kernel * kernel))));
  bias = parameter(Tensor<S>(Shape{1, out, 1, 1}));
  noise_scale = parameter(Tensor<S>(Shape{1, 1, 1, 1}));
}

template <typename S>
Var<S> StyledConv<S>::operator()(const Var<S>& x, const Var<S>& w, const Var<S>& noise) const {
  Var<S> y = modulated_conv(x, affine(w), weight, demodulate);
  if (noise.defined()) y = add(y, mul(noise, noise_scale));
  y = add(y, bias);
  return activate ? leaky_relu(y, S(0.2)) : y;
}

template <typename S>
void StyledConv<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  affine.collect(out, prefix + ".affine");
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
  out.emplace_back(prefix + ".noise_scale", noise_scale);
}

template <typename S>
Index Generator<S>::channels_at(int res) const {
  return std::min<Index>(gen_max, static_cast<Index>(gen_base) * (resolution / res));
}

template <typename S>
int Generator<S>::num_layers() const {
  return num_style_layers(resolution);
}

template <typename S>
Generator<S>::Generator(const ModelConfig& cfg, Rng& rng)
    : resolution(cfg.resolution), noise(cfg.noise), gen_base(cfg.gen_base), gen_max(cfg.gen_max) {
  const Index wd = cfg.w_dim;
  mapping = MappingNetwork<S>(wd, cfg.mapping_layers, rng);
  const Index c4 = channels_at(4);
  constant_input = parameter(normal_tensor<S>(Shape{1, c4, 4, 4}, rng));
  convs.emplace_back(wd, c4, c4, 3, true, true, rng);
  to_rgb.emplace_back(wd, c4, 3, 1, false, false, rng);
  for (int res = 8; res <= resolution; res *= 2) {
    const Index in = channels_at(res / 2), out = channels_at(res);
    convs.emplace_back(wd, in, out, 3, true, true, rng);
    convs.emplace_back(wd, out, out, 3, true, true, rng);
    to_rgb.emplace_back(wd, out, 3, 1, false, false, rng);
  }
}

template <typename S>
Var<S> Generator<S>::synthesize(const Var<S>& w_star, const std::map<int, Var<S>>& taps,
                                std::uint64_t noise_seed) const {
  const int num = num_layers();
  const Index b = w_star.dim(0), wd = w_star.dim(2);
  require_shape(w_star.dim(1) == num, "w* has " + std::to_string(w_star.dim(1)) + " rows, generator needs " +
                                          std::to_string(num));
  for (const auto& [res, t] : taps)
    require_shape(t.shape().rank() == 4 && t.dim(0) == b && t.dim(1) == channels_at(res) && t.dim(2) == res &&
                      t.dim(3) == res && res >= 8 && res <= resolution,
                  "tap at resolution " + std::to_string(res) + " has shape " + t.shape().str());
  Rng rng(noise_seed);
  auto w_row = [&](int l) { return reshape(slice(w_star, 1, l, 1), Shape{b, wd}); };
  auto noise_for = [&](Index h) {
    if (!noise) return Var<S>();
    return constant(normal_tensor<S>(Shape{b, 1, h, h}, rng));
  };
  Var<S> x = concat(std::vector<Var<S>>(static_cast<size_t>(b), constant_input), 0);
  x = convs[0](x, w_row(0), noise_for(4));
  Var<S> rgb = to_rgb[0](x, w_row(1), Var<S>());
  int layer = 1;
  size_t ci = 1;
  for (int res = 8; res <= resolution; res *= 2, ++ci) {
    x = convs[2 * ci - 1](upsample_nearest(x, 2), w_row(layer), noise_for(res));
    if (auto it = taps.find(res); it != taps.end()) x = add(x, it->second);
    x = convs[2 * ci](x, w_row(layer + 1), noise_for(res));
    rgb = add(upsample_nearest(rgb, 2), to_rgb[ci](x, w_row(layer + 2), Var<S>()));
    layer += 2;
  }
  return tanh(rgb);
}

template <typename S>
void Generator<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  mapping.collect(out, prefix + ".mapping");
  out.emplace_back(prefix + ".const", constant_input);
  for (size_t i = 0; i < convs.size(); ++i) convs[i].collect(out, prefix + ".conv" + std::to_string(i));
  for (size_t i = 0; i < to_rgb.size(); ++i) to_rgb[i].collect(out, prefix + ".to_rgb" + std::to_string(i));
}

template <typename S>
TapProjection<S>::TapProjection(const ModelConfig& cfg, const Generator<S>& g, Rng& rng) {
  const Index widths[3] = {cfg.enc_channels[1], cfg.enc_channels[0], cfg.dec_full_channels};
  for (size_t r = 0; r < 3; ++r) {
    resolutions[r] = cfg.resolution >> (2 - r);
    proj[r] = Conv2d<S>(widths[r], g.channels_at(resolutions[r]), 1, rng);
  }
}

template <typename S>
std::map<int, Var<S>> TapProjection<S>::operator()(const std::array<Var<S>, 3>& taps) const {
  std::map<int, Var<S>> out;
  for (size_t r = 0; r < 3; ++r) out[resolutions[r]] = proj[r](taps[r]);
  return out;
}

template <typename S>
void TapProjection<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  for (size_t r = 0; r < 3; ++r) proj[r].collect(out, prefix + ".proj" + std::to_string(resolutions[r]));
}

#define MMIF_INSTANTIATE_GENERATOR(S)                                               \
  template Var<S> modulated_conv(const Var<S>&, const Var<S>&, const Var<S>&, bool); \
  template struct MappingNetwork<S>;                                                \
  template struct StyledConv<S>;                                                    \
  template struct Generator<S>;                                                     \
  template struct TapProjection<S>;

MMIF_INSTANTIATE_GENERATOR(float)
MMIF_INSTANTIATE_GENERATOR(double)

}  // namespace mmif::model
