#include "mmif/model/inversion.hpp"

#include <cmath>

namespace mmif::model {

int num_style_layers(int resolution) {
  if (resolution < 8 || (resolution & (resolution - 1)) != 0)
    throw ConfigError("generator resolution must be a power of two >= 8, got " + std::to_string(resolution));
  int log2 = 0;
  while ((1 << log2) < resolution) ++log2;
  return 2 * log2 - 2;
}

int style_level(int layer, int num_layers) {
  const int per = (num_layers + 2) / 3;
  if (layer < per) return 0;
  if (layer < 2 * per) return 1;
  return 2;
}

template <typename S>
Map2Style<S>::Map2Style(Index in_channels, Index spatial, Index hidden, Index w_dim, Rng& rng) {
  Index ch = in_channels;
  for (Index s = spatial; s > 1; s /= 2) {
    convs.push_back(Conv2d<S>::same(ch, hidden, 3, rng, 2));
    ch = hidden;
  }
  out = Linear<S>(ch, w_dim, rng);
}

template <typename S>
Var<S> Map2Style<S>::operator()(const Var<S>& x) const {
  Var<S> h = x;
  for (const auto& c : convs) h = leaky_relu(c(h), S(0.2));
  require_shape(h.dim(2) == 1 && h.dim(3) == 1, "map2style did not reach 1x1 from " + x.shape().str());
  return out(reshape(h, Shape{h.dim(0), h.dim(1)}));
}

template <typename S>
void Map2Style<S>::collect(ParamList<S>& o, const std::string& prefix) const {
  for (size_t i = 0; i < convs.size(); ++i) convs[i].collect(o, prefix + ".conv" + std::to_string(i));
  out.collect(o, prefix + ".out");
}

template <typename S>
PremodLayer<S>::PremodLayer(Index w_dim, Index hidden, Rng& rng)
    : sigma1(w_dim, hidden, rng), sigma2(hidden, w_dim, rng), mu1(w_dim, hidden, rng), mu2(hidden, w_dim, rng) {
  // Start at sigma = 1, mu = 0 so the initial w* is the normalized w'.
  sigma2.weight.mutable_value().data().setZero();
  mu2.weight.mutable_value().data().setZero();
}

template <typename S>
void PremodLayer<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  sigma1.collect(out, prefix + ".sigma1");
  sigma2.collect(out, prefix + ".sigma2");
  mu1.collect(out, prefix + ".mu1");
  mu2.collect(out, prefix + ".mu2");
}

template <typename S>
Var<S> premodulate_affine(const Var<S>& w_prime, const Var<S>& sigma, const Var<S>& mu) {
  const Index b = w_prime.dim(0), d = w_prime.dim(2);
  const int num_layers = static_cast<int>(sigma.dim(1));
  require_shape(w_prime.dim(1) == 3, "w' must have 3 rows");
  require_shape(sigma.shape() == Shape({b, num_layers, d}) && mu.shape() == sigma.shape(),
                "premodulate: affine shape mismatch");
  Var<S> normed = normalize_axis(w_prime, 2, S(1e-8));
  std::vector<Var<S>> rows;
  for (int l = 0; l < num_layers; ++l) rows.push_back(slice(normed, 1, style_level(l, num_layers), 1));
  return add(mul(sigma, concat(rows, 1)), mu);
}

template <typename S>
Var<S> premodulate(const Var<S>& w_prime, const Var<S>& structure, const std::vector<PremodLayer<S>>& layers) {
  const Index b = w_prime.dim(0), d = w_prime.dim(2);
  const int num_layers = static_cast<int>(layers.size());
  require_shape(structure.shape() == w_prime.shape(), "premodulate: structure vs w' shape mismatch");
  std::array<Var<S>, 3> s_rows;
  for (int r = 0; r < 3; ++r) s_rows[static_cast<size_t>(r)] = reshape(slice(structure, 1, r, 1), Shape{b, d});
  std::vector<Var<S>> sig, mu;
  for (int l = 0; l < num_layers; ++l) {
    const auto& p = layers[static_cast<size_t>(l)];
    const Var<S>& sr = s_rows[static_cast<size_t>(style_level(l, num_layers))];
    sig.push_back(reshape(add_scalar(p.sigma2(leaky_relu(p.sigma1(sr), S(0.2))), S(1)), Shape{b, 1, d}));
    mu.push_back(reshape(p.mu2(leaky_relu(p.mu1(sr), S(0.2))), Shape{b, 1, d}));
  }
  return premodulate_affine(w_prime, concat(sig, 1), concat(mu, 1));
}

template <typename S>
Inversion<S>::Inversion(const ModelConfig& cfg, Rng& rng) {
  const Index s = cfg.resolution;
  const auto& enc = cfg.enc_channels;
  const Index tap_ch[3] = {enc[4], enc[3], enc[2]};
  const Index tap_res[3] = {s / 32, s / 16, s / 8};
  const Index pred_res[3] = {s / 4, s / 2, s};
  for (size_t r = 0; r < 3; ++r) {
    map2style[r] = Map2Style<S>(tap_ch[r], tap_res[r], cfg.map2style_channels, cfg.w_dim, rng);
    map2structure[r] = Map2Style<S>(cfg.num_classes + 4, pred_res[r], cfg.map2structure_channels, cfg.w_dim, rng);
  }
  for (int l = 0; l < cfg.num_style_layers(); ++l) premod.emplace_back(cfg.w_dim, cfg.premod_hidden, rng);
}

template <typename S>
StyleBundle<S> Inversion<S>::operator()(const std::array<Var<S>, 3>& taps, const std::array<Var<S>, 3>& preds) const {
  std::vector<Var<S>> wp, st;
  for (size_t r = 0; r < 3; ++r) {
    Var<S> a = map2style[r](taps[r]);
    Var<S> b = map2structure[r](preds[r]);
    wp.push_back(reshape(a, Shape{a.dim(0), 1, a.dim(1)}));
    st.push_back(reshape(b, Shape{b.dim(0), 1, b.dim(1)}));
  }
  StyleBundle<S> out{concat(wp, 1), concat(st, 1), {}};
  out.w_star = premodulate(out.w_prime, out.structure, premod);
  return out;
}

template <typename S>
void Inversion<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  const char* levels[3] = {"coarse", "middle", "fine"};
  for (size_t r = 0; r < 3; ++r) {
    map2style[r].collect(out, prefix + ".map2style." + levels[r]);
    map2structure[r].collect(out, prefix + ".map2structure." + std::to_string(r));
  }
  for (size_t l = 0; l < premod.size(); ++l) premod[l].collect(out, prefix + ".premod" + std::to_string(l));
}

bool soft_update(MeanLatentState& st, const MeanLatentSampler& sampler) {
  if (!(st.tau >= 0.0 && st.tau <= 1.0)) throw ConfigError("tau must lie in [0,1]");
  require_shape(st.online.shape() == st.target.shape(), "mean latent online/target shape mismatch");
  st.online.data() = (1.0 - st.tau) * st.online.data() + st.tau * st.target.data();
  if ((st.online.data() - st.target.data()).abs().maxCoeff() >= kResampleTolerance) return false;
  st.online = st.target;
  st.target = sampler(++st.resamples);
  require_shape(st.target.shape() == st.online.shape(), "resampled mean latent has the wrong shape");
  return true;
}

Tensor<double> sample_mean_latent(const std::function<Tensor<float>(const Tensor<float>&)>& mapper, Index z_dim, int n,
                                  int num_layers, std::uint64_t seed) {
  if (n < 1) throw ConfigError("mean latent needs at least one sample");
  Rng rng(seed);
  Buffer<double> acc;
  const int chunk = 256;
  for (int done = 0; done < n; done += chunk) {
    const Index m = std::min(chunk, n - done);
    Tensor<float> w = mapper(normal_tensor<float>(Shape{m, z_dim}, rng));
    require_shape(w.rank() == 2 && w.dim(0) == m, "mapper returned " + w.shape().str());
    const auto rows = ConstRowMajorMap<float>(w.ptr(), m, w.dim(1)).template cast<double>();
    Buffer<double> sum = rows.colwise().sum().transpose().array();
    if (acc.size() == 0) acc = Buffer<double>::Zero(sum.size());
    acc += sum;
  }
  acc /= static_cast<double>(n);
  const Index d = acc.size();
  Tensor<double> out(Shape{num_layers, d});
  for (int l = 0; l < num_layers; ++l)
    for (Index j = 0; j < d; ++j) out[l * d + j] = acc[j];
  return out;
}

#define MMIF_INSTANTIATE_INVERSION(S)                                                  \
  template struct Map2Style<S>;                                                        \
  template struct PremodLayer<S>;                                                      \
  template struct Inversion<S>;                                                        \
  template Var<S> premodulate(const Var<S>&, const Var<S>&, const std::vector<PremodLayer<S>>&); \
  template Var<S> premodulate_affine(const Var<S>&, const Var<S>&, const Var<S>&);

MMIF_INSTANTIATE_INVERSION(float)
MMIF_INSTANTIATE_INVERSION(double)

}  // namespace mmif::model
