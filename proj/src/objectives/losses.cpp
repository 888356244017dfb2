#include "mmif/objectives/losses.hpp"

#include <cmath>

namespace mmif::objectives {

template <typename S>
FeatureExtractor<S>::FeatureExtractor(std::uint64_t seed, Index base) {
  Rng rng(seed);
  const Index b = base;
  convs.push_back(Conv2d<S>::same(3, b, 3, rng));
  convs.push_back(Conv2d<S>::same(b, 2 * b, 3, rng, 2));
  convs.push_back(Conv2d<S>::same(2 * b, 2 * b, 3, rng, 1, 2));
  convs.push_back(Conv2d<S>::same(2 * b, 4 * b, 3, rng, 2));
  convs.push_back(Conv2d<S>::same(4 * b, 4 * b, 3, rng, 1, 4));
  is_tap = {true, false, true, false, true};
  for (auto& c : convs) {
    c.weight.mutable_value().data() *= static_cast<S>(std::sqrt(2.0));
    c.weight.set_requires_grad(false);
    c.bias.set_requires_grad(false);
  }
}

template <typename S>
std::vector<Var<S>> FeatureExtractor<S>::taps(const Var<S>& image) const {
  std::vector<Var<S>> out;
  Var<S> h = image;
  for (size_t i = 0; i < convs.size(); ++i) {
    h = relu(convs[i](h));
    if (is_tap[i]) out.push_back(h);
  }
  return out;
}

template <typename S>
Tensor<S> FeatureExtractor<S>::embed(const Tensor<S>& images) const {
  NoGradGuard ng;
  std::vector<Var<S>> pooled;
  for (const Var<S>& t : taps(constant(images))) {
    const Index b = t.dim(0), c = t.dim(1);
    pooled.push_back(reshape(mean_axis(reshape(t, Shape{b, c, t.dim(2) * t.dim(3)}), 2), Shape{b, c}));
  }
  return concat(pooled, 1).value();
}

template <typename S>
Var<S> perceptual_loss(const std::vector<Var<S>>& ta, const std::vector<Var<S>>& tb) {
  require_shape(ta.size() == tb.size() && !ta.empty(), "perceptual_loss: tap count mismatch");
  Var<S> total;
  for (size_t p = 0; p < ta.size(); ++p) {
    require_shape(ta[p].shape() == tb[p].shape(), "perceptual_loss: tap shape mismatch");
    const Index b = ta[p].dim(0), n = ta[p].size() / b;
    Var<S> term = scale(mean(row_norm(reshape(sub(ta[p], tb[p]), Shape{b, n}))), S(1) / static_cast<S>(n));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename S>
Var<S> perceptual_loss(const FeatureExtractor<S>& ex, const Var<S>& a, const Var<S>& b) {
  return perceptual_loss(ex.taps(a), ex.taps(b));
}

template <typename S>
Var<S> l1_loss(const Var<S>& a, const Var<S>& b) {
  return mean(abs(sub(a, b)));
}

template <typename S>
Var<S> bce_loss(const Var<S>& prob, const Var<S>& target) {
  require_shape(prob.shape() == target.shape(), "bce_loss: shape mismatch");
  const S eps = static_cast<S>(kProbEps);
  Var<S> p = clamp(prob, eps, S(1) - eps);
  Var<S> pos = mul(target, log(p));
  Var<S> negp = mul(add_scalar(neg(target), S(1)), log(add_scalar(neg(p), S(1))));
  return neg(mean(add(pos, negp)));
}

template <typename S>
Var<S> ce_loss(const Var<S>& prob, const Var<S>& onehot) {
  require_shape(prob.shape() == onehot.shape(), "ce_loss: shape mismatch");
  const S eps = static_cast<S>(kProbEps);
  const Index pixels = prob.size() / prob.dim(1);
  return scale(sum(mul(onehot, log(clamp(prob, eps, S(1) - eps)))), S(-1) / static_cast<S>(pixels));
}

template <typename S>
Var<S> fidelity_loss(const Var<S>& w_star, const Var<S>& w_bar) {
  const Index b = w_star.dim(0);
  Var<S> diff = sub(w_star, w_bar);
  return mean(row_norm(reshape(diff, Shape{b, diff.size() / b})));
}

template <typename S>
Var<S> adversarial_g_loss(const Var<S>& fake_scores) {
  return neg(mean(fake_scores));
}

template <typename S>
Var<S> discriminator_loss(const Var<S>& real_scores, const Var<S>& fake_scores) {
  return add(mean(relu(add_scalar(neg(real_scores), S(1)))), mean(relu(add_scalar(fake_scores, S(1)))));
}

namespace {

// softplus(x) = relu(x) + log(1 + exp(-|x|)), stable for large |x|
template <typename S>
Var<S> softplus(const Var<S>& x) {
  return add(relu(x), log(add_scalar(exp(neg(abs(x))), S(1))));
}

}  // namespace

template <typename S>
Var<S> nonsaturating_g_loss(const Var<S>& fake_scores) {
  return mean(softplus(neg(fake_scores)));
}

template <typename S>
Var<S> nonsaturating_d_loss(const Var<S>& real_scores, const Var<S>& fake_scores) {
  return add(mean(softplus(neg(real_scores))), mean(softplus(fake_scores)));
}

template <typename S>
MultiScaleTarget<S> make_targets(const Tensor<S>& rgb, const Tensor<S>& edge, const Tensor<std::int32_t>& labels,
                                 int num_classes) {
  NoGradGuard ng;
  const Index b = rgb.dim(0), s = rgb.dim(2);
  require_shape(edge.shape() == Shape({b, 1, s, s}), "make_targets: edge must be (B,1,s,s)");
  require_shape(labels.shape() == Shape({b, s, s}), "make_targets: labels must be (B,s,s)");
  MultiScaleTarget<S> t;
  for (int r = 0; r < 3; ++r) {
    const int f = 4 >> r;
    const Index h = s / f;
    const auto ri = static_cast<size_t>(r);
    t.rgb[ri] = f > 1 ? avg_pool(constant(rgb), f) : constant(rgb);
    Tensor<S> e(Shape{b, 1, h, h});
    for (Index n = 0; n < b; ++n)
      for (Index y = 0; y < s; ++y)
        for (Index x = 0; x < s; ++x)
          if (edge[(n * s + y) * s + x] > S(0.5)) e[(n * h + y / f) * h + x / f] = S(1);
    t.edge[ri] = constant(std::move(e));
    Tensor<std::int32_t> lab = resize_nearest(labels, h, h);
    Tensor<S> oh(Shape{b, num_classes, h, h});
    for (Index n = 0; n < b; ++n)
      for (Index i = 0; i < h * h; ++i) {
        const std::int32_t k = lab[n * h * h + i];
        require_shape(k >= 0 && k < num_classes, "label " + std::to_string(k) + " outside [0,K)");
        oh[(n * num_classes + k) * h * h + i] = S(1);
      }
    t.onehot[ri] = constant(std::move(oh));
  }
  return t;
}

template <typename S>
MsrParts<S> msr_loss(const std::array<model::ScalePrediction<S>, 3>& preds, const MultiScaleTarget<S>& target,
                     const FeatureExtractor<S>& ex) {
  MsrParts<S> parts;
  for (size_t r = 0; r < 3; ++r) {
    Var<S> rec = l1_loss(preds[r].rgb, target.rgb[r]);
    Var<S> per = perceptual_loss(ex, preds[r].rgb, target.rgb[r]);
    Var<S> edg = bce_loss(preds[r].edge, target.edge[r]);
    Var<S> seg = ce_loss(preds[r].seg, target.onehot[r]);
    parts.rec[r] = rec.item();
    parts.perceptual[r] = per.item();
    parts.edge[r] = edg.item();
    parts.seg[r] = seg.item();
    Var<S> scale_sum = add(add(rec, per), add(edg, seg));
    parts.total = parts.total.defined() ? add(parts.total, scale_sum) : scale_sum;
  }
  return parts;
}

template <typename S>
Var<S> total_loss(const Var<S>& ipt, const Var<S>& msr, const Var<S>& fid, const LossWeights& w) {
  const std::pair<const char*, const Var<S>*> terms[] = {{"inpainting", &ipt}, {"msr", &msr}, {"fidelity", &fid}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(static_cast<double>(v->item())))
      throw LossError(std::string("non-finite ") + name + " loss: " + std::to_string(v->item()));
  return add(add(ipt, scale(msr, static_cast<S>(w.msr))), scale(fid, static_cast<S>(w.fid)));
}

namespace {
template <typename S>
void normalize(Buffer<S>& x) {
  const S n = x.matrix().norm();
  x /= std::max(n, S(1e-12));
}
}  // namespace

template <typename S>
SpectralNorm<S>::SpectralNorm(const Tensor<S>& weight, Rng& rng, int init_iters) {
  const Index rows = weight.dim(0), cols = weight.size() / rows;
  u = normal_tensor<S>(Shape{rows}, rng);
  v = Tensor<S>(Shape{cols});
  normalize(u.data());
  for (int i = 0; i < init_iters; ++i) iterate(weight);
}

template <typename S>
void SpectralNorm<S>::iterate(const Tensor<S>& weight) {
  const Index rows = weight.dim(0), cols = weight.size() / rows;
  auto w = ConstRowMajorMap<S>(weight.ptr(), rows, cols);
  v.data() = (w.transpose() * u.data().matrix()).array();
  normalize(v.data());
  u.data() = (w * v.data().matrix()).array();
  normalize(u.data());
}

template <typename S>
Var<S> SpectralNorm<S>::operator()(const Var<S>& weight, bool update) {
  if (update) iterate(weight.value());
  const Index rows = weight.dim(0), cols = weight.size() / rows;
  Var<S> wm = reshape(weight, Shape{rows, cols});
  Var<S> sigma = matmul(matmul(constant(u.reshaped(Shape{1, rows})), wm), constant(v.reshaped(Shape{cols, 1})));
  // Guarded denominator: a zero matrix stays zero.
  return div(weight, reshape(add_scalar(abs(sigma), S(1e-12)), Shape{1, 1, 1, 1}));
}

template <typename S>
Discriminator<S>::Discriminator(Index in_channels, Index base, Rng& rng) {
  const Index widths[5] = {base, 2 * base, 4 * base, 8 * base, 1};
  Index prev = in_channels;
  for (int i = 0; i < 5; ++i) {
    convs.push_back(Conv2d<S>::same(prev, widths[i], 3, rng, i < 4 ? 2 : 1));
    norms.emplace_back(convs.back().weight.value(), rng);
    prev = widths[i];
  }
}

template <typename S>
Var<S> Discriminator<S>::operator()(const Var<S>& x, bool update) {
  Var<S> h = x;
  for (size_t i = 0; i < convs.size(); ++i) {
    h = conv2d(h, norms[i](convs[i].weight, update), convs[i].bias, convs[i].spec);
    if (i + 1 < convs.size()) h = leaky_relu(h, S(0.2));
  }
  return h;
}

template <typename S>
std::vector<Tensor<S>> Discriminator<S>::normalized_weights() const {
  NoGradGuard ng;
  std::vector<Tensor<S>> out;
  for (size_t i = 0; i < convs.size(); ++i) {
    SpectralNorm<S> copy = norms[i];
    out.push_back(copy(convs[i].weight, true).value());
  }
  return out;
}

template <typename S>
void Discriminator<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  for (size_t i = 0; i < convs.size(); ++i) convs[i].collect(out, prefix + ".conv" + std::to_string(i));
}

#define MMIF_INSTANTIATE_LOSSES(S)                                                                        \
  template struct FeatureExtractor<S>;                                                                    \
  template struct SpectralNorm<S>;                                                                        \
  template struct Discriminator<S>;                                                                       \
  template Var<S> perceptual_loss(const std::vector<Var<S>>&, const std::vector<Var<S>>&);                \
  template Var<S> perceptual_loss(const FeatureExtractor<S>&, const Var<S>&, const Var<S>&);              \
  template Var<S> l1_loss(const Var<S>&, const Var<S>&);                                                  \
  template Var<S> bce_loss(const Var<S>&, const Var<S>&);                                                 \
  template Var<S> ce_loss(const Var<S>&, const Var<S>&);                                                  \
  template Var<S> fidelity_loss(const Var<S>&, const Var<S>&);                                            \
  template Var<S> adversarial_g_loss(const Var<S>&);                                                      \
  template Var<S> discriminator_loss(const Var<S>&, const Var<S>&);                                       \
  template Var<S> nonsaturating_g_loss(const Var<S>&);                                                    \
  template Var<S> nonsaturating_d_loss(const Var<S>&, const Var<S>&);                                     \
  template MultiScaleTarget<S> make_targets(const Tensor<S>&, const Tensor<S>&, const Tensor<std::int32_t>&, int); \
  template MsrParts<S> msr_loss(const std::array<model::ScalePrediction<S>, 3>&, const MultiScaleTarget<S>&, \
                                const FeatureExtractor<S>&);                                              \
  template Var<S> total_loss(const Var<S>&, const Var<S>&, const Var<S>&, const LossWeights&);

MMIF_INSTANTIATE_LOSSES(float)
MMIF_INSTANTIATE_LOSSES(double)

}  // namespace mmif::objectives
