#pragma once

// Oracle and gradient suites shared by the unit tests and the acceptance runner.

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

#include <string>
#include <vector>

namespace mmif::testing {

struct SuiteEntry {
  std::string name;
  double error = 0.0;
};

namespace detail {

inline Var<double> leaf(Shape s, Rng& rng, double std = 1.0) { return random_input(std::move(s), rng, std); }

/// Replaces every parameter value with fresh normal draws so zero-initialized layers are exercised.
inline void randomize(const ParamList<double>& params, Rng& rng, double std = 0.5) {
  for (const auto& [n, p] : params) p.mutable_value() = normal_tensor<double>(p.shape(), rng, std);
}

template <typename M>
ParamList<double> params_of(const M& m) {
  ParamList<double> out;
  m.collect(out, "m");
  return out;
}

inline ParamList<double> with(ParamList<double> params, std::initializer_list<std::pair<std::string, Var<double>>> extra) {
  for (const auto& e : extra) params.push_back(e);
  return params;
}

}  // namespace detail

/// Max absolute deviation between each block and its loop oracle on random tiny inputs.
inline std::vector<SuiteEntry> equation_suite(std::uint64_t seed = 11) {
  using namespace model;
  using detail::leaf;
  namespace o = oracle;
  Rng rng(seed);
  std::vector<SuiteEntry> out;

  {
    ACBLayer<double> layer(4, {1, 2, 3, 4}, 3, 4, rng);
    detail::randomize(detail::params_of(layer), rng);
    auto f = leaf(Shape{2, 4, 7, 6}, rng);
    auto g = constant(o::map(leaf(Shape{2, 1, 7, 6}, rng).value(), o::sigmoid));
    auto gp = constant(o::map(leaf(Shape{2, 1, 7, 6}, rng).value(), o::sigmoid));
    auto got = layer({f, g}, gp);
    auto [rf, rg] = o::acb_layer(layer, f.value(), g.value(), gp.value());
    out.push_back({"acb_layer", std::max(o::max_abs_diff(got.f.value(), rf), o::max_abs_diff(got.g.value(), rg))});
  }
  {
    ADN<double> m(5, 3, rng);
    detail::randomize(detail::params_of(m), rng);
    auto f = leaf(Shape{2, 5, 4, 6}, rng, 2.0), c = leaf(Shape{2, 3, 4, 6}, rng);
    out.push_back({"adn", o::max_abs_diff(m(f, c).value(), o::adn(m, f.value(), c.value()))});
  }
  {
    auto q = leaf(Shape{2, 4, 8, 8}, rng), k = leaf(Shape{2, 4, 8, 8}, rng), v = leaf(Shape{2, 4, 8, 8}, rng);
    auto gate = constant(o::map(leaf(Shape{2, 1, 4, 4}, rng).value(), o::sigmoid));
    double err = o::max_abs_diff(gma_attention(q, k, v, gate, 2, 2).value(),
                                 o::gma_attention(q.value(), k.value(), v.value(), gate.value(), 2, 2));
    auto gate1 = constant(o::map(leaf(Shape{2, 1, 8, 8}, rng).value(), o::sigmoid));
    err = std::max(err, o::max_abs_diff(gma_attention(q, k, v, gate1, 1, 4).value(),
                                        o::gma_attention(q.value(), k.value(), v.value(), gate1.value(), 1, 4)));
    GMA<double> m(4, 2, 2, rng);
    detail::randomize(detail::params_of(m), rng);
    auto gi = leaf(Shape{2, 2, 8, 8}, rng);
    err = std::max(err, o::max_abs_diff(m(q, gi).value(), o::gma(m, q.value(), gi.value())));
    out.push_back({"gma_attention", err});
  }
  {
    GatedFeedForward<double> m(4, rng);
    auto x = leaf(Shape{2, 4, 5, 5}, rng);
    out.push_back({"gated_feed_forward", o::max_abs_diff(m(x).value(), o::gated_feed_forward(m, x.value()))});
  }
  {
    std::vector<PremodLayer<double>> layers;
    for (int l = 0; l < 8; ++l) layers.emplace_back(6, 5, rng);
    for (const auto& l : layers) detail::randomize(detail::params_of(l), rng);
    auto wp = leaf(Shape{2, 3, 6}, rng), st = leaf(Shape{2, 3, 6}, rng);
    out.push_back({"premodulate", o::max_abs_diff(premodulate(wp, st, layers).value(),
                                                   o::premodulate(wp.value(), st.value(), layers))});
  }
  {
    Map2Style<double> m(3, 8, 4, 6, rng);
    auto x = leaf(Shape{2, 3, 8, 8}, rng);
    out.push_back({"map2style", o::max_abs_diff(m(x).value(), o::map2style(m, x.value()))});
  }
  {
    auto x = leaf(Shape{2, 3, 5, 6}, rng), s = leaf(Shape{2, 3}, rng), w = leaf(Shape{4, 3, 3, 3}, rng);
    double err = 0;
    for (bool demod : {true, false})
      err = std::max(err, o::max_abs_diff(modulated_conv(x, s, w, demod).value(),
                                          o::modulated_conv(x.value(), s.value(), w.value(), demod)));
    out.push_back({"modulated_conv", err});
  }
  objectives::FeatureExtractor<double> ex(5, 4);
  {
    auto a = leaf(Shape{2, 3, 16, 16}, rng), b = leaf(Shape{2, 3, 16, 16}, rng);
    const double got = objectives::perceptual_loss(ex, a, b).item();
    out.push_back({"perceptual_loss", std::abs(got - o::perceptual(ex, a.value(), b.value()))});
  }
  {
    const int k = 3;
    Tensor<double> rgb = normal_tensor<double>(Shape{2, 3, 16, 16}, rng, 0.5);
    Tensor<double> edge = o::map(normal_tensor<double>(Shape{2, 1, 16, 16}, rng), [](double v) { return v > 0.8 ? 1.0 : 0.0; });
    Tensor<std::int32_t> labels(Shape{2, 16, 16});
    std::uniform_int_distribution<int> lab(0, k - 1);
    for (Index i = 0; i < labels.size(); ++i) labels[i] = lab(rng);
    auto target = objectives::make_targets(rgb, edge, labels, k);
    std::array<ScalePrediction<double>, 3> preds;
    std::array<Tensor<double>, 3> pr, pe, ps;
    for (int r = 0; r < 3; ++r) {
      const Index h = 4 << r;
      preds[r].rgb = tanh(leaf(Shape{2, 3, h, h}, rng));
      preds[r].edge = sigmoid(leaf(Shape{2, 1, h, h}, rng));
      preds[r].seg = softmax(leaf(Shape{2, k, h, h}, rng), 1);
      pr[r] = preds[r].rgb.value();
      pe[r] = preds[r].edge.value();
      ps[r] = preds[r].seg.value();
    }
    const double got = objectives::msr_loss(preds, target, ex).total.item();
    out.push_back({"msr_loss", std::abs(got - o::msr(ex, pr, pe, ps, target))});
  }
  {
    auto ws = leaf(Shape{3, 4, 6}, rng), wb = leaf(Shape{4, 6}, rng);
    const double got = objectives::fidelity_loss(ws, wb).item();
    out.push_back({"fidelity_loss", std::abs(got - o::fidelity(ws.value(), wb.value()))});
  }
  return out;
}

/// Worst relative error of central differences against reverse-mode gradients per block.
inline std::vector<SuiteEntry> gradient_suite(std::uint64_t seed = 12) {
  using namespace model;
  using detail::leaf;
  using detail::params_of;
  using detail::with;
  Rng rng(seed);
  std::vector<SuiteEntry> out;
  auto run = [&](const std::string& name, const std::function<Var<double>()>& f, const ParamList<double>& inputs) {
    out.push_back({name, grad_check(f, inputs).max_rel_error});
  };
  const Shape s{1, 2, 4, 4};

  {
    GatedConv<double> m(2, 2, 3, rng);
    auto x = leaf(s, rng);
    run("gated_conv", [&] { auto r = m(x); return concat<double>({r.f, r.g}, 1); }, with(params_of(m), {{"x", x}}));
  }
  {
    SelfAttention2d<double> m(2, rng);
    m.gamma.mutable_value()[0] = 0.7;
    auto x = leaf(s, rng);
    run("self_attention", [&] { return m(x); }, with(params_of(m), {{"x", x}}));
  }
  {
    ACBLayer<double> m(2, {1, 2}, 2, 3, rng);
    detail::randomize(params_of(m), rng);
    auto f = leaf(s, rng), g = leaf(Shape{1, 1, 4, 4}, rng), gp = leaf(Shape{1, 1, 4, 4}, rng);
    run("acb_layer", [&] { auto r = m({f, sigmoid(g)}, sigmoid(gp)); return concat<double>({r.f, r.g}, 1); },
        with(params_of(m), {{"f", f}, {"g", g}, {"gp", gp}}));
  }
  {
    ResLayer<double> m(2, rng);
    auto f = leaf(s, rng), g = leaf(Shape{1, 1, 4, 4}, rng);
    run("res_layer", [&] { auto r = m({f, sigmoid(g)}); return concat<double>({r.f, r.g}, 1); },
        with(params_of(m), {{"f", f}, {"g", g}}));
  }
  {
    AOTLayer<double> m(2, {1, 2}, rng);
    auto f = leaf(s, rng), g = leaf(Shape{1, 1, 4, 4}, rng);
    run("aot_layer", [&] { auto r = m({f, sigmoid(g)}); return concat<double>({r.f, r.g}, 1); },
        with(params_of(m), {{"f", f}, {"g", g}}));
  }
  {
    ADN<double> m(2, 3, rng);
    auto f = leaf(s, rng), c = leaf(Shape{1, 3, 4, 4}, rng);
    run("adn", [&] { return m(f, c); }, with(params_of(m), {{"f", f}, {"c", c}}));
  }
  {
    AdaINNorm<double> m(2, 3, rng);
    auto f = leaf(s, rng), c = leaf(Shape{1, 3, 4, 4}, rng);
    run("adain", [&] { return m(f, c); }, with(params_of(m), {{"f", f}, {"c", c}}));
  }
  {
    SpadeNorm<double> m(2, 3, rng);
    auto f = leaf(s, rng), c = leaf(Shape{1, 3, 4, 4}, rng);
    run("spade", [&] { return m(f, c); }, with(params_of(m), {{"f", f}, {"c", c}}));
  }
  {
    auto q = leaf(s, rng), k = leaf(s, rng), v = leaf(s, rng), gate = leaf(Shape{1, 1, 2, 2}, rng);
    run("gma_attention", [&] { return gma_attention(q, k, v, sigmoid(gate), 2, 2); },
        {{"q", q}, {"k", k}, {"v", v}, {"gate", gate}});
  }
  {
    GMA<double> m(2, 2, 1, rng);
    auto x = leaf(s, rng), gi = leaf(s, rng);
    run("gma", [&] { return m(x, gi); }, with(params_of(m), {{"x", x}, {"gi", gi}}));
  }
  {
    GatedFeedForward<double> m(2, rng);
    auto x = leaf(s, rng);
    run("gated_feed_forward", [&] { return m(x); }, with(params_of(m), {{"x", x}}));
  }
  for (FusionKind kind : {FusionKind::GmaAdn, FusionKind::Add, FusionKind::Concat, FusionKind::GmaAdaIN, FusionKind::GmaSpade}) {
    FusionBlock<double> m(kind, 2, 3, 2, 2, rng);
    auto a = leaf(s, rng), b = leaf(s, rng), c = leaf(s, rng), cond = leaf(Shape{1, 3, 4, 4}, rng), gi = leaf(s, rng);
    run("fusion_" + to_string(kind), [&] { return m(a, b, c, cond, gi); },
        with(params_of(m), {{"a", a}, {"b", b}, {"c", c}, {"cond", cond}, {"gi", gi}}));
  }
  {
    Map2Style<double> m(2, 4, 3, 5, rng);
    auto x = leaf(s, rng);
    run("map2style", [&] { return m(x); }, with(params_of(m), {{"x", x}}));
  }
  {
    std::vector<PremodLayer<double>> layers;
    ParamList<double> ps;
    for (int l = 0; l < 4; ++l) {
      layers.emplace_back(4, 3, rng);
      detail::randomize(params_of(layers.back()), rng);
      layers.back().collect(ps, "l" + std::to_string(l));
    }
    auto wp = leaf(Shape{1, 3, 4}, rng), st = leaf(Shape{1, 3, 4}, rng);
    run("premodulate", [&] { return premodulate(wp, st, layers); }, with(ps, {{"wp", wp}, {"st", st}}));
  }
  {
    auto x = leaf(s, rng), st = leaf(Shape{1, 2}, rng), w = leaf(Shape{3, 2, 3, 3}, rng);
    run("modulated_conv", [&] { return modulated_conv(x, st, w, true); }, {{"x", x}, {"s", st}, {"w", w}});
  }
  {
    StyledConv<double> m(4, 2, 3, 3, true, true, rng);
    m.noise_scale.mutable_value()[0] = 0.3;
    auto x = leaf(s, rng), w = leaf(Shape{1, 4}, rng);
    auto noise = constant(normal_tensor<double>(Shape{1, 1, 4, 4}, rng));
    run("styled_conv", [&] { return m(x, w, noise); }, with(params_of(m), {{"x", x}, {"w", w}}));
  }
  {
    MappingNetwork<double> m(4, 2, rng);
    auto z = leaf(Shape{2, 4}, rng);
    run("mapping", [&] { return m(z); }, with(params_of(m), {{"z", z}}));
  }
  objectives::FeatureExtractor<double> ex(3, 2);
  {
    auto a = leaf(Shape{1, 3, 8, 8}, rng), b = leaf(Shape{1, 3, 8, 8}, rng);
    run("perceptual_loss", [&] { return objectives::perceptual_loss(ex, a, b); }, {{"a", a}, {"b", b}});
  }
  {
    Tensor<double> rgb = normal_tensor<double>(Shape{1, 3, 16, 16}, rng, 0.5);
    Tensor<double> edge = oracle::map(normal_tensor<double>(Shape{1, 1, 16, 16}, rng), [](double v) { return v > 0.5 ? 1.0 : 0.0; });
    Tensor<std::int32_t> labels(Shape{1, 16, 16});
    for (Index i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(i % 2);
    auto target = objectives::make_targets(rgb, edge, labels, 2);
    ParamList<double> ins;
    std::array<Var<double>, 9> raw;
    for (int r = 0; r < 3; ++r) {
      const Index h = 4 << r;
      raw[3 * r] = leaf(Shape{1, 3, h, h}, rng);
      raw[3 * r + 1] = leaf(Shape{1, 1, h, h}, rng);
      raw[3 * r + 2] = leaf(Shape{1, 2, h, h}, rng);
      for (int j = 0; j < 3; ++j) ins.emplace_back("p" + std::to_string(3 * r + j), raw[3 * r + j]);
    }
    run("msr_loss", [&] {
      std::array<ScalePrediction<double>, 3> p;
      for (int r = 0; r < 3; ++r) p[r] = {tanh(raw[3 * r]), sigmoid(raw[3 * r + 1]), softmax(raw[3 * r + 2], 1)};
      return objectives::msr_loss(p, target, ex).total;
    }, ins);
  }
  {
    auto ws = leaf(Shape{2, 3, 4}, rng), wb = leaf(Shape{3, 4}, rng);
    run("fidelity_loss", [&] { return objectives::fidelity_loss(ws, wb); }, {{"ws", ws}, {"wb", wb}});
  }
  {
    auto r = leaf(Shape{2, 1, 3, 3}, rng), f = leaf(Shape{2, 1, 3, 3}, rng);
    run("discriminator_loss", [&] { return objectives::discriminator_loss(r, f); }, {{"r", r}, {"f", f}});
    run("adversarial_g_loss", [&] { return objectives::adversarial_g_loss(f); }, {{"f", f}});
  }
  {
    auto w = leaf(Shape{3, 2, 3, 3}, rng);
    objectives::SpectralNorm<double> sn(w.value(), rng);
    run("spectral_norm", [&] { return sn(w, false); }, {{"w", w}});
  }
  return out;
}

}  // namespace mmif::testing
