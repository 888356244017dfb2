#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/tiny.hpp"

#include "mmif/model/network.hpp"

#include <set>

using namespace mmif;
using namespace mmif::model;

namespace {

NetInput<double> random_input(const ModelConfig& c, Index b, std::uint64_t seed) {
  Rng rng(seed);
  const Index s = c.resolution;
  NetInput<double> in;
  in.image = uniform_tensor<double>(Shape{b, 3, s, s}, rng, -1, 1);
  in.mask = Tensor<double>(Shape{b, 1, s, s});
  for (Index i = 0; i < b; ++i)
    for (Index y = s / 4; y < s / 2; ++y)
      for (Index x = s / 4; x < 3 * s / 4; ++x) in.mask[(i * s + y) * s + x] = 1.0;
  in.edge = Tensor<double>(Shape{b, 1, s, s});
  for (Index i = 0; i < in.edge.size(); i += 7) in.edge[i] = 1.0;
  in.seg = Tensor<double>(Shape{b, c.num_classes, s, s});
  for (Index i = 0; i < b * s * s; ++i) {
    const Index n = i / (s * s), p = i % (s * s);
    in.seg[(n * c.num_classes + p % c.num_classes) * s * s + p] = 1.0;
  }
  return in;
}

}  // namespace

TEST_CASE("input encoding zeroes every modality under the mask and appends the mask") {
  auto c = testing::tiny_config();
  auto in = random_input(c, 2, 1);
  Tensor<double> x = encode_input(in);
  const Index s = c.resolution, ch = c.input_channels();
  REQUIRE(x.shape() == Shape({2, ch, s, s}));
  for (Index n = 0; n < 2; ++n)
    for (Index p = 0; p < s * s; ++p) {
      const double m = in.mask[n * s * s + p];
      CHECK(x[((n * ch) + ch - 1) * s * s + p] == m);
      for (Index k = 0; k < ch - 1; ++k)
        if (m > 0.5) CHECK(x[(n * ch + k) * s * s + p] == 0.0);
      CHECK(x[(n * ch) * s * s + p] == (m > 0.5 ? 0.0 : in.image[(n * 3) * s * s + p]));
    }
}

TEST_CASE("full forward produces the documented shapes") {
  auto c = testing::tiny_config();
  InpaintNet<double> net(c, 3);
  auto r = net.forward(random_input(c, 2, 2), 5);
  CHECK(r.output.shape() == Shape({2, 3, 32, 32}));
  CHECK(r.style.w_prime.shape() == Shape({2, 3, 16}));
  CHECK(r.style.structure.shape() == Shape({2, 3, 16}));
  CHECK(r.style.w_star.shape() == Shape({2, num_style_layers(32), 16}));
  for (int k = 0; k < 3; ++k) {
    const Index h = 8 << k;
    CHECK(r.dec.preds[k].rgb.shape() == Shape({2, 3, h, h}));
    CHECK(r.dec.preds[k].edge.shape() == Shape({2, 1, h, h}));
    CHECK(r.dec.preds[k].seg.shape() == Shape({2, 3, h, h}));
    CHECK(r.dec.preds[k].stacked().dim(1) == 3 + 1 + 3);
    auto sums = sum_axis(r.dec.preds[k].seg, 1);
    CHECK((sums.value().data() - 1.0).abs().maxCoeff() < 1e-6);
  }
  CHECK(r.output.value().data().abs().maxCoeff() <= 1.0);
  CHECK(r.enc.skips.size() == 4);
  CHECK(r.enc.enhanced.f.shape() == Shape({2, 16, 1, 1}));
}

TEST_CASE("network construction and forward are deterministic") {
  auto c = testing::tiny_config();
  InpaintNet<double> a(c, 9), b(c, 9), other(c, 10);
  auto in = random_input(c, 1, 4);
  auto ra = a.forward(in, 1), rb = b.forward(in, 1);
  CHECK((ra.output.value().data() == rb.output.value().data()).all());
  CHECK_FALSE((ra.output.value().data() == other.forward(in, 1).output.value().data()).all());
  // A different noise seed changes the image only through the noise path.
  a.generator.convs[1].noise_scale.mutable_value()[0] = 0.5;
  CHECK_FALSE((a.forward(in, 1).output.value().data() == a.forward(in, 2).output.value().data()).all());
  CHECK((a.forward(in, 2).output.value().data() == a.forward(in, 2).output.value().data()).all());
}

TEST_CASE("the generator is continuous in its feature taps") {
  auto c = testing::tiny_config();
  c.noise = false;
  Rng rng(5);
  Generator<double> g(c, rng);
  auto w = constant(normal_tensor<double>(Shape{2, g.num_layers(), c.w_dim}, rng));
  auto base = g.synthesize(w, {}, 0).value();
  std::map<int, Var<double>> zero, tiny;
  for (int res : {8, 16, 32}) {
    zero[res] = constant(Tensor<double>(Shape{2, g.channels_at(res), res, res}));
    Tensor<double> t = normal_tensor<double>(Shape{2, g.channels_at(res), res, res}, rng);
    t.data() *= 1e-6 / t.data().matrix().norm();
    tiny[res] = constant(t);
  }
  CHECK((g.synthesize(w, zero, 0).value().data() == base.data()).all());
  CHECK((g.synthesize(w, tiny, 0).value().data() - base.data()).abs().maxCoeff() < 1e-4);
  CHECK_THROWS(g.synthesize(w, {{16, constant(Tensor<double>(Shape{2, 1, 16, 16}))}}, 0));
  CHECK_THROWS(g.synthesize(constant(Tensor<double>(Shape{2, 3, c.w_dim})), {}, 0));
}

TEST_CASE("add and concat fusion bypass the attention path") {
  Rng rng(6);
  for (FusionKind k : {FusionKind::Add, FusionKind::Concat}) {
    FusionBlock<double> m(k, 4, 3, 2, 2, rng);
    ParamList<double> ps;
    m.collect(ps, "f");
    for (const auto& [name, p] : ps) CHECK(name.find("gma") == std::string::npos);
  }
  FusionBlock<double> add(FusionKind::Add, 4, 3, 2, 2, rng);
  auto a = testing::random_input(Shape{1, 4, 4, 4}, rng), b = testing::random_input(Shape{1, 4, 4, 4}, rng);
  auto cc = testing::random_input(Shape{1, 4, 4, 4}, rng);
  auto y = add(a, b, cc, Var<double>(), Var<double>());
  auto s = mmif::add(mmif::add(a, b), cc);
  CHECK((y.value().data() - mmif::add(s, add.ffn(s)).value().data()).abs().maxCoeff() == 0.0);
}

TEST_CASE("every ablation variant runs forward") {
  auto in_cfg = testing::tiny_config();
  auto in = random_input(in_cfg, 1, 7);
  for (FusionKind f : {FusionKind::GmaAdn, FusionKind::Add, FusionKind::Concat, FusionKind::GmaAdaIN, FusionKind::GmaSpade})
    for (BottleneckKind b : {BottleneckKind::ACB, BottleneckKind::RES, BottleneckKind::AOT}) {
      auto c = in_cfg;
      c.fusion = f;
      c.bottleneck = b;
      InpaintNet<double> net(c, 1);
      auto r = net.forward(in, 0);
      INFO(to_string(f), "/", to_string(b));
      CHECK(r.output.value().data().isFinite().all());
    }
  for (GuidanceKind g : {GuidanceKind::Biased, GuidanceKind::GroundTruth}) {
    auto c = in_cfg;
    c.guidance = g;
    InpaintNet<double> net(c, 1);
    GuideMaps<double> guide;
    for (int r = 0; r < 3; ++r) {
      const Index h = 8 << r;
      guide.edge[r] = constant(Tensor<double>(Shape{1, 1, h, h}));
      guide.onehot[r] = constant(Tensor<double>::ones(Shape{1, 3, h, h}));
    }
    CHECK(net.forward(in, 0, &guide).output.value().data().isFinite().all());
  }
  // Without explicit maps, gt guidance reads the input's own hints.
  auto c = in_cfg;
  c.guidance = GuidanceKind::GroundTruth;
  InpaintNet<double> net(c, 1);
  auto own = guide_from_hints(in);
  CHECK((net.forward(in, 0).output.value().data() == net.forward(in, 0, &own).output.value().data()).all());
}

TEST_CASE("hint guide maps pool edges by max and sample labels") {
  NetInput<double> in;
  in.image = Tensor<double>(Shape{1, 3, 8, 8});
  in.mask = Tensor<double>(Shape{1, 1, 8, 8});
  in.edge = Tensor<double>(Shape{1, 1, 8, 8});
  in.seg = Tensor<double>(Shape{1, 2, 8, 8});
  in.edge(0, 0, 5, 6) = 1.0;
  for (Index i = 0; i < 64; ++i) in.seg[(i % 8 < 4 ? 0 : 64) + i] = 1.0;
  auto g = guide_from_hints(in);
  CHECK(g.edge[0].shape() == Shape({1, 1, 2, 2}));
  CHECK(g.edge[0].value()(0, 0, 1, 1) == 1.0);
  CHECK(g.edge[0].value().data().sum() == 1.0);
  CHECK(g.edge[1].value()(0, 0, 2, 3) == 1.0);
  CHECK(g.onehot[0].value()(0, 0, 0, 0) == 1.0);
  CHECK(g.onehot[0].value()(0, 1, 0, 1) == 1.0);
  CHECK(g.onehot[2].value().data().sum() == 64.0);
}

TEST_CASE("parameter groups partition the network") {
  InpaintNet<float> net(testing::tiny_config(), 1);
  CHECK(net.encoder_params().size() + net.generator_params().size() == net.all_params().size());
  std::set<std::string> names;
  for (const auto& [n, p] : net.all_params()) CHECK(names.insert(n).second);
}
