#include "doctest.h"
#include "support/gradcheck.hpp"

#include "mmif/core/optim.hpp"

using namespace mmif;
using mmif::testing::grad_check;
using mmif::testing::random_input;

namespace {

// Direct loop convolution used as the reference for conv2d.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, ConvSpec s) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const Index ho = (h + 2 * s.pad - s.dilation * (kh - 1) - 1) / s.stride + 1;
  const Index wo = (wd + 2 * s.pad - s.dilation * (kw - 1) - 1) / s.stride + 1;
  Tensor<double> out(Shape{n, o, ho, wo});
  for (Index ni = 0; ni < n; ++ni)
    for (Index oi = 0; oi < o; ++oi)
      for (Index y = 0; y < ho; ++y)
        for (Index xx = 0; xx < wo; ++xx) {
          double acc = b.size() ? b[oi] : 0.0;
          for (Index ci = 0; ci < c; ++ci)
            for (Index i = 0; i < kh; ++i)
              for (Index j = 0; j < kw; ++j) {
                const Index iy = y * s.stride - s.pad + i * s.dilation;
                const Index ix = xx * s.stride - s.pad + j * s.dilation;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x(ni, ci, iy, ix) * w(oi, ci, i, j);
              }
          out(ni, oi, y, xx) = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop for stride, padding and dilation") {
  Rng rng(1);
  for (ConvSpec s : {ConvSpec{1, 1, 1}, ConvSpec{2, 1, 1}, ConvSpec{1, 2, 2}, ConvSpec{1, 3, 3}, ConvSpec{2, 0, 1}}) {
    auto x = random_input(Shape{2, 3, 7, 6}, rng);
    auto w = random_input(Shape{4, 3, 3, 3}, rng);
    auto b = random_input(Shape{4}, rng);
    auto y = conv2d(x, w, b, s);
    auto ref = naive_conv(x.value(), w.value(), b.value(), s);
    REQUIRE(y.shape() == ref.shape());
    CHECK((y.value().data() - ref.data()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gradients of primitives match central differences") {
  Rng rng(2);
  auto x = random_input(Shape{2, 3, 4, 4}, rng);
  auto y = random_input(Shape{2, 1, 4, 4}, rng);
  auto w = random_input(Shape{5, 3, 3, 3}, rng, 0.3);
  auto b = random_input(Shape{5}, rng);
  Buffer<double> pos_data = normal_tensor<double>(Shape{2, 3, 4, 4}, rng).data().abs() + 0.5;
  auto pos_t = Var<double>(Tensor<double>(Shape{2, 3, 4, 4}, pos_data), true);

  const std::vector<std::pair<std::string, std::function<Var<double>()>>> cases = {
      {"broadcast mul", [&] { return mul(x, y); }},
      {"broadcast div", [&] { return div(x, add_scalar(square(y), 1.0)); }},
      {"sub", [&] { return sub(y, x); }},
      {"sigmoid", [&] { return sigmoid(x); }},
      {"tanh", [&] { return tanh(x); }},
      {"elu", [&] { return elu(x); }},
      {"leaky", [&] { return leaky_relu(x, 0.2); }},
      {"log/sqrt", [&] { return add(log(pos_t), sqrt(pos_t)); }},
      {"softmax c", [&] { return softmax(x, 1); }},
      {"sum_axis", [&] { return sum_axis(x, 2); }},
      {"max_axis", [&] { return max_axis(x, 1); }},
      {"conv", [&] { return conv2d(x, w, b, ConvSpec{1, 2, 2}); }},
      {"conv stride", [&] { return conv2d(x, w, b, ConvSpec{2, 1, 1}); }},
      {"upsample", [&] { return upsample_nearest(x, 2); }},
      {"avg_pool", [&] { return avg_pool(x, 2); }},
      {"concat/slice", [&] { return slice(concat<double>({x, y, x}, 1), 1, 2, 4); }},
      {"patchify", [&] { return patchify(x, 2, 1); }},
      {"matmul", [&] { return matmul(reshape(x, Shape{2, 3, 16}), transpose(reshape(x, Shape{2, 3, 16}))); }},
  };
  for (const auto& [name, f] : cases) {
    auto r = grad_check(f, ParamList<double>{{"x", x}, {"y", y}, {"w", w}, {"b", b}, {"pos", pos_t}});
    INFO(name, " worst=", r.worst);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("patchify and unpatchify are inverse permutations") {
  Rng rng(3);
  auto x = random_input(Shape{2, 8, 8, 4}, rng);
  for (int heads : {1, 2, 4}) {
    auto t = patchify(x, 2, heads);
    CHECK(t.shape() == Shape({2 * heads, 8, 8 / heads * 4}));
    auto back = unpatchify(t, 2, 8, 8, 4, 2, heads);
    CHECK((back.value().data() == x.value().data()).all());
  }
  CHECK_THROWS_AS(patchify(x, 3, 1), ShapeError);
}

TEST_CASE("softmax rows sum to one and broadcasting rejects bad shapes") {
  Rng rng(4);
  auto x = random_input(Shape{3, 5}, rng, 10.0);
  auto p = softmax(x, 1);
  for (Index r = 0; r < 3; ++r) {
    double s = 0;
    for (Index c = 0; c < 5; ++c) s += p.value()(r, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(add(random_input(Shape{2, 3}, rng), random_input(Shape{3, 2}, rng)), ShapeError);
}

TEST_CASE("Adam moves a quadratic toward its minimum and clipping bounds the norm") {
  auto p = Var<double>(Tensor<double>::constant(Shape{4}, 3.0), true);
  Adam<double> opt({{"p", p}}, AdamOptions{0.1});
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    sum(square(p)).backward();
    opt.step();
  }
  CHECK(p.value().data().abs().maxCoeff() < 0.05);

  opt.zero_grad();
  sum(scale(square(p), 1e6)).backward();
  clip_grad_norm<double>({{"p", p}}, 10.0);
  CHECK(p.grad().data().matrix().norm() <= 10.0 + 1e-9);
}

TEST_CASE("no-grad guard skips graph construction") {
  auto p = Var<double>(Tensor<double>::ones(Shape{2}), true);
  NoGradGuard g;
  auto y = mul(p, p);
  CHECK_FALSE(y.requires_grad());
}
