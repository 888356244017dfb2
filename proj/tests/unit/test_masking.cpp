#include "doctest.h"

#include "mmif/core/nn.hpp"
#include "mmif/masking/mask.hpp"

using namespace mmif;
using namespace mmif::masking;

TEST_CASE("generated masks are deterministic and binary") {
  MaskSpec spec{MaskKind::Brush, Bucket::Mid, 7};
  auto a = generate_mask(spec, 64, 64), b = generate_mask(spec, 64, 64);
  CHECK((a.data() == b.data()).all());
  CHECK(((a.data() == 0.0f) || (a.data() == 1.0f)).all());
  spec.seed = 8;
  CHECK_FALSE((generate_mask(spec, 64, 64).data() == a.data()).all());
  CHECK_THROWS_AS(generate_mask(spec, 8, 64), MaskError);
}

TEST_CASE("every kind respects bucket bounds over a seed sweep") {
  for (MaskKind kind : {MaskKind::Brush, MaskKind::Rect, MaskKind::Outpaint})
    for (Bucket b : {Bucket::Low, Bucket::Mid, Bucket::High}) {
      const auto [lo, hi] = bucket_range(b);
      const int n = kind == MaskKind::Brush && b == Bucket::High ? 1000 : 200;
      for (int seed = 0; seed < n; ++seed) {
        const Index size = seed % 2 ? 64 : 32;
        const double c = coverage(generate_mask({kind, b, static_cast<std::uint64_t>(seed)}, size, size));
        INFO(to_string(kind), " ", to_string(b), " seed ", seed);
        REQUIRE(c >= lo);
        REQUIRE(c <= hi);
      }
    }
}

TEST_CASE("elongated images still reach every bucket") {
  for (auto [h, w] : {std::pair<Index, Index>{94, 22}, {22, 94}, {16, 200}})
    for (MaskKind kind : {MaskKind::Brush, MaskKind::Rect, MaskKind::Outpaint})
      for (Bucket b : {Bucket::Low, Bucket::Mid, Bucket::High})
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
          const auto [lo, hi] = bucket_range(b);
          const double c = coverage(generate_mask({kind, b, seed}, h, w));
          CHECK(c >= lo);
          CHECK(c <= hi);
        }
}

TEST_CASE("rect masks are one axis-aligned rectangle") {
  auto m = generate_mask({MaskKind::Rect, Bucket::Low, 3}, 64, 64);
  Index y0 = 64, y1 = -1, x0 = 64, x1 = -1;
  for (Index y = 0; y < 64; ++y)
    for (Index x = 0; x < 64; ++x)
      if (m[y * 64 + x] > 0) y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
  CHECK(m.data().sum() == doctest::Approx(double((y1 - y0 + 1) * (x1 - x0 + 1))));
}

TEST_CASE("outpaint masks are the frame around a centered known rectangle") {
  auto m = generate_mask({MaskKind::Outpaint, Bucket::Mid, 5}, 64, 64);
  Index y0 = 64, y1 = -1, x0 = 64, x1 = -1;
  for (Index y = 0; y < 64; ++y)
    for (Index x = 0; x < 64; ++x)
      if (m[y * 64 + x] == 0) y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
  const Index kh = y1 - y0 + 1, kw = x1 - x0 + 1;
  CHECK(64 - kh - 2 * y0 <= 1);
  CHECK(64 - kh - 2 * y0 >= 0);
  CHECK(64 - kw - 2 * x0 <= 1);
  CHECK(m.data().sum() == doctest::Approx(double(64 * 64 - kh * kw)));
}

TEST_CASE("coverage of simple masks") {
  CHECK(coverage(Mask::ones(Shape{1, 16, 16})) == 1.0);
  CHECK(coverage(Mask::zeros(Shape{1, 16, 16})) == 0.0);
  Mask half(Shape{1, 16, 16});
  for (Index i = 0; i < 128; ++i) half[i] = 1.0f;
  CHECK(coverage(half) == 0.5);
}

TEST_CASE("apply_mask and composite match elementwise oracles") {
  Rng rng(1);
  auto y = normal_tensor<float>(Shape{3, 16, 16}, rng);
  auto o = normal_tensor<float>(Shape{3, 16, 16}, rng);
  Mask checker(Shape{1, 16, 16});
  for (Index r = 0; r < 16; ++r)
    for (Index c = 0; c < 16; ++c) checker[r * 16 + c] = static_cast<float>((r + c) % 2);

  CHECK((apply_mask(y, Mask::zeros(Shape{1, 16, 16})).data() == y.data()).all());
  CHECK((apply_mask(y, Mask::ones(Shape{1, 16, 16})).data() == 0.0f).all());
  auto ym = apply_mask(y, checker);
  auto out = composite(o, y, checker);
  for (Index ch = 0; ch < 3; ++ch)
    for (Index i = 0; i < 256; ++i) {
      const float mv = checker[i];
      CHECK(ym[ch * 256 + i] == y[ch * 256 + i] * (1.0f - mv));
      CHECK(out[ch * 256 + i] == (mv == 1.0f ? o[ch * 256 + i] : y[ch * 256 + i]));
    }
  CHECK((composite(y, y, checker).data() == y.data()).all());
  CHECK((composite(o, y, Mask::ones(Shape{1, 16, 16})).data() == o.data()).all());
  CHECK_THROWS_AS(apply_mask(y, Mask::zeros(Shape{1, 8, 16})), ShapeError);
  CHECK_THROWS_AS(composite(o, Tensor<float>(Shape{3, 8, 8}), checker), ShapeError);
}

TEST_CASE("composite after apply_mask never alters unmasked pixels") {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    auto y = uniform_tensor<float>(Shape{3, 32, 32}, rng, -1, 1);
    auto o = uniform_tensor<float>(Shape{3, 32, 32}, rng, -1, 1);
    auto m = generate_mask({MaskKind::Brush, static_cast<Bucket>(t % 3), static_cast<std::uint64_t>(t)}, 32, 32);
    auto out = composite(o, apply_mask(y, m), m);
    for (Index ch = 0; ch < 3; ++ch)
      for (Index i = 0; i < 1024; ++i)
        if (m[i] == 0.0f) REQUIRE(out[ch * 1024 + i] == y[ch * 1024 + i]);
  }
}

TEST_CASE("mask PNG uses 255 for missing and round-trips") {
  auto m = generate_mask({MaskKind::Brush, Bucket::Low, 1}, 32, 48);
  auto back = decode_mask(encode_mask(m));
  CHECK(back.shape() == m.shape());
  CHECK((back.data() == m.data()).all());
  CHECK(parse_buckets("low,high") == std::vector<Bucket>{Bucket::Low, Bucket::High});
  CHECK_THROWS_AS(parse_buckets("lo"), MaskError);
  CHECK(eval_mask_seed(1, 2, Bucket::Mid) == eval_mask_seed(1, 2, Bucket::Mid));
  CHECK(eval_mask_seed(1, 2, Bucket::Mid) != eval_mask_seed(1, 3, Bucket::Mid));
}
