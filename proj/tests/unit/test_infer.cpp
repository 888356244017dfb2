#include "doctest.h"
#include "support/corpus.hpp"

#include "mmif/eval/evaluate.hpp"
#include "mmif/infer/inpainter.hpp"
#include "mmif/train/trainer.hpp"

#include <cmath>

using namespace mmif;
using mmif::testing::fresh_dir;
using mmif::testing::synthetic_corpus;
using mmif::testing::tiny_run;

namespace {

data::ImageU8 noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  data::ImageU8 img{w, h, 3, std::vector<std::uint8_t>(static_cast<size_t>(w) * h * 3)};
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

/// Inpainter from an untrained tiny network saved and loaded through a checkpoint.
infer::Inpainter tiny_inpainter(const std::string& name) {
  static const train::Corpus corpus = synthetic_corpus("infer_corpus", 4);
  train::EncoderTrainer t(tiny_run(), corpus);
  const auto dir = fresh_dir(name);
  train::save_checkpoint(dir, t.checkpoint());
  return infer::Inpainter::load(dir);
}

model::ModelConfig corpus_config() {
  auto c = tiny_run().model;
  c.num_classes = 3;
  return c;
}

}  // namespace

TEST_CASE("8-bit composite keeps unmasked bytes") {
  auto a = noise_image(5, 4, 1), b = noise_image(5, 4, 2);
  masking::Mask m(Shape{1, 4, 5});
  m[1 * 5 + 2] = 1.0f;
  auto c = infer::composite_u8(a, b, m);
  CHECK(infer::unmasked_equal(c, b, m));
  CHECK(c.at(1, 2, 0) == a.at(1, 2, 0));
  CHECK_FALSE(infer::unmasked_equal(a, b, m));
}

TEST_CASE("inference honours the hard constraint at both resolutions") {
  const auto inp = tiny_inpainter("infer_ckpt");
  CHECK(inp.config().num_classes == 3);
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    infer::Request r;
    r.image = noise_image(45, 27, seed + 10);
    r.mask = masking::generate_mask({masking::MaskKind::Brush, masking::Bucket::Mid, seed}, 27, 45);
    r.seed = seed;
    const auto res = inp.run(r);
    CHECK(res.composite.width == 32);
    CHECK(infer::unmasked_equal(res.composite, res.input, res.mask));
    CHECK(res.composite_full.width == 45);
    CHECK(infer::unmasked_equal(res.composite_full, r.image, r.mask));
  }
}

TEST_CASE("inference is deterministic and hints only change masked pixels") {
  const auto inp = tiny_inpainter("infer_hint_ckpt");
  infer::Request r;
  r.image = noise_image(32, 32, 3);
  r.mask = masking::generate_mask({masking::MaskKind::Rect, masking::Bucket::High, 4}, 32, 32);
  r.seed = 9;
  const auto a = inp.run(r), b = inp.run(r);
  CHECK(a.composite.pixels == b.composite.pixels);
  CHECK(a.raw.pixels == b.raw.pixels);

  infer::Request hinted = r;
  data::LabelImage seg{32, 32, std::vector<std::int32_t>(32 * 32, 0)};
  for (int y = 8; y < 24; ++y)
    for (int x = 8; x < 24; ++x) seg.labels[static_cast<size_t>(y * 32 + x)] = 2;
  hinted.seg = seg;
  const auto h = inp.run(hinted);
  CHECK(h.composite.pixels != a.composite.pixels);
  CHECK(infer::unmasked_equal(h.composite, a.composite, a.mask));

  infer::Request empty = r;
  empty.mask = masking::Mask(Shape{1, 32, 32});
  CHECK(inp.run(empty).composite.pixels == a.input.pixels);

  infer::Request bad = r;
  seg.labels[0] = 7;
  bad.seg = seg;
  CHECK_THROWS_AS(inp.run(bad), infer::InferError);
  bad = r;
  bad.mask = masking::Mask(Shape{1, 16, 32});
  CHECK_THROWS_AS(inp.run(bad), infer::InferError);
}

TEST_CASE("pretraining checkpoints are not accepted for inference") {
  auto corpus = synthetic_corpus("infer_pre", 4);
  auto c = tiny_run();
  c.train.phase = train::Phase::PretrainGan;
  train::GanPretrainer g(c, corpus);
  CHECK_THROWS_WITH_AS(infer::Inpainter::from_checkpoint(g.checkpoint()), doctest::Contains("pretrain-gan"),
                       infer::InferError);
}

TEST_CASE("a filler returning ground truth scores perfectly") {
  auto corpus = synthetic_corpus("eval_perfect", 6);
  eval::EvalOptions o;
  o.batch = 4;
  o.extractor_base = 4;
  eval::Filler truth = [](const model::NetInput<float>& in, std::uint64_t) {
    eval::Filled f;
    f.image = in.image;
    return f;
  };
  const auto rep = eval::evaluate_corpus(truth, corpus, o);
  REQUIRE(rep.rows.size() == 3);
  for (const auto& r : rep.rows) {
    CHECK(r.ssim == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.lpips == 0.0);
    CHECK(std::abs(r.fid) < 1e-6);
    CHECK(r.count == 6);
  }
  CHECK(rep.to_table().find("high") != std::string::npos);
}

TEST_CASE("evaluation is reproducible and shares masks across variants") {
  auto corpus = synthetic_corpus("eval_repro", 5);
  eval::EvalOptions o;
  o.batch = 2;
  o.extractor_base = 4;
  o.seed = 1;
  model::InpaintNet<float> a(corpus_config(), 1), b(corpus_config(), 2);
  const auto ra = eval::evaluate_corpus(eval::network_filler(a), corpus, o);
  const auto ra2 = eval::evaluate_corpus(eval::network_filler(a), corpus, o);
  CHECK(ra.to_jsonl() == ra2.to_jsonl());
  const auto rb = eval::evaluate_corpus(eval::network_filler(b), corpus, o);
  for (size_t i = 0; i < ra.rows.size(); ++i) {
    CHECK(ra.rows[i].mask_digest == rb.rows[i].mask_digest);
    CHECK(ra.rows[i].miou.has_value());
  }
  CHECK(ra.to_jsonl() != rb.to_jsonl());
  for (size_t i = 0; i < corpus.samples.size(); ++i)
    for (auto bucket : o.buckets) {
      const double cov = masking::coverage(eval::eval_mask(o, i, bucket, 32));
      const auto range = masking::bucket_range(bucket);
      CHECK(cov >= range[0]);
      CHECK(cov <= range[1]);
    }
  o.seed = 2;
  CHECK(eval::evaluate_corpus(eval::network_filler(a), corpus, o).rows[0].mask_digest != ra.rows[0].mask_digest);

  auto one = corpus;
  one.samples.resize(1);
  CHECK_THROWS_AS(eval::evaluate_corpus(eval::network_filler(a), one, o), eval::EvalError);
}
