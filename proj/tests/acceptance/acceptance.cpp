// Acceptance runner: one PASS/FAIL line per criterion on stdout, progress on stderr.
// Usage: acceptance [--only 1,4,...] [--workdir DIR]

#include "support/corpus.hpp"
#include "support/suites.hpp"

#include "cli.hpp"
#include "service.hpp"

#include "mmif/eval/evaluate.hpp"
#include "mmif/infer/inpainter.hpp"
#include "mmif/metrics/metrics.hpp"
#include "mmif/model/inversion.hpp"
#include "mmif/train/trainer.hpp"

#include "httplib.h"
#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#ifndef MMIF_SOURCE_DIR
#define MMIF_SOURCE_DIR "."
#endif

namespace fs = std::filesystem;
using namespace mmif;
using json = nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path g_work;

// ---------------------------------------------------------------------------------------------

Verdict equation_oracles() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  const auto suite = testing::equation_suite();
  for (const auto& e : suite)
    if (!(e.error <= worst)) worst = e.error, worst_name = e.name;
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 60,
          std::to_string(suite.size()) + " blocks, max error " + fmt("%.2e", worst) + " (" + worst_name + "), " +
              fmt("%.1f", secs) + " s"};
}

Verdict gradient_checks() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  const auto suite = testing::gradient_suite();
  for (const auto& e : suite)
    if (!(e.error <= worst)) worst = e.error, worst_name = e.name;
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 300,
          std::to_string(suite.size()) + " blocks, max relative error " + fmt("%.2e", worst) + " (" + worst_name +
              "), " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------------------------

data::ImageU8 random_image(Rng& rng, int w, int h) {
  data::ImageU8 img{w, h, 3, std::vector<std::uint8_t>(static_cast<size_t>(w) * h * 3)};
  std::uniform_int_distribution<int> byte(0, 255);
  const int base[3] = {byte(rng), byte(rng), byte(rng)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<std::uint8_t>((base[c] + x * (c + 1) + y * 3 + (byte(rng) & 15)) & 0xff);
  return img;
}

masking::Mask random_mask(Rng& rng, int w, int h) {
  const masking::MaskKind kinds[] = {masking::MaskKind::Brush, masking::MaskKind::Rect, masking::MaskKind::Outpaint};
  const masking::Bucket buckets[] = {masking::Bucket::Low, masking::Bucket::Mid, masking::Bucket::High};
  return masking::generate_mask({kinds[rng() % 3], buckets[rng() % 3], rng()}, h, w);
}

std::string to_b64(const std::vector<std::uint8_t>& b) { return serve::base64_encode(std::string(b.begin(), b.end())); }

Verdict hard_constraint() {
  const fs::path dir = g_work / "hard_constraint";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto corpus = testing::synthetic_corpus("acceptance_hc", 4);
  train::EncoderTrainer t(testing::tiny_run(), corpus);
  t.step();
  train::save_checkpoint(dir / "ckpt", t.checkpoint());
  const Index s = t.config().model.resolution;

  Rng rng(2024);
  std::uniform_int_distribution<int> side(16, 96);
  int cli_ok = 0, svc_ok = 0;
  std::string first_failure;

  for (int i = 0; i < 100; ++i) {
    const int w = side(rng), h = side(rng);
    const auto img = random_image(rng, w, h);
    const auto mask = random_mask(rng, w, h);
    const std::uint64_t seed = rng() % 100000;
    data::save_png(dir / "a.png", img);
    masking::save_mask(dir / "m.png", mask);
    std::ostringstream out, err;
    const int code = cli::run({"infer", "--image", (dir / "a.png").string(), "--mask", (dir / "m.png").string(),
                               "--out", (dir / "o.png").string(), "--ckpt", (dir / "ckpt").string(), "--seed",
                               std::to_string(seed)},
                              out, err);
    if (code == 0 && infer::unmasked_equal(data::load_image(dir / "o.png", 3), img, mask)) ++cli_ok;
    else if (first_failure.empty()) first_failure = "cli triple " + std::to_string(i) + ": " + err.str();
  }

  serve::InpaintService service;
  service.load(dir / "ckpt");
  httplib::Server server;
  service.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(300, 0);
  for (int i = 0; i < 100; ++i) {
    const int w = side(rng), h = side(rng);
    const auto img = random_image(rng, w, h);
    const auto mask = random_mask(rng, w, h);
    const json body{{"image", to_b64(data::encode_png(img))},
                    {"mask", to_b64(masking::encode_mask(mask))},
                    {"seed", rng() % 100000}};
    auto res = client.Post("/v1/inpaint", body.dump(), "application/json");
    if (res && res->status == 200) {
      const std::string raw = serve::base64_decode(json::parse(res->body)["result"].get<std::string>());
      const auto got = data::decode_image(std::vector<std::uint8_t>(raw.begin(), raw.end()), 3);
      // The service composites against the input resized to the model grid.
      const auto expect = data::from_tensor(resize_bilinear(data::to_tensor(img), s, s));
      const masking::Mask m = resize_nearest(mask, s, s);
      if (infer::unmasked_equal(got, expect, m)) {
        ++svc_ok;
        continue;
      }
    }
    if (first_failure.empty())
      first_failure = "service triple " + std::to_string(i) + ": status " + (res ? std::to_string(res->status) : "none");
  }
  server.stop();
  th.join();
  return {cli_ok == 100 && svc_ok == 100, "CLI " + std::to_string(cli_ok) + "/100, service " + std::to_string(svc_ok) +
                                              "/100 bitwise" + (first_failure.empty() ? "" : "; " + first_failure)};
}

// ---------------------------------------------------------------------------------------------

Verdict soft_update_law() {
  std::string detail;
  bool ok = true;
  for (double tau : {0.5, 0.1, 0.001}) {
    model::MeanLatentState st;
    Rng rng(7);
    st.online = normal_tensor<double>(Shape{14, 8}, rng);
    st.target = normal_tensor<double>(Shape{14, 8}, rng);
    st.tau = tau;
    const double g0 = (st.online.data() - st.target.data()).matrix().norm();
    const double inf0 = (st.online.data() - st.target.data()).abs().maxCoeff();
    std::uint64_t calls = 0;
    auto sampler = [&](std::uint64_t i) {
      calls = i;
      return Tensor<double>::constant(Shape{14, 8}, 3.0);
    };
    double worst = 0;
    int k = 0;
    Tensor<double> before;
    for (;;) {
      before = st.online;
      const Tensor<double> target_before = st.target;
      ++k;
      if (model::soft_update(st, sampler)) {
        // The update that fired is the first whose gap fell under the tolerance.
        Buffer<double> online = (1.0 - tau) * before.data() + tau * target_before.data();
        const double g = (online - target_before.data()).abs().maxCoeff();
        ok = ok && g < model::kResampleTolerance && calls == 1 && st.resamples == 1 &&
             (st.online.data() == target_before.data()).all() && (st.target.data() == 3.0).all();
        break;
      }
      const double gk = (st.online.data() - st.target.data()).matrix().norm();
      const double law = std::pow(1.0 - tau, k);
      worst = std::max(worst, std::abs(gk / g0 - law) / law);
      if ((st.online.data() - st.target.data()).abs().maxCoeff() < model::kResampleTolerance) ok = false;
      if (k > 100000) {
        ok = false;
        break;
      }
    }
    // First k with inf0 (1 - tau)^k < tolerance, from the closed form.
    const int expect_k = static_cast<int>(std::floor(std::log(model::kResampleTolerance / inf0) / std::log(1.0 - tau))) + 1;
    ok = ok && worst <= 1e-8 && k == expect_k;
    detail += "tau=" + fmt("%g", tau) + ": rel.err " + fmt("%.1e", worst) + ", resample at step " + std::to_string(k) +
              " (closed form " + std::to_string(expect_k) + "); ";
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------------------------

metrics::FeatureSet gaussian(Index n, Index d, double shift, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  metrics::FeatureSet f(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) f(i, j) = nd(rng) + shift;
  return f;
}

/// Frechet distance from sample moments, via symmetric eigendecompositions.
double moment_fid(const metrics::FeatureSet& a, const metrics::FeatureSet& b) {
  const Eigen::RowVectorXd ma = a.colwise().mean(), mb = b.colwise().mean();
  const Eigen::MatrixXd ca = (a.rowwise() - ma).transpose() * (a.rowwise() - ma) / double(a.rows() - 1);
  const Eigen::MatrixXd cb = (b.rowwise() - mb).transpose() * (b.rowwise() - mb) / double(b.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(ca);
  const Eigen::MatrixXd ra = ea.operatorSqrt();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(ra * cb * ra);
  return (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2.0 * em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

Verdict metric_sanity() {
  Rng rng(99);
  const auto a = gaussian(500, 8, 0.0, rng);
  const double self = metrics::fid(a, a);
  // Monte-Carlo spread of the estimate is about 0.025 here, so the band is roughly two sigma wide;
  // the sample-moment comparison is the seed-independent part of the check.
  Rng gauss_rng(0);
  const auto ga = gaussian(50000, 4, 0.0, gauss_rng), gb = gaussian(50000, 4, 1.0, gauss_rng);
  const double shifted = metrics::fid(ga, gb);
  const double moments = moment_fid(ga, gb);
  Tensor<float> x = uniform_tensor<float>(Shape{3, 40, 40}, rng, 0.0, 1.0);
  const double ss = metrics::ssim(x, x);
  const auto ids = metrics::pids_uids(gaussian(2000, 8, 0.0, rng), gaussian(2000, 8, 0.0, rng), false);
  const bool ok = std::abs(self) < 1e-6 && std::abs(shifted - 4.0) <= 0.05 && std::abs(shifted - moments) < 1e-6 && std::abs(ss - 1.0) <= 1e-8 &&
                  ids.u_ids >= 0.40 && ids.u_ids <= 0.50;
  return {ok, "fid(A,A)=" + fmt("%.1e", self) + ", Gaussian FID=" + fmt("%.4f", shifted) +
                  " (sample-moment closed form " + fmt("%.4f", moments) + ")" + ", ssim(x,x)-1=" +
                  fmt("%.1e", ss - 1.0) + ", same-distribution U-IDS=" + fmt("%.4f", ids.u_ids)};
}

// ---------------------------------------------------------------------------------------------

/// 16 synthetic images at 64x64, shared by the toy runs.
const train::Corpus& toy_corpus() {
  static const train::Corpus c = [] {
    const auto manifest = data::write_synthetic_corpus(g_work / "toy_corpus", 16, 64, 1, 4);
    return train::load_corpus(manifest, data::Split::Train, 64, "", {});
  }();
  return c;
}

train::RunConfig toy_config() { return train::load_config(fs::path(MMIF_SOURCE_DIR) / "configs" / "toy.ini"); }

Verdict toy_overfit() {
  const auto t0 = Clock::now();
  const train::RunConfig cfg = toy_config();
  const auto& corpus = toy_corpus();
  train::EncoderTrainer t(cfg, corpus);
  std::vector<double> first;
  std::ofstream log(g_work / "toy_metrics.jsonl");
  const int steps = cfg.train.steps;
  for (int i = 0; i < steps; ++i) {
    const train::StepLog s = t.step();
    train::write_log(log, s);
    if (i < 50) first.push_back(s.get("total"));
    if (s.step % 100 == 0)
      std::cerr << "  toy step " << s.step << " total " << s.get("total") << " batch masked L1 " << s.get("masked_l1")
                << " (" << fmt("%.0f", seconds_since(t0)) << " s)\n";
  }
  const double l1 = t.evaluate_masked_l1();
  const double train_secs = seconds_since(t0);
  train::save_checkpoint(g_work / "toy_ckpt", t.checkpoint());

  train::EncoderTrainer again(cfg, corpus);
  double drift = 0;
  for (int i = 0; i < 50; ++i) drift = std::max(drift, std::abs(again.step().get("total") - first[static_cast<size_t>(i)]));
  const double secs = seconds_since(t0);
  return {steps == 2000 && l1 < 0.15 && drift <= 1e-6 && secs < 3 * 3600,
          std::to_string(steps) + " steps, masked L1 on training masks " + fmt("%.4f", l1) + " (< 0.15), rerun drift " +
              fmt("%.1e", drift) + " over 50 steps, training " + fmt("%.0f", train_secs) + " s, total " +
              fmt("%.0f", secs) + " s"};
}

// ---------------------------------------------------------------------------------------------

Verdict layer_count() {
  const int a = model::num_style_layers(256), b = model::num_style_layers(1024);
  return {a == 14 && b == 18, "num_style_layers(256)=" + std::to_string(a) + ", num_style_layers(1024)=" + std::to_string(b)};
}

// ---------------------------------------------------------------------------------------------

Verdict ablation_harness() {
  struct Variant {
    std::string name;
    model::FusionKind fusion;
    model::BottleneckKind bottleneck;
    int layers;
  };
  using F = model::FusionKind;
  using B = model::BottleneckKind;
  const std::vector<Variant> variants = {
      {"fusion=add", F::Add, B::ACB, 8},          {"fusion=concat", F::Concat, B::ACB, 8},
      {"fusion=adain", F::GmaAdaIN, B::ACB, 8},   {"fusion=spade", F::GmaSpade, B::ACB, 8},
      {"fusion=gma_adn/acb@8", F::GmaAdn, B::ACB, 8}, {"bottleneck=res", F::GmaAdn, B::RES, 8},
      {"bottleneck=aot", F::GmaAdn, B::AOT, 8},   {"acb@2", F::GmaAdn, B::ACB, 2},
      {"acb@4", F::GmaAdn, B::ACB, 4},            {"acb@6", F::GmaAdn, B::ACB, 6},
  };
  const auto& corpus = toy_corpus();
  int finite = 0;
  std::string bad;
  std::ofstream table(g_work / "ablation.jsonl");
  for (const auto& v : variants) {
    const auto t0 = Clock::now();
    train::RunConfig cfg = toy_config();
    cfg.model.fusion = v.fusion;
    cfg.model.bottleneck = v.bottleneck;
    cfg.model.acb_layers = v.layers;
    cfg.train.batch = 4;
    bool ok = true;
    double last_total = 0;
    try {
      train::EncoderTrainer t(cfg, corpus);
      for (int i = 0; i < 200 && ok; ++i) {
        const train::StepLog s = t.step();
        for (const auto& [name, value] : s.terms)
          if (!std::isfinite(value)) {
            ok = false;
            bad += v.name + ": " + name + " at step " + std::to_string(s.step) + "; ";
          }
        last_total = s.get("total");
      }
      const double l1 = t.evaluate_masked_l1();
      table << json{{"variant", v.name}, {"final_total", last_total}, {"masked_l1", l1}}.dump() << "\n";
      std::cerr << "  " << v.name << ": total " << last_total << ", masked L1 " << l1 << " ("
                << fmt("%.0f", seconds_since(t0)) << " s)\n";
    } catch (const std::exception& e) {
      ok = false;
      bad += v.name + ": " + e.what() + "; ";
    }
    finite += ok ? 1 : 0;
  }
  return {finite == static_cast<int>(variants.size()),
          std::to_string(finite) + "/" + std::to_string(variants.size()) +
              " variants finite for 200 steps (5 fusions, RES, AOT, ACB@2/4/6/8)" + (bad.empty() ? "" : "; " + bad)};
}

// ---------------------------------------------------------------------------------------------

Verdict eval_protocol() {
  const auto corpus = testing::synthetic_corpus("acceptance_eval", 8);
  auto cfg_a = testing::tiny_run().model;
  cfg_a.num_classes = corpus.num_classes;
  auto cfg_b = cfg_a;
  cfg_b.fusion = model::FusionKind::Add;
  cfg_b.bottleneck = model::BottleneckKind::AOT;
  const model::InpaintNet<float> a(cfg_a, 1), b(cfg_b, 2);
  eval::EvalOptions o;
  o.seed = 1;
  o.batch = 4;
  o.extractor_base = 4;
  const auto r1 = eval::evaluate_corpus(eval::network_filler(a), corpus, o);
  const auto r2 = eval::evaluate_corpus(eval::network_filler(a), corpus, o);
  const auto rb = eval::evaluate_corpus(eval::network_filler(b), corpus, o);
  bool digests = r1.rows.size() == rb.rows.size();
  for (size_t i = 0; digests && i < r1.rows.size(); ++i) digests = r1.rows[i].mask_digest == rb.rows[i].mask_digest;
  // Masks come from the protocol alone; rebuilding them reproduces every byte.
  bool masks = true;
  for (size_t i = 0; i < corpus.samples.size(); ++i)
    for (auto bucket : o.buckets)
      masks = masks && (eval::eval_mask(o, i, bucket, 32).data() == eval::eval_mask(o, i, bucket, 32).data()).all();
  const bool same = r1.to_jsonl() == r2.to_jsonl();
  return {same && digests && masks, std::string("rerun report ") + (same ? "identical" : "DIFFERS") +
                                        ", mask digests across variants " + (digests ? "identical" : "DIFFER") +
                                        " (" + std::to_string(r1.rows.size()) + " buckets)"};
}

}  // namespace

int main(int argc, char** argv) {
  cli::keep_freed_memory();
  std::set<int> only;
  g_work = fs::temp_directory_path() / "mmif_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (a == "--workdir" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--workdir DIR]\n";
      return 2;
    }
  }
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"equation oracles", equation_oracles},   {"gradient checks", gradient_checks},
      {"hard constraint", hard_constraint},     {"soft-update law", soft_update_law},
      {"metric sanity", metric_sanity},         {"toy overfit", toy_overfit},
      {"style layer count", layer_count},       {"ablation harness", ablation_harness},
      {"evaluation protocol", eval_protocol},
  };
  // Verdicts also land in the workdir, since ctest hides the output of passing tests.
  std::ofstream summary(g_work / "acceptance.txt");
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    std::cerr << "running criterion " << id << " (" << criteria[i].first << ")\n";
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::ostringstream line;
    line << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": " << v.detail;
    std::cout << line.str() << std::endl;
    summary << line.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
