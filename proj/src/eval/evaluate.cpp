#include "mmif/eval/evaluate.hpp"

#include "mmif/metrics/metrics.hpp"
#include "mmif/objectives/losses.hpp"
#include "mmif/train/trainer.hpp"

#include "json.hpp"

#include <cstdio>
#include <sstream>

namespace mmif::eval {
namespace {

void append_rows(metrics::FeatureSet& dst, Index& filled, const Tensor<float>& feats) {
  const Index n = feats.dim(0), d = feats.dim(1);
  if (dst.cols() != d) dst.resize(dst.rows(), d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) dst(filled + i, j) = feats[i * d + j];
  filled += n;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

Filler network_filler(const model::InpaintNet<float>& net) {
  return [&net](const model::NetInput<float>& in, std::uint64_t noise_seed) {
    NoGradGuard ng;
    const auto fwd = net.forward(in, noise_seed);
    Filled f;
    f.image = fwd.output.value();
    const Tensor<float>& p = fwd.dec.preds[2].seg.value();
    const Index b = p.dim(0), k = p.dim(1), hw = p.dim(2) * p.dim(3);
    f.seg = Tensor<std::int32_t>(Shape{b, p.dim(2), p.dim(3)});
    for (Index n = 0; n < b; ++n)
      for (Index i = 0; i < hw; ++i) {
        Index best = 0;
        for (Index c = 1; c < k; ++c)
          if (p[(n * k + c) * hw + i] > p[(n * k + best) * hw + i]) best = c;
        f.seg[n * hw + i] = static_cast<std::int32_t>(best);
      }
    return f;
  };
}

masking::Mask eval_mask(const EvalOptions& o, size_t index, masking::Bucket b, Index s) {
  return masking::generate_mask({o.kind, b, masking::eval_mask_seed(o.seed, index, b)}, s, s);
}

BucketReport evaluate_corpus(const Filler& fill, const train::Corpus& corpus, const EvalOptions& o) {
  const size_t n = corpus.samples.size();
  if (n < 2) throw EvalError("evaluation needs at least 2 images per bucket, corpus has " + std::to_string(n));
  if (o.buckets.empty()) throw EvalError("no buckets to evaluate");
  if (o.batch < 1) throw EvalError("eval batch must be positive");
  const Index s = corpus.resolution;
  const objectives::FeatureExtractor<float> ex(o.extractor_seed, o.extractor_base);

  BucketReport report;
  for (masking::Bucket bucket : o.buckets) {
    BucketScores row;
    row.bucket = bucket;
    row.count = n;
    metrics::FeatureSet real_f(static_cast<Index>(n), 0), fake_f(static_cast<Index>(n), 0);
    Index real_rows = 0, fake_rows = 0;
    std::vector<Tensor<std::int32_t>> preds, gts;
    std::uint64_t digest = 0xcbf29ce484222325ULL;
    double ssim_sum = 0, lpips_sum = 0;

    for (size_t start = 0; start < n; start += static_cast<size_t>(o.batch)) {
      std::vector<size_t> idx;
      std::vector<masking::Mask> masks;
      for (size_t i = start; i < std::min(n, start + static_cast<size_t>(o.batch)); ++i) {
        idx.push_back(i);
        masks.push_back(eval_mask(o, i, bucket, s));
        for (Index p = 0; p < masks.back().size(); ++p) {
          digest ^= masks.back()[p] > 0.5f ? 1u : 0u;
          digest *= 0x100000001b3ULL;
        }
      }
      const train::Batch batch = train::make_batch(corpus, idx, masks);
      const Filled f = fill(batch.input, train::mix_seed(o.seed, start, 0xe7a1));
      if (f.image.shape() != batch.input.image.shape())
        throw EvalError("filler returned " + f.image.shape().str() + ", expected " + batch.input.image.shape().str());
      const Tensor<float> comp = masking::composite(f.image, batch.input.image, batch.input.mask);

      NoGradGuard ng;
      Tensor<float> comp01 = comp, real01 = batch.input.image;
      comp01.data() = (comp01.data() + 1.0f) * 0.5f;
      real01.data() = (real01.data() + 1.0f) * 0.5f;
      const Index b = static_cast<Index>(idx.size());
      for (Index i = 0; i < b; ++i) {
        const Tensor<float> a = Tensor<float>(Shape{3, s, s}, comp01.data().segment(i * 3 * s * s, 3 * s * s));
        const Tensor<float> r = Tensor<float>(Shape{3, s, s}, real01.data().segment(i * 3 * s * s, 3 * s * s));
        ssim_sum += metrics::ssim(a, r);
      }
      auto tx = ex.taps(constant(comp)), ty = ex.taps(constant(batch.input.image));
      for (Index i = 0; i < b; ++i) {
        std::vector<Tensor<float>> xi, yi;
        for (size_t t = 0; t < tx.size(); ++t) {
          xi.push_back(slice(tx[t], 0, i, 1).value());
          yi.push_back(slice(ty[t], 0, i, 1).value());
        }
        lpips_sum += metrics::lpips_proxy(xi, yi);
      }
      append_rows(real_f, real_rows, ex.embed(batch.input.image));
      append_rows(fake_f, fake_rows, ex.embed(comp));
      if (corpus.num_classes > 1 && f.seg.size() > 0) {
        preds.push_back(f.seg);
        gts.push_back(batch.labels);
      }
    }
    row.ssim = ssim_sum / static_cast<double>(n);
    row.lpips = lpips_sum / static_cast<double>(n);
    row.fid = metrics::fid(real_f, fake_f);
    const auto ids = metrics::pids_uids(real_f, fake_f, true);
    row.p_ids = ids.p_ids;
    row.u_ids = ids.u_ids;
    if (!preds.empty()) {
      Tensor<std::int32_t> p(Shape{static_cast<Index>(n), s, s}), g(Shape{static_cast<Index>(n), s, s});
      Index off = 0;
      for (size_t i = 0; i < preds.size(); ++i) {
        std::copy_n(preds[i].ptr(), preds[i].size(), p.ptr() + off);
        std::copy_n(gts[i].ptr(), gts[i].size(), g.ptr() + off);
        off += preds[i].size();
      }
      row.miou = metrics::miou(p, g, corpus.num_classes);
    }
    row.mask_digest = hex64(digest);
    report.rows.push_back(row);
  }
  return report;
}

std::string BucketReport::to_jsonl() const {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::ordered_json j{{"bucket", masking::to_string(r.bucket)},
                             {"n", r.count},
                             {"fid", r.fid},
                             {"ssim", r.ssim},
                             {"lpips_proxy", r.lpips},
                             {"p_ids", r.p_ids},
                             {"u_ids", r.u_ids}};
    j["miou"] = r.miou ? nlohmann::ordered_json(*r.miou) : nlohmann::ordered_json(nullptr);
    j["mask_digest"] = r.mask_digest;
    out += j.dump() + "\n";
  }
  return out;
}

BucketReport BucketReport::from_jsonl(const std::string& text) {
  BucketReport rep;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      BucketScores r;
      r.bucket = masking::parse_bucket(j.at("bucket").get<std::string>());
      r.count = j.at("n").get<size_t>();
      r.fid = j.at("fid").get<double>();
      r.ssim = j.at("ssim").get<double>();
      r.lpips = j.at("lpips_proxy").get<double>();
      r.p_ids = j.at("p_ids").get<double>();
      r.u_ids = j.at("u_ids").get<double>();
      if (!j.at("miou").is_null()) r.miou = j.at("miou").get<double>();
      r.mask_digest = j.at("mask_digest").get<std::string>();
      rep.rows.push_back(r);
    } catch (const std::exception& e) {
      throw EvalError("report line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rep;
}

std::string BucketReport::to_table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %5s %10s %8s %8s %8s %8s %8s\n", "bucket", "n", "FID", "SSIM", "LPIPS*",
                "P-IDS", "U-IDS", "mIoU");
  os << line;
  for (const auto& r : rows) {
    char miou[16] = "-";
    if (r.miou) std::snprintf(miou, sizeof miou, "%.4f", *r.miou);
    std::snprintf(line, sizeof line, "%-6s %5zu %10.4f %8.4f %8.4f %8.4f %8.4f %8s\n",
                  masking::to_string(r.bucket).c_str(), r.count, r.fid, r.ssim, r.lpips, r.p_ids, r.u_ids, miou);
    os << line;
  }
  os << "LPIPS* is the frozen-extractor proxy, not the pretrained metric.\n";
  return os.str();
}

}  // namespace mmif::eval
