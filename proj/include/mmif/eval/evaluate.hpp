#pragma once

#include "mmif/masking/mask.hpp"
#include "mmif/model/network.hpp"
#include "mmif/train/batch.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mmif::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// What a model variant returns for a batch: raw images (B,3,s,s) in [-1,1] and, optionally,
/// predicted labels (B,s,s).
struct Filled {
  Tensor<float> image;
  Tensor<std::int32_t> seg;
};

/// `noise_seed` is fixed per batch so reruns see identical generator noise.
using Filler = std::function<Filled(const model::NetInput<float>& in, std::uint64_t noise_seed)>;

/// Runs the network in no-grad mode; labels are the arg-max of the full-resolution seg head.
Filler network_filler(const model::InpaintNet<float>& net);

struct EvalOptions {
  std::vector<masking::Bucket> buckets{masking::Bucket::Low, masking::Bucket::Mid, masking::Bucket::High};
  masking::MaskKind kind = masking::MaskKind::Brush;
  std::uint64_t seed = 0;
  int batch = 8;
  std::uint64_t extractor_seed = 1234;
  int extractor_base = 16;
};

struct BucketScores {
  masking::Bucket bucket = masking::Bucket::Mid;
  size_t count = 0;
  double fid = 0, ssim = 0, lpips = 0, p_ids = 0, u_ids = 0;
  std::optional<double> miou;  // only when the corpus has more than one class
  std::string mask_digest;     // FNV-1a over every mask byte in order
};

struct BucketReport {
  std::vector<BucketScores> rows;

  /// One JSON object per bucket.
  std::string to_jsonl() const;
  /// Fixed-width table, one line per bucket.
  std::string to_table() const;
  /// Inverse of to_jsonl.
  static BucketReport from_jsonl(const std::string& text);
};

/// Mask of image `index` in bucket `b`; depends only on (options.seed, index, b, kind, s), never on the model.
masking::Mask eval_mask(const EvalOptions& o, size_t index, masking::Bucket b, Index s);

/// Fills every image under every bucket's masks and scores the composites against ground truth.
BucketReport evaluate_corpus(const Filler& fill, const train::Corpus& corpus, const EvalOptions& o);

}  // namespace mmif::eval
