#pragma once

#include "mmif/core/tensor.hpp"
#include "mmif/data/image_io.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmif::data {

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestRecord {
  std::string id;
  std::string image_path;
  std::optional<std::string> seg_path;
  Split split = Split::Train;
};

/// Reads line-delimited JSON records. Relative paths resolve against the manifest's directory.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> filter_split(const std::vector<ManifestRecord>& records, Split split);

using LabelMap = Tensor<std::int32_t>;

/// Surjective relabeling of source labels onto [0, K-1].
class LabelMergeMap {
 public:
  LabelMergeMap() = default;
  explicit LabelMergeMap(std::map<std::int32_t, std::int32_t> mapping);

  static LabelMergeMap identity(int num_classes);
  /// "src:dst" tokens separated by commas or whitespace, or a JSON object {"src": dst}.
  static LabelMergeMap parse(const std::string& text);
  static LabelMergeMap load(const std::filesystem::path& path);

  int num_classes() const { return num_classes_; }
  const std::map<std::int32_t, std::int32_t>& mapping() const { return mapping_; }
  std::int32_t operator()(std::int32_t label) const;

 private:
  std::map<std::int32_t, std::int32_t> mapping_;
  int num_classes_ = 0;
};

LabelMap merge_labels(const LabelMap& seg, const LabelMergeMap& map);

struct CannyThresholds {
  float low = 0.1f;
  float high = 0.2f;
  float sigma = 1.0f;  // Gaussian pre-smoothing; 0 disables it
};

/// Canny edges of the luma of a (3,H,W) image in [-1,1]; thresholds apply to the
/// gradient magnitude of the [0,1] grayscale (Sobel normalized to a per-pixel derivative).
Tensor<float> extract_edges(const Tensor<float>& image, float low, float high, float sigma = 1.0f);
inline Tensor<float> extract_edges(const Tensor<float>& image, const CannyThresholds& t) {
  return extract_edges(image, t.low, t.high, t.sigma);
}

struct Sample {
  std::string id;
  Tensor<float> image;  // (3,s,s) in [-1,1]
  LabelMap seg;         // (s,s) in [0,K-1]
  Tensor<float> edge;   // (s,s) in {0,1}
  int num_classes = 1;
};

/// Loads, resizes (bilinear image, nearest labels), merges labels and derives edges after resizing.
/// `merge` absent means labels pass through unchanged; a record without seg gets label 0 everywhere.
Sample prepare_sample(const ManifestRecord& record, int resolution, const std::optional<LabelMergeMap>& merge,
                      const CannyThresholds& thresholds);

/// Builds a sample from in-memory tensors (image (3,H,W) in [0,1], labels (H,W)).
Sample make_sample(std::string id, const Tensor<float>& image01, const LabelMap& labels, int resolution,
                   int num_classes, const CannyThresholds& thresholds);

/// Index order for one epoch; a pure function of (n, seed, epoch).
std::vector<size_t> epoch_order(size_t n, std::uint64_t seed, std::uint64_t epoch);

bool is_power_of_two(long v);

/// Writes n procedurally generated images with label maps plus a manifest. Returns the manifest path.
std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, int count, int size,
                                             std::uint64_t seed, int num_classes = 4);

}  // namespace mmif::data
