#pragma once

#include "mmif/core/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmif::masking {

// Masks are (1,H,W) float tensors with values exactly 0 or 1; 1 marks a missing pixel.
using Mask = Tensor<float>;

class MaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MaskKind { Brush, Rect, Outpaint };
enum class Bucket { Low, Mid, High };

std::string to_string(MaskKind k);
std::string to_string(Bucket b);
MaskKind parse_kind(const std::string& s);
Bucket parse_bucket(const std::string& s);
/// Comma-separated bucket list, e.g. "low,mid,high".
std::vector<Bucket> parse_buckets(const std::string& s);

/// Inclusive coverage range of a difficulty bucket.
std::array<double, 2> bucket_range(Bucket b);

struct MaskSpec {
  MaskKind kind = MaskKind::Brush;
  Bucket bucket = Bucket::Mid;
  std::uint64_t seed = 0;
};

inline constexpr int kMaxProposalRounds = 100;

/// Proposes masks until coverage lands in the bucket; a pure function of (spec, H, W).
Mask generate_mask(const MaskSpec& spec, Index height, Index width);

double coverage(const Mask& m);

/// Y * (1 - M), broadcasting a (1,H,W) mask over channels; batched (B,C,H,W) with (B,1,H,W) also works.
Tensor<float> apply_mask(const Tensor<float>& image, const Mask& m);

/// O where M=1, Y where M=0. Unmasked pixels are copied from Y, so they match bitwise.
Tensor<float> composite(const Tensor<float>& generated, const Tensor<float>& truth, const Mask& m);

/// 8-bit PNG with 255 = missing; loading thresholds at 128.
void save_mask(const std::filesystem::path& path, const Mask& m);
Mask load_mask(const std::filesystem::path& path);
Mask decode_mask(const std::vector<std::uint8_t>& png_bytes);
std::vector<std::uint8_t> encode_mask(const Mask& m);

/// Seed for the mask of item `index` in a bucket; evaluation shares it across model variants.
std::uint64_t eval_mask_seed(std::uint64_t seed, std::uint64_t index, Bucket b);

}  // namespace mmif::masking
