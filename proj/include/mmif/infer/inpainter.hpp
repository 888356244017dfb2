#pragma once

#include "mmif/data/image_io.hpp"
#include "mmif/masking/mask.hpp"
#include "mmif/model/network.hpp"
#include "mmif/train/checkpoint.hpp"

#include <optional>
#include <stdexcept>

namespace mmif::infer {

class InferError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One image at its native size. Hints may be any size; they are resized to the model grid.
struct Request {
  data::ImageU8 image;                  // RGB
  masking::Mask mask;                   // (1,H,W), same size as image
  std::optional<data::ImageU8> edge;    // gray, binarized at 0.5 after resizing
  std::optional<data::LabelImage> seg;  // labels in [0,K-1]
  std::uint64_t seed = 0;
};

struct Result {
  // At model resolution. `composite` takes masked pixels from `raw` and the rest from `input`.
  data::ImageU8 input;
  data::ImageU8 raw;
  data::ImageU8 composite;
  masking::Mask mask;
  // At the request's size; unmasked pixels are the request's own bytes.
  data::ImageU8 raw_full;
  data::ImageU8 composite_full;
};

/// Pixel-wise select on 8-bit images: `filled` where the mask is 1, `truth` elsewhere.
data::ImageU8 composite_u8(const data::ImageU8& filled, const data::ImageU8& truth, const masking::Mask& mask);

/// True when every pixel with M=0 has identical bytes in both images.
bool unmasked_equal(const data::ImageU8& a, const data::ImageU8& b, const masking::Mask& mask);

/// Inference-only wrapper around a trained network. Not thread-safe; callers serialize access.
class Inpainter {
 public:
  Inpainter(model::InpaintNet<float> net, std::string config_hash);
  /// Builds the network from the checkpoint's embedded config and restores every parameter.
  static Inpainter from_checkpoint(const train::Checkpoint& c);
  static Inpainter load(const std::filesystem::path& dir);

  Result run(const Request& r) const;

  const model::ModelConfig& config() const { return net_.cfg; }
  const std::string& config_hash() const { return hash_; }
  const model::InpaintNet<float>& net() const { return net_; }

 private:
  model::InpaintNet<float> net_;
  std::string hash_;
};

}  // namespace mmif::infer
