#pragma once

#include "mmif/core/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmif::data {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit image (channels = 1 or 3).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c = 0) { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

/// Single-channel integer label image (8- or 16-bit PNG source).
struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Decodes PNG or JPEG (sniffed from magic bytes) to RGB or gray.
ImageU8 decode_image(const std::vector<std::uint8_t>& bytes, int channels = 3);
ImageU8 load_image(const std::filesystem::path& path, int channels = 3);

/// Decodes a single-channel PNG of integer labels; color PNGs are rejected.
LabelImage decode_labels(const std::vector<std::uint8_t>& bytes);
LabelImage load_labels(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const ImageU8& image);
void save_png(const std::filesystem::path& path, const ImageU8& image);
std::vector<std::uint8_t> encode_label_png(const LabelImage& labels);

/// (3,H,W) or (1,H,W) float tensor in [0,1].
Tensor<float> to_tensor(const ImageU8& image);
/// Rounds [0,1] values to 8 bits; values are clamped first.
ImageU8 from_tensor(const Tensor<float>& chw);

}  // namespace mmif::data
