#include "mmif/data/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <jpeglib.h>

namespace mmif::data {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("short write to " + path.string());
}

namespace {

bool is_png(const std::vector<std::uint8_t>& b) {
  return b.size() >= 8 && png_sig_cmp(b.data(), 0, 8) == 0;
}
bool is_jpeg(const std::vector<std::uint8_t>& b) { return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF; }

ImageU8 decode_png(const std::vector<std::uint8_t>& bytes, int channels) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw ImageError(std::string("PNG decode failed: ") + img.message);
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  ImageU8 out{static_cast<int>(img.width), static_cast<int>(img.height), channels, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ImageError(std::string("PNG decode failed: ") + img.message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

ImageU8 decode_jpeg(const std::vector<std::uint8_t>& bytes, int channels) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager jerr{};
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  ImageU8 out;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError(std::string("JPEG decode failed: ") + jerr.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.channels = channels;
  out.pixels.resize(static_cast<size_t>(out.width) * out.height * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<size_t>(cinfo.output_scanline) * out.width * channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

ImageU8 decode_image(const std::vector<std::uint8_t>& bytes, int channels) {
  if (channels != 1 && channels != 3) throw ImageError("channels must be 1 or 3");
  if (is_png(bytes)) return decode_png(bytes, channels);
  if (is_jpeg(bytes)) return decode_jpeg(bytes, channels);
  throw ImageError("unrecognized image format (expected PNG or JPEG)");
}

ImageU8 load_image(const std::filesystem::path& path, int channels) {
  try {
    return decode_image(read_file(path), channels);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

LabelImage decode_labels(const std::vector<std::uint8_t>& bytes) {
  if (!is_png(bytes)) throw ImageError("label maps must be PNG");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw ImageError(std::string("PNG decode failed: ") + img.message);
  if (img.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_COLORMAP)) {
    png_image_free(&img);
    throw ImageError("label PNG must be single-channel grayscale");
  }
  const bool wide = (img.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  img.format = wide ? PNG_FORMAT_LINEAR_Y : PNG_FORMAT_GRAY;
  LabelImage out{static_cast<int>(img.width), static_cast<int>(img.height), {}};
  const size_t n = static_cast<size_t>(img.width) * img.height;
  out.labels.resize(n);
  if (wide) {
    std::vector<std::uint16_t> buf(n);
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
      throw ImageError(std::string("PNG decode failed: ") + img.message);
    std::copy(buf.begin(), buf.end(), out.labels.begin());
  } else {
    std::vector<std::uint8_t> buf(n);
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
      throw ImageError(std::string("PNG decode failed: ") + img.message);
    std::copy(buf.begin(), buf.end(), out.labels.begin());
  }
  return out;
}

LabelImage load_labels(const std::filesystem::path& path) {
  try {
    return decode_labels(read_file(path));
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const ImageU8& image) {
  if (image.channels != 1 && image.channels != 3) throw ImageError("can only encode 1- or 3-channel images");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr))
    throw ImageError(std::string("PNG encode failed: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr))
    throw ImageError(std::string("PNG encode failed: ") + img.message);
  out.resize(size);
  return out;
}

void save_png(const std::filesystem::path& path, const ImageU8& image) { write_file(path, encode_png(image)); }

std::vector<std::uint8_t> encode_label_png(const LabelImage& labels) {
  ImageU8 img{labels.width, labels.height, 1, {}};
  img.pixels.reserve(labels.labels.size());
  for (std::int32_t v : labels.labels) {
    if (v < 0 || v > 255) throw ImageError("label " + std::to_string(v) + " does not fit an 8-bit label PNG");
    img.pixels.push_back(static_cast<std::uint8_t>(v));
  }
  return encode_png(img);
}

Tensor<float> to_tensor(const ImageU8& image) {
  const Index c = image.channels, h = image.height, w = image.width;
  Tensor<float> t(Shape{c, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index k = 0; k < c; ++k)
        t[(k * h + y) * w + x] = static_cast<float>(image.pixels[static_cast<size_t>((y * w + x) * c + k)]) / 255.0f;
  return t;
}

ImageU8 from_tensor(const Tensor<float>& chw) {
  require_shape(chw.rank() == 3 && (chw.dim(0) == 1 || chw.dim(0) == 3), "from_tensor expects (1|3,H,W)");
  const Index c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  ImageU8 img{static_cast<int>(w), static_cast<int>(h), static_cast<int>(c), {}};
  img.pixels.resize(static_cast<size_t>(c * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index k = 0; k < c; ++k) {
        const float v = std::clamp(chw[(k * h + y) * w + x], 0.0f, 1.0f);
        img.pixels[static_cast<size_t>((y * w + x) * c + k)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

}  // namespace mmif::data
