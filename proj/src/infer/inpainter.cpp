#include "mmif/infer/inpainter.hpp"

#include "mmif/train/config.hpp"

namespace mmif::infer {
namespace {

void check_same_size(const data::ImageU8& a, const masking::Mask& m, const std::string& what) {
  if (m.rank() != 3 || m.dim(0) != 1 || m.dim(1) != a.height || m.dim(2) != a.width)
    throw InferError(what + " is " + m.shape().str() + ", image is " + std::to_string(a.width) + "x" +
                     std::to_string(a.height));
}

masking::Mask resize_mask(const masking::Mask& m, Index s) {
  return m.dim(1) == s && m.dim(2) == s ? m : resize_nearest(m, s, s);
}

}  // namespace

data::ImageU8 composite_u8(const data::ImageU8& filled, const data::ImageU8& truth, const masking::Mask& mask) {
  if (filled.width != truth.width || filled.height != truth.height || filled.channels != truth.channels)
    throw InferError("composite: image sizes differ");
  check_same_size(truth, mask, "composite mask");
  data::ImageU8 out = truth;
  const size_t c = static_cast<size_t>(truth.channels);
  for (size_t p = 0; p < static_cast<size_t>(mask.size()); ++p)
    if (mask[static_cast<Index>(p)] > 0.5f)
      std::copy_n(filled.pixels.begin() + static_cast<std::ptrdiff_t>(p * c), c,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>(p * c));
  return out;
}

bool unmasked_equal(const data::ImageU8& a, const data::ImageU8& b, const masking::Mask& mask) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) return false;
  check_same_size(a, mask, "mask");
  const size_t c = static_cast<size_t>(a.channels);
  for (size_t p = 0; p < static_cast<size_t>(mask.size()); ++p) {
    if (mask[static_cast<Index>(p)] > 0.5f) continue;
    for (size_t k = 0; k < c; ++k)
      if (a.pixels[p * c + k] != b.pixels[p * c + k]) return false;
  }
  return true;
}

Inpainter::Inpainter(model::InpaintNet<float> net, std::string config_hash)
    : net_(std::move(net)), hash_(std::move(config_hash)) {}

Inpainter Inpainter::from_checkpoint(const train::Checkpoint& c) {
  const auto phase = c.scalars.find("phase");
  if (phase != c.scalars.end() && phase->second != train::to_string(train::Phase::TrainEncoder))
    throw InferError("checkpoint is from phase '" + phase->second + "'; inference needs a train-encoder checkpoint");
  const train::RunConfig cfg = train::parse_config(c.config_text);
  model::InpaintNet<float> net(cfg.model, cfg.train.seed);
  train::restore_params(c, "param.", net.all_params());
  return Inpainter(std::move(net), c.config_hash);
}

Inpainter Inpainter::load(const std::filesystem::path& dir) { return from_checkpoint(train::load_checkpoint(dir)); }

Result Inpainter::run(const Request& r) const {
  if (r.image.channels != 3) throw InferError("image must be RGB");
  if (r.image.width < 1 || r.image.height < 1) throw InferError("image is empty");
  check_same_size(r.image, r.mask, "mask");
  const Index s = net_.cfg.resolution, k = net_.cfg.num_classes;

  Result out;
  out.mask = resize_mask(r.mask, s);
  const Tensor<float> img01 = resize_bilinear(data::to_tensor(r.image), s, s);
  out.input = data::from_tensor(img01);

  model::NetInput<float> in;
  // The network sees the same 8-bit pixels that the composite keeps.
  in.image = data::to_tensor(out.input).reshaped(Shape{1, 3, s, s});
  in.image.data() = in.image.data() * 2.0f - 1.0f;
  in.mask = out.mask.reshaped(Shape{1, 1, s, s});
  in.edge = Tensor<float>(Shape{1, 1, s, s});
  in.seg = Tensor<float>(Shape{1, k, s, s});
  if (r.edge) {
    if (r.edge->channels != 1) throw InferError("edge hint must be a single-channel image");
    const Tensor<float> e = resize_nearest(data::to_tensor(*r.edge), s, s);
    for (Index i = 0; i < s * s; ++i) in.edge[i] = e[i] >= 0.5f ? 1.0f : 0.0f;
  }
  if (r.seg) {
    Tensor<std::int32_t> lab(Shape{r.seg->height, r.seg->width});
    std::copy(r.seg->labels.begin(), r.seg->labels.end(), lab.ptr());
    lab = resize_nearest(lab, s, s);
    for (Index i = 0; i < s * s; ++i) {
      const std::int32_t c = lab[i];
      if (c < 0 || c >= k)
        throw InferError("seg hint label " + std::to_string(c) + " outside [0," + std::to_string(k) + ")");
      in.seg[c * s * s + i] = 1.0f;
    }
  }

  Tensor<float> raw01;
  {
    NoGradGuard ng;
    const auto fwd = net_.forward(in, r.seed);
    raw01 = fwd.output.value().reshaped(Shape{3, s, s});
    raw01.data() = (raw01.data() + 1.0f) * 0.5f;
  }
  out.raw = data::from_tensor(raw01);
  out.composite = composite_u8(out.raw, out.input, out.mask);
  out.raw_full = data::from_tensor(resize_bilinear(raw01, r.image.height, r.image.width));
  out.composite_full = composite_u8(out.raw_full, r.image, r.mask);
  return out;
}

}  // namespace mmif::infer
