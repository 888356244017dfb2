#include "mmif/masking/mask.hpp"

#include "mmif/data/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace mmif::masking {

std::string to_string(MaskKind k) {
  switch (k) {
    case MaskKind::Brush: return "brush";
    case MaskKind::Rect: return "rect";
    case MaskKind::Outpaint: return "outpaint";
  }
  return "brush";
}

std::string to_string(Bucket b) {
  switch (b) {
    case Bucket::Low: return "low";
    case Bucket::Mid: return "mid";
    case Bucket::High: return "high";
  }
  return "mid";
}

MaskKind parse_kind(const std::string& s) {
  if (s == "brush") return MaskKind::Brush;
  if (s == "rect") return MaskKind::Rect;
  if (s == "outpaint") return MaskKind::Outpaint;
  throw MaskError("unknown mask kind '" + s + "'");
}

Bucket parse_bucket(const std::string& s) {
  if (s == "low") return Bucket::Low;
  if (s == "mid") return Bucket::Mid;
  if (s == "high") return Bucket::High;
  throw MaskError("unknown bucket '" + s + "'");
}

std::vector<Bucket> parse_buckets(const std::string& s) {
  std::vector<Bucket> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(parse_bucket(tok));
  if (out.empty()) throw MaskError("empty bucket list");
  return out;
}

std::array<double, 2> bucket_range(Bucket b) {
  switch (b) {
    case Bucket::Low: return {0.10, 0.30};
    case Bucket::Mid: return {0.40, 0.60};
    case Bucket::High: return {0.70, 0.90};
  }
  return {0.0, 1.0};
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Stamps a filled disc; returns the number of newly covered pixels.
Index stamp(Mask& m, Index h, Index w, double cy, double cx, double r) {
  Index added = 0;
  const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(cy - r)));
  const Index y1 = std::min<Index>(h - 1, static_cast<Index>(std::ceil(cy + r)));
  const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(cx - r)));
  const Index x1 = std::min<Index>(w - 1, static_cast<Index>(std::ceil(cx + r)));
  for (Index y = y0; y <= y1; ++y)
    for (Index x = x0; x <= x1; ++x) {
      const double dy = y - cy, dx = x - cx;
      if (dy * dy + dx * dx <= r * r && m[y * w + x] == 0.0f) {
        m[y * w + x] = 1.0f;
        ++added;
      }
    }
  return added;
}

// Random-walk strokes added one segment at a time until coverage reaches a target drawn
// from [lo, hi]; the round fails if one segment jumps past hi.
bool brush_round(Mask& m, Index h, Index w, double lo, double hi, Rng& rng) {
  const double target = uniform(rng, lo, hi);
  const double total = static_cast<double>(h * w);
  // Geometric-mean side: identical to the short side on square images, and still able to cover
  // thin strips.
  const double side = std::sqrt(total);
  const double max_radius = 0.5 * static_cast<double>(std::min(h, w));
  Index covered = 0;
  for (int stroke = 0; stroke < 64; ++stroke) {
    double y = uniform(rng, 0, h), x = uniform(rng, 0, w);
    double angle = uniform(rng, 0, 2 * M_PI);
    const double radius = std::min(uniform(rng, 0.03, 0.08) * side + 0.5, max_radius);
    const int vertices = 2 + static_cast<int>(uniform(rng, 0, 6));
    for (int v = 0; v < vertices; ++v) {
      angle += uniform(rng, -0.9, 0.9);
      const double len = uniform(rng, 0.1, 0.3) * side;
      const int steps = std::max(1, static_cast<int>(std::ceil(len / std::max(1.0, radius * 0.5))));
      for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        covered += stamp(m, h, w, y + t * len * std::sin(angle), x + t * len * std::cos(angle), radius);
        const double c = covered / total;
        if (c > hi) return false;
        if (c >= target) return true;
      }
      y = std::clamp(y + len * std::sin(angle), 0.0, static_cast<double>(h - 1));
      x = std::clamp(x + len * std::cos(angle), 0.0, static_cast<double>(w - 1));
    }
  }
  return false;
}

// Aspect is jittered around the image's own, so elongated images can still reach the high bucket.
bool rect_round(Mask& m, Index h, Index w, double lo, double hi, Rng& rng) {
  const double area = uniform(rng, lo, hi) * static_cast<double>(h * w);
  const double aspect =
      std::exp(uniform(rng, std::log(0.5), std::log(2.0))) * static_cast<double>(h) / static_cast<double>(w);
  const Index rh = std::clamp<Index>(std::lround(std::sqrt(area * aspect)), 1, h);
  const Index rw = std::clamp<Index>(std::lround(area / static_cast<double>(rh)), 1, w);
  const Index top = std::uniform_int_distribution<Index>(0, h - rh)(rng);
  const Index left = std::uniform_int_distribution<Index>(0, w - rw)(rng);
  for (Index y = top; y < top + rh; ++y)
    for (Index x = left; x < left + rw; ++x) m[y * w + x] = 1.0f;
  const double c = static_cast<double>(rh * rw) / static_cast<double>(h * w);
  return c >= lo && c <= hi;
}

// Missing frame around a centered known rectangle whose side fraction is sampled from the bucket.
bool outpaint_round(Mask& m, Index h, Index w, double lo, double hi, Rng& rng) {
  const double known = 1.0 - uniform(rng, lo, hi);
  const double side = std::sqrt(known);
  const Index kh = std::clamp<Index>(std::lround(side * h), 0, h);
  const Index kw = std::clamp<Index>(std::lround(side * w), 0, w);
  const Index top = (h - kh) / 2, left = (w - kw) / 2;
  m.data().setOnes();
  for (Index y = top; y < top + kh; ++y)
    for (Index x = left; x < left + kw; ++x) m[y * w + x] = 0.0f;
  const double c = 1.0 - static_cast<double>(kh * kw) / static_cast<double>(h * w);
  return c >= lo && c <= hi;
}

}  // namespace

Mask generate_mask(const MaskSpec& spec, Index height, Index width) {
  if (height < 16 || width < 16) throw MaskError("mask size must be at least 16x16");
  const auto [lo, hi] = bucket_range(spec.bucket);
  Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(spec.kind) * 7919 + 17);
  for (int round = 0; round < kMaxProposalRounds; ++round) {
    Mask m(Shape{1, height, width});
    bool ok = false;
    switch (spec.kind) {
      case MaskKind::Brush: ok = brush_round(m, height, width, lo, hi, rng); break;
      case MaskKind::Rect: ok = rect_round(m, height, width, lo, hi, rng); break;
      case MaskKind::Outpaint: ok = outpaint_round(m, height, width, lo, hi, rng); break;
    }
    if (ok) return m;
  }
  throw MaskError("could not reach bucket " + to_string(spec.bucket) + " for a " + std::to_string(height) + "x" +
                  std::to_string(width) + " " + to_string(spec.kind) + " mask in " +
                  std::to_string(kMaxProposalRounds) + " rounds");
}

double coverage(const Mask& m) { return m.size() ? m.data().template cast<double>().mean() : 0.0; }

namespace {

// Maps each image element to its mask element: mask planes broadcast over channels.
template <typename F>
Tensor<float> masked_map(const Tensor<float>& a, const Mask& m, const char* what, F f) {
  const Shape& s = a.shape();
  const Shape& ms = m.shape();
  require_shape(s.rank() >= 3 && ms.rank() == s.rank(), std::string(what) + ": rank mismatch");
  const Index h = s[s.rank() - 2], w = s[s.rank() - 1];
  require_shape(ms[ms.rank() - 2] == h && ms[ms.rank() - 1] == w && ms[ms.rank() - 3] == 1,
                std::string(what) + ": mask " + ms.str() + " does not match image " + s.str());
  const Index batch = s.rank() == 4 ? s[0] : 1;
  require_shape(s.rank() == 3 || ms[0] == batch, std::string(what) + ": batch mismatch");
  const Index c = s[s.rank() - 3], plane = h * w;
  Tensor<float> out(s);
  for (Index b = 0; b < batch; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < plane; ++i) {
        const Index k = (b * c + ch) * plane + i;
        out[k] = f(k, m[b * plane + i]);
      }
  return out;
}

}  // namespace

Tensor<float> apply_mask(const Tensor<float>& image, const Mask& m) {
  return masked_map(image, m, "apply_mask", [&](Index k, float mv) { return image[k] * (1.0f - mv); });
}

Tensor<float> composite(const Tensor<float>& generated, const Tensor<float>& truth, const Mask& m) {
  require_shape(generated.shape() == truth.shape(), "composite: generated " + generated.shape().str() +
                                                        " vs truth " + truth.shape().str());
  return masked_map(truth, m, "composite", [&](Index k, float mv) { return mv > 0.5f ? generated[k] : truth[k]; });
}

std::vector<std::uint8_t> encode_mask(const Mask& m) {
  require_shape(m.rank() == 3 && m.dim(0) == 1, "encode_mask expects (1,H,W)");
  data::ImageU8 img{static_cast<int>(m.dim(2)), static_cast<int>(m.dim(1)), 1, {}};
  img.pixels.resize(static_cast<size_t>(m.size()));
  for (Index i = 0; i < m.size(); ++i) img.pixels[static_cast<size_t>(i)] = m[i] > 0.5f ? 255 : 0;
  return data::encode_png(img);
}

Mask decode_mask(const std::vector<std::uint8_t>& png_bytes) {
  const data::ImageU8 img = data::decode_image(png_bytes, 1);
  Mask m(Shape{1, img.height, img.width});
  for (Index i = 0; i < m.size(); ++i) m[i] = img.pixels[static_cast<size_t>(i)] >= 128 ? 1.0f : 0.0f;
  return m;
}

void save_mask(const std::filesystem::path& path, const Mask& m) { data::write_file(path, encode_mask(m)); }
Mask load_mask(const std::filesystem::path& path) { return decode_mask(data::read_file(path)); }

std::uint64_t eval_mask_seed(std::uint64_t seed, std::uint64_t index, Bucket b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(b)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace mmif::masking
