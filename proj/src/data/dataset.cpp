#include "mmif/data/dataset.hpp"

#include "mmif/core/ops.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace mmif::data {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw IngestError("unknown split '" + s + "'");
}

bool is_power_of_two(long v) { return v > 0 && (v & (v - 1)) == 0; }

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("manifest not found: " + path.string());
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return (fp.is_absolute() ? fp : base / fp).lexically_normal().string();
  };
  std::vector<ManifestRecord> records;
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestRecord rec;
    try {
      const json j = json::parse(line);
      rec.id = j.at("id").get<std::string>();
      rec.image_path = resolve(j.at("image_path").get<std::string>());
      if (j.contains("seg_path") && !j.at("seg_path").is_null())
        rec.seg_path = resolve(j.at("seg_path").get<std::string>());
      rec.split = parse_split(j.value("split", std::string("train")));
    } catch (const std::exception& e) {
      throw IngestError(path.string() + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
    if (!ids.insert(rec.id).second)
      throw IngestError(path.string() + ":" + std::to_string(lineno) + ": duplicate id '" + rec.id + "'");
    records.push_back(std::move(rec));
  }
  return records;
}

void save_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write manifest " + path.string());
  for (const auto& r : records) {
    json j{{"id", r.id}, {"image_path", r.image_path}, {"split", to_string(r.split)}};
    j["seg_path"] = r.seg_path ? json(*r.seg_path) : json(nullptr);
    out << j.dump() << "\n";
  }
}

std::vector<ManifestRecord> filter_split(const std::vector<ManifestRecord>& records, Split split) {
  std::vector<ManifestRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [split](const ManifestRecord& r) { return r.split == split; });
  return out;
}

LabelMergeMap::LabelMergeMap(std::map<std::int32_t, std::int32_t> mapping) : mapping_(std::move(mapping)) {
  std::set<std::int32_t> targets;
  for (const auto& [src, dst] : mapping_) {
    if (dst < 0) throw IngestError("merged label " + std::to_string(dst) + " is negative");
    targets.insert(dst);
  }
  num_classes_ = targets.empty() ? 0 : *targets.rbegin() + 1;
  if (static_cast<int>(targets.size()) != num_classes_)
    throw IngestError("label merge map is not surjective onto [0," + std::to_string(num_classes_ - 1) + "]");
}

LabelMergeMap LabelMergeMap::identity(int num_classes) {
  std::map<std::int32_t, std::int32_t> m;
  for (int i = 0; i < num_classes; ++i) m[i] = i;
  return LabelMergeMap(std::move(m));
}

LabelMergeMap LabelMergeMap::parse(const std::string& text) {
  std::map<std::int32_t, std::int32_t> m;
  auto insert = [&](std::int32_t src, std::int32_t dst) {
    if (!m.emplace(src, dst).second) throw IngestError("label " + std::to_string(src) + " mapped twice");
  };
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    const json j = json::parse(text);
    for (auto it = j.begin(); it != j.end(); ++it) insert(std::stoi(it.key()), it.value().get<std::int32_t>());
  } else {
    std::string norm = text;
    std::replace(norm.begin(), norm.end(), ',', ' ');
    std::istringstream ss(norm);
    std::string tok;
    while (ss >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw IngestError("bad label merge token '" + tok + "'");
      insert(std::stoi(tok.substr(0, colon)), std::stoi(tok.substr(colon + 1)));
    }
  }
  return LabelMergeMap(std::move(m));
}

LabelMergeMap LabelMergeMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("label merge map not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::int32_t LabelMergeMap::operator()(std::int32_t label) const {
  auto it = mapping_.find(label);
  if (it == mapping_.end()) throw IngestError("unknown label " + std::to_string(label) + " in segmentation map");
  return it->second;
}

LabelMap merge_labels(const LabelMap& seg, const LabelMergeMap& map) {
  LabelMap out(seg.shape());
  for (Index i = 0; i < seg.size(); ++i) out[i] = map(seg[i]);
  return out;
}

namespace {

// Replicate-padded separable Gaussian blur of an (H,W) plane.
std::vector<double> gaussian_blur(const std::vector<double>& img, Index h, Index w, double sigma) {
  if (sigma <= 0) return img;
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * radius + 1);
  double norm = 0;
  for (int i = -radius; i <= radius; ++i) norm += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= norm;
  std::vector<double> tmp(img.size()), out(img.size());
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img[y * w + std::clamp<Index>(x + i, 0, w - 1)];
      tmp[y * w + x] = acc;
    }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[std::clamp<Index>(y + i, 0, h - 1) * w + x];
      out[y * w + x] = acc;
    }
  return out;
}

}  // namespace

Tensor<float> extract_edges(const Tensor<float>& image, float low, float high, float sigma) {
  require_shape(image.rank() == 3 && image.dim(0) == 3, "extract_edges expects a (3,H,W) image");
  if (!(low >= 0 && low <= high)) throw std::invalid_argument("Canny thresholds must satisfy 0 <= low <= high");
  if (!image.allFinite()) throw std::invalid_argument("extract_edges: non-finite pixel values");
  const Index h = image.dim(1), w = image.dim(2);
  std::vector<double> gray(static_cast<size_t>(h * w));
  for (Index i = 0; i < h * w; ++i) {
    const double r = (image[i] + 1.0) / 2.0, g = (image[h * w + i] + 1.0) / 2.0, b = (image[2 * h * w + i] + 1.0) / 2.0;
    gray[i] = 0.299 * r + 0.587 * g + 0.114 * b;
  }
  gray = gaussian_blur(gray, h, w, sigma);
  auto px = [&](Index y, Index x) { return gray[std::clamp<Index>(y, 0, h - 1) * w + std::clamp<Index>(x, 0, w - 1)]; };
  std::vector<double> mag(gray.size()), gx(gray.size()), gy(gray.size());
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double dx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1) - px(y - 1, x - 1) - 2 * px(y, x - 1) -
                         px(y + 1, x - 1)) / 8.0;
      const double dy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1) - px(y - 1, x - 1) - 2 * px(y - 1, x) -
                         px(y - 1, x + 1)) / 8.0;
      gx[y * w + x] = dx;
      gy[y * w + x] = dy;
      mag[y * w + x] = std::hypot(dx, dy);
    }
  auto m = [&](Index y, Index x) { return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : mag[y * w + x]; };
  // Non-maximum suppression along the quantized gradient direction; ties keep the first pixel.
  std::vector<std::uint8_t> state(gray.size(), 0);  // 0 none, 1 weak, 2 strong
  constexpr double kPi = 3.14159265358979323846;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double v = mag[y * w + x];
      if (v < low || v <= 1e-12) continue;
      double ang = std::atan2(gy[y * w + x], gx[y * w + x]) * 180.0 / kPi;
      if (ang < 0) ang += 180.0;
      Index dy = 0, dx = 0;
      if (ang < 22.5 || ang >= 157.5) dx = 1;
      else if (ang < 67.5) dy = 1, dx = 1;
      else if (ang < 112.5) dy = 1;
      else dy = 1, dx = -1;
      const double before = m(y - dy, x - dx), after = m(y + dy, x + dx);
      if (v > before && v >= after) state[y * w + x] = v >= high ? 2 : 1;
    }
  // Hysteresis: weak pixels survive when 8-connected to a strong one.
  Tensor<float> edges(Shape{h, w});
  std::deque<Index> queue;
  for (Index i = 0; i < h * w; ++i)
    if (state[i] == 2) {
      edges[i] = 1.0f;
      queue.push_back(i);
    }
  while (!queue.empty()) {
    const Index i = queue.front();
    queue.pop_front();
    const Index y = i / w, x = i % w;
    for (Index dy = -1; dy <= 1; ++dy)
      for (Index dx = -1; dx <= 1; ++dx) {
        const Index ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const Index j = ny * w + nx;
        if (state[j] == 1 && edges[j] == 0.0f) {
          edges[j] = 1.0f;
          queue.push_back(j);
        }
      }
  }
  return edges;
}

Sample make_sample(std::string id, const Tensor<float>& image01, const LabelMap& labels, int resolution,
                   int num_classes, const CannyThresholds& thresholds) {
  if (resolution < 16 || !is_power_of_two(resolution))
    throw IngestError("resolution must be a power of two >= 16, got " + std::to_string(resolution));
  Sample s;
  s.id = std::move(id);
  s.num_classes = num_classes;
  s.image = resize_bilinear(image01, resolution, resolution);
  s.image.data() = (s.image.data() * 2.0f - 1.0f).max(-1.0f).min(1.0f);
  s.seg = resize_nearest(labels, resolution, resolution);
  s.edge = extract_edges(s.image, thresholds);
  return s;
}

Sample prepare_sample(const ManifestRecord& record, int resolution, const std::optional<LabelMergeMap>& merge,
                      const CannyThresholds& thresholds) {
  ImageU8 img;
  try {
    img = load_image(record.image_path, 3);
  } catch (const ImageError& e) {
    throw IngestError("record '" + record.id + "': " + e.what());
  }
  LabelMap labels(Shape{img.height, img.width});
  int num_classes = 1;
  if (record.seg_path) {
    LabelImage li;
    try {
      li = load_labels(*record.seg_path);
    } catch (const ImageError& e) {
      throw IngestError("record '" + record.id + "': " + e.what());
    }
    if (li.width != img.width || li.height != img.height)
      throw IngestError("record '" + record.id + "': segmentation " + std::to_string(li.width) + "x" +
                        std::to_string(li.height) + " does not match image " + std::to_string(img.width) + "x" +
                        std::to_string(img.height));
    for (size_t i = 0; i < li.labels.size(); ++i) labels[static_cast<Index>(i)] = li.labels[i];
    if (merge) {
      labels = merge_labels(labels, *merge);
      num_classes = merge->num_classes();
    } else {
      num_classes = labels.data().maxCoeff() + 1;
    }
  } else if (merge) {
    num_classes = std::max(1, merge->num_classes());
  }
  return make_sample(record.id, to_tensor(img), labels, resolution, num_classes, thresholds);
}

std::vector<size_t> epoch_order(size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
  for (size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<size_t> d(0, i - 1);
    std::swap(order[i - 1], order[d(rng)]);
  }
  return order;
}

std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, int count, int size,
                                             std::uint64_t seed, int num_classes) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ManifestRecord> records;
  for (int n = 0; n < count; ++n) {
    ImageU8 img{size, size, 3, std::vector<std::uint8_t>(static_cast<size_t>(size) * size * 3)};
    LabelImage lab{size, size, std::vector<std::int32_t>(static_cast<size_t>(size) * size, 0)};
    double c0[3], c1[3];
    for (int k = 0; k < 3; ++k) c0[k] = u(rng), c1[k] = u(rng);
    const double angle = u(rng) * 6.283185307179586;
    std::vector<std::array<double, 3>> rgb(static_cast<size_t>(size) * size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double t = 0.5 + 0.5 * (std::cos(angle) * (x / double(size) - 0.5) + std::sin(angle) * (y / double(size) - 0.5));
        for (int k = 0; k < 3; ++k) rgb[y * size + x][k] = c0[k] * (1 - t) + c1[k] * t;
      }
    const int shapes = 1 + static_cast<int>(u(rng) * 3);
    for (int s = 0; s < shapes; ++s) {
      const int kind = static_cast<int>(u(rng) * 3);
      const int label = num_classes > 1 ? 1 + kind % (num_classes - 1) : 0;
      const double cx = u(rng) * size, cy = u(rng) * size, r = (0.1 + 0.25 * u(rng)) * size;
      const double col[3] = {u(rng), u(rng), u(rng)};
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double dx = x - cx, dy = y - cy;
          bool inside = false;
          if (kind == 0) inside = dx * dx + dy * dy < r * r;
          else if (kind == 1) inside = std::abs(dx) < r && std::abs(dy) < 0.6 * r;
          else inside = dy > -r && dy < r && std::abs(dx) < (r - dy) * 0.5;
          if (!inside) continue;
          for (int k = 0; k < 3; ++k) rgb[y * size + x][k] = col[k];
          lab.labels[static_cast<size_t>(y) * size + x] = label;
        }
    }
    for (size_t i = 0; i < rgb.size(); ++i)
      for (int k = 0; k < 3; ++k)
        img.pixels[i * 3 + k] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[i][k], 0.0, 1.0) * 255.0));
    const std::string id = "synth_" + std::to_string(n);
    save_png(dir / (id + ".png"), img);
    write_file(dir / (id + "_seg.png"), encode_label_png(lab));
    records.push_back({id, id + ".png", id + "_seg.png", Split::Train});
  }
  const auto manifest = dir / "manifest.jsonl";
  save_manifest(manifest, records);
  return manifest;
}

}  // namespace mmif::data
