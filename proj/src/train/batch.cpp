#include "mmif/train/batch.hpp"

#include <algorithm>

namespace mmif::train {

Corpus load_corpus(const std::filesystem::path& manifest, data::Split split, int resolution,
                   const std::string& label_merge, const data::CannyThresholds& canny) {
  auto records = data::filter_split(data::load_manifest(manifest), split);
  if (records.empty())
    throw data::IngestError(manifest.string() + ": no records in split '" + data::to_string(split) + "'");
  std::optional<data::LabelMergeMap> merge;
  if (!label_merge.empty())
    merge = std::filesystem::exists(label_merge) ? data::LabelMergeMap::load(label_merge)
                                                 : data::LabelMergeMap::parse(label_merge);
  Corpus c;
  c.resolution = resolution;
  for (const auto& r : records) c.samples.push_back(data::prepare_sample(r, resolution, merge, canny));
  c.num_classes = merge ? merge->num_classes() : 1;
  for (const auto& s : c.samples) c.num_classes = std::max(c.num_classes, s.num_classes);
  return c;
}

void write_onehot(const data::LabelMap& labels, int num_classes, Tensor<float>& out, Index row) {
  const Index hw = labels.size();
  for (Index p = 0; p < hw; ++p) {
    const std::int32_t k = labels[p];
    if (k < 0 || k >= num_classes)
      throw data::IngestError("label " + std::to_string(k) + " outside [0," + std::to_string(num_classes) + ")");
    out[(row * num_classes + k) * hw + p] = 1.0f;
  }
}

Batch make_batch(const Corpus& corpus, const std::vector<size_t>& indices, const std::vector<masking::Mask>& masks,
                 bool with_hints) {
  require_shape(indices.size() == masks.size(), "one mask per batch element");
  const Index b = static_cast<Index>(indices.size()), s = corpus.resolution, k = corpus.num_classes;
  Batch out;
  out.indices = indices;
  auto& in = out.input;
  in.image = Tensor<float>(Shape{b, 3, s, s});
  in.mask = Tensor<float>(Shape{b, 1, s, s});
  in.edge = Tensor<float>(Shape{b, 1, s, s});
  in.seg = Tensor<float>(Shape{b, k, s, s});
  out.labels = Tensor<std::int32_t>(Shape{b, s, s});
  for (Index i = 0; i < b; ++i) {
    const data::Sample& smp = corpus.samples.at(indices[static_cast<size_t>(i)]);
    const masking::Mask& m = masks[static_cast<size_t>(i)];
    require_shape(m.shape() == Shape({1, s, s}), "mask " + m.shape().str() + " does not match resolution");
    std::copy_n(smp.image.ptr(), 3 * s * s, in.image.ptr() + i * 3 * s * s);
    std::copy_n(m.ptr(), s * s, in.mask.ptr() + i * s * s);
    std::copy_n(smp.seg.ptr(), s * s, out.labels.ptr() + i * s * s);
    if (with_hints) {
      std::copy_n(smp.edge.ptr(), s * s, in.edge.ptr() + i * s * s);
      write_onehot(smp.seg, static_cast<int>(k), in.seg, i);
    }
  }
  return out;
}

double masked_l1(const Tensor<float>& out, const Tensor<float>& image, const Tensor<float>& mask) {
  require_shape(out.shape() == image.shape(), "masked_l1 shape mismatch");
  const Index b = out.dim(0), hw = out.dim(2) * out.dim(3);
  double total = 0, count = 0;
  for (Index i = 0; i < b; ++i)
    for (Index p = 0; p < hw; ++p) {
      if (mask[i * hw + p] <= 0.5f) continue;
      for (Index c = 0; c < 3; ++c) {
        const Index idx = (i * 3 + c) * hw + p;
        total += std::abs(static_cast<double>(out[idx]) - image[idx]) / 2.0;
        count += 1;
      }
    }
  return count > 0 ? total / count : 0.0;
}

}  // namespace mmif::train
