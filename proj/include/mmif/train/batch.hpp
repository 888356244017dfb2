#pragma once

#include "mmif/data/dataset.hpp"
#include "mmif/masking/mask.hpp"
#include "mmif/model/network.hpp"

#include <vector>

namespace mmif::train {

/// Samples at model resolution, loaded once.
struct Corpus {
  std::vector<data::Sample> samples;
  int num_classes = 1;
  int resolution = 0;
};

/// Loads every record of `split` at `resolution`. K is the largest label seen plus one unless
/// `merge` fixes it.
Corpus load_corpus(const std::filesystem::path& manifest, data::Split split, int resolution,
                   const std::string& label_merge, const data::CannyThresholds& canny);

struct Batch {
  model::NetInput<float> input;  // ground-truth structures as hints (masked inside the net)
  Tensor<std::int32_t> labels;   // (B,s,s)
  std::vector<size_t> indices;
};

/// Stacks samples with their masks. `with_hints` false leaves edge and seg inputs at zero.
Batch make_batch(const Corpus& corpus, const std::vector<size_t>& indices, const std::vector<masking::Mask>& masks,
                 bool with_hints = true);

/// (s,s) labels to a (1,K,s,s) one-hot written into `out` at batch row `row`.
void write_onehot(const data::LabelMap& labels, int num_classes, Tensor<float>& out, Index row);

/// Mean |O - Y| over masked pixels and channels, measured on the [0,1] scale. `out` and `image`
/// are (B,3,s,s) in [-1,1]; `mask` is (B,1,s,s).
double masked_l1(const Tensor<float>& out, const Tensor<float>& image, const Tensor<float>& mask);

}  // namespace mmif::train
