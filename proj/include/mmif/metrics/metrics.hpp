#pragma once

#include "mmif/core/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>

namespace mmif::metrics {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rows are samples, columns are feature dimensions.
using FeatureSet = Eigen::MatrixXd;

/// Mean SSIM over channels and valid 11x11 Gaussian windows (sigma 1.5) of (C,H,W) or (B,C,H,W)
/// images in [0,1]. Sides below 11 use a window clipped to the image.
double ssim(const Tensor<float>& x, const Tensor<float>& y);

/// Frechet distance between Gaussian fits of two feature sets (unbiased covariances).
double fid(const FeatureSet& a, const FeatureSet& b);

struct IdsScores {
  double p_ids = 0.0;  // NaN when unpaired
  double u_ids = 0.0;
};

/// Linear soft-margin SVM (C = 1) on standardized features separating real (+1) from fake (-1),
/// evaluated on the training points. U-IDS is the misclassification rate averaged over the two
/// classes; P-IDS the fraction of pairs where the fake scores strictly above its real partner.
IdsScores pids_uids(const FeatureSet& real, const FeatureSet& fake, bool paired);

/// Mean IoU over the classes present in `gt`. Both are (..., H, W) label maps.
double miou(const Tensor<std::int32_t>& pred, const Tensor<std::int32_t>& gt, int num_classes);

/// Mean over taps of the mean squared difference of channel-unit-normalized activations.
/// Taps are (B,C,h,w) pairs produced by the same extractor.
double lpips_proxy(const std::vector<Tensor<float>>& taps_x, const std::vector<Tensor<float>>& taps_y);

}  // namespace mmif::metrics
