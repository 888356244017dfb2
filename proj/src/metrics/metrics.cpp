#include "mmif/metrics/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <vector>

namespace mmif::metrics {

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < size; ++i) total += (w[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma)));
  for (double& v : w) v /= total;
  return w;
}

/// Separable valid-mode filtering of one plane.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& img, const std::vector<double>& wy, const std::vector<double>& wx) {
  const Index ky = static_cast<Index>(wy.size()), kx = static_cast<Index>(wx.size());
  const Index h = img.rows() - ky + 1, w = img.cols() - kx + 1;
  Eigen::ArrayXXd tmp = Eigen::ArrayXXd::Zero(h, img.cols());
  for (Index k = 0; k < ky; ++k) tmp += wy[k] * img.middleRows(k, h);
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(h, w);
  for (Index k = 0; k < kx; ++k) out += wx[k] * tmp.middleCols(k, w);
  return out;
}

void check_finite(const FeatureSet& f, const char* what) {
  if (!f.allFinite()) throw MetricError(std::string(what) + " features contain non-finite values");
}

}  // namespace

double ssim(const Tensor<float>& x, const Tensor<float>& y) {
  if (x.shape() != y.shape()) throw MetricError("ssim shape mismatch: " + x.shape().str() + " vs " + y.shape().str());
  if (x.rank() < 3) throw MetricError("ssim expects (C,H,W) or (B,C,H,W)");
  const Index h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1), planes = x.size() / (h * w);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto wy = gaussian_window(static_cast<int>(std::min<Index>(11, h)), 1.5);
  const auto wx = gaussian_window(static_cast<int>(std::min<Index>(11, w)), 1.5);
  double total = 0;
  Index count = 0;
  for (Index p = 0; p < planes; ++p) {
    // Row-major plane mapped as (w,h) column-major then transposed keeps (y,x) indexing.
    Eigen::ArrayXXd a = Eigen::Map<const Eigen::ArrayXXf>(x.ptr() + p * h * w, w, h).transpose().cast<double>();
    Eigen::ArrayXXd b = Eigen::Map<const Eigen::ArrayXXf>(y.ptr() + p * h * w, w, h).transpose().cast<double>();
    Eigen::ArrayXXd mu_a = filter_valid(a, wy, wx), mu_b = filter_valid(b, wy, wx);
    Eigen::ArrayXXd saa = filter_valid(a * a, wy, wx) - mu_a * mu_a;
    Eigen::ArrayXXd sbb = filter_valid(b * b, wy, wx) - mu_b * mu_b;
    Eigen::ArrayXXd sab = filter_valid(a * b, wy, wx) - mu_a * mu_b;
    Eigen::ArrayXXd map = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) /
                          ((mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2));
    total += map.sum();
    count += map.size();
  }
  return total / static_cast<double>(count);
}

double fid(const FeatureSet& a, const FeatureSet& b) {
  if (a.cols() != b.cols()) throw MetricError("fid feature dimensions differ");
  if (a.rows() < 2 || b.rows() < 2) throw MetricError("fid needs at least two samples per set");
  check_finite(a, "first");
  check_finite(b, "second");
  const Eigen::RowVectorXd mu_a = a.colwise().mean(), mu_b = b.colwise().mean();
  const Eigen::MatrixXd ca = a.rowwise() - mu_a, cb = b.rowwise() - mu_b;
  const Eigen::MatrixXd sa = ca.transpose() * ca / static_cast<double>(a.rows() - 1);
  const Eigen::MatrixXd sb = cb.transpose() * cb / static_cast<double>(b.rows() - 1);
  // Tr sqrt(Sa Sb) = Tr sqrt(Sa^1/2 Sb Sa^1/2), and the latter is symmetric PSD.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  const Eigen::MatrixXd root_a =
      ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = root_a * sb * root_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  const double most_negative = em.eigenvalues().minCoeff();
  if (most_negative < -1e-5) std::cerr << "warning: fid clipped eigenvalue " << most_negative << "\n";
  const double tr_root = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
}

IdsScores pids_uids(const FeatureSet& real, const FeatureSet& fake, bool paired) {
  if (real.rows() == 0 || fake.rows() == 0) throw MetricError("pids_uids needs samples of both classes");
  if (real.cols() != fake.cols()) throw MetricError("pids_uids feature dimensions differ");
  if (paired && real.rows() != fake.rows()) throw MetricError("paired P-IDS needs equal counts");
  check_finite(real, "real");
  check_finite(fake, "fake");
  const Index nr = real.rows(), n = nr + fake.rows(), d = real.cols();

  // Standardize with statistics of the union; constant columns are left centered.
  Eigen::MatrixXd x(n, d + 1);
  x.topLeftCorner(nr, d) = real;
  x.bottomLeftCorner(n - nr, d) = fake;
  const Eigen::RowVectorXd mean = x.leftCols(d).colwise().mean();
  x.leftCols(d).rowwise() -= mean;
  Eigen::RowVectorXd sd = (x.leftCols(d).colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt();
  for (Index j = 0; j < d; ++j)
    if (sd(j) > 0) x.col(j) /= sd(j);
  x.col(d).setOnes();  // bias as an extra feature
  Eigen::VectorXd label(n);
  label.head(nr).setOnes();
  label.tail(n - nr).setConstant(-1.0);

  // Dual coordinate descent for the hinge-loss SVM (C = 1), cyclic order so results are deterministic.
  const double c = 1.0;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n), w = Eigen::VectorXd::Zero(d + 1);
  const Eigen::VectorXd qii = x.rowwise().squaredNorm();
  for (int epoch = 0; epoch < 1000; ++epoch) {
    double pg_max = -std::numeric_limits<double>::infinity(), pg_min = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      const double g = label(i) * x.row(i).dot(w) - 1.0;
      double pg = g;
      if (alpha(i) == 0) pg = std::min(g, 0.0);
      else if (alpha(i) == c) pg = std::max(g, 0.0);
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg == 0) continue;
      const double old = alpha(i);
      alpha(i) = std::clamp(old - g / qii(i), 0.0, c);
      w += (alpha(i) - old) * label(i) * x.row(i).transpose();
    }
    if (pg_max - pg_min < 1e-4) break;
  }
  const Eigen::VectorXd score = x * w;
  Index real_wrong = 0, fake_wrong = 0;
  for (Index i = 0; i < nr; ++i) real_wrong += score(i) <= 0 ? 1 : 0;
  for (Index i = nr; i < n; ++i) fake_wrong += score(i) > 0 ? 1 : 0;
  IdsScores out;
  out.u_ids = 0.5 * (static_cast<double>(real_wrong) / static_cast<double>(nr) +
                     static_cast<double>(fake_wrong) / static_cast<double>(n - nr));
  out.p_ids = std::numeric_limits<double>::quiet_NaN();
  if (paired) {
    Index fooled = 0;
    for (Index i = 0; i < nr; ++i) fooled += score(nr + i) > score(i) ? 1 : 0;
    out.p_ids = static_cast<double>(fooled) / static_cast<double>(nr);
  }
  return out;
}

double miou(const Tensor<std::int32_t>& pred, const Tensor<std::int32_t>& gt, int num_classes) {
  if (pred.shape() != gt.shape()) throw MetricError("miou shape mismatch");
  std::vector<Index> inter(static_cast<size_t>(num_classes)), uni(static_cast<size_t>(num_classes)),
      present(static_cast<size_t>(num_classes));
  for (Index i = 0; i < gt.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (g < 0 || g >= num_classes || p < 0 || p >= num_classes) throw MetricError("miou label outside [0,K)");
    ++present[g];
    if (p == g) {
      ++inter[g];
      ++uni[g];
    } else {
      ++uni[g];
      ++uni[p];
    }
  }
  double total = 0;
  int classes = 0;
  for (int k = 0; k < num_classes; ++k)
    if (present[k] > 0) {
      total += static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
      ++classes;
    }
  if (classes == 0) throw MetricError("miou on an empty label map");
  return total / classes;
}

double lpips_proxy(const std::vector<Tensor<float>>& taps_x, const std::vector<Tensor<float>>& taps_y) {
  if (taps_x.size() != taps_y.size() || taps_x.empty()) throw MetricError("lpips_proxy needs matching taps");
  double total = 0;
  for (size_t t = 0; t < taps_x.size(); ++t) {
    const Tensor<float>& a = taps_x[t];
    const Tensor<float>& b = taps_y[t];
    if (a.shape() != b.shape() || a.rank() != 4) throw MetricError("lpips_proxy tap shape mismatch");
    const Index n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    double sq = 0;
    for (Index i = 0; i < n; ++i)
      for (Index p = 0; p < hw; ++p) {
        double na = 0, nb = 0;
        for (Index k = 0; k < c; ++k) {
          na += std::pow(a[(i * c + k) * hw + p], 2);
          nb += std::pow(b[(i * c + k) * hw + p], 2);
        }
        na = std::sqrt(na) + 1e-10;
        nb = std::sqrt(nb) + 1e-10;
        for (Index k = 0; k < c; ++k) sq += std::pow(a[(i * c + k) * hw + p] / na - b[(i * c + k) * hw + p] / nb, 2);
      }
    total += sq / static_cast<double>(a.size());
  }
  return total / static_cast<double>(taps_x.size());
}

}  // namespace mmif::metrics
