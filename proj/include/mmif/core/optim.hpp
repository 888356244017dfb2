#pragma once

#include "mmif/core/nn.hpp"

#include <cmath>
#include <cstdint>

namespace mmif {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed parameter list. Moment buffers are exposed for checkpointing.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(ParamList<Scalar> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  /// Applies one update using the currently accumulated gradients; params without grads are skipped.
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(opts_.beta1), b2 = static_cast<Scalar>(opts_.beta2);
    const auto step_size = static_cast<Scalar>(opts_.lr / bc1);
    const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
    const auto eps = static_cast<Scalar>(opts_.eps);
    for (size_t i = 0; i < params_.size(); ++i) {
      const Var<Scalar>& p = params_[i].second;
      if (!p.has_grad()) continue;
      const Buffer<Scalar>& g = p.grad().data();
      Buffer<Scalar>& m = m_[i].data();
      Buffer<Scalar>& v = v_[i].data();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
      p.mutable_value().data() -= step_size * m / ((v * inv_bc2).sqrt() + eps);
    }
  }

  void zero_grad() { zero_grads(params_); }

  const ParamList<Scalar>& params() const { return params_; }
  std::vector<Tensor<Scalar>>& first_moments() { return m_; }
  std::vector<Tensor<Scalar>>& second_moments() { return v_; }
  const std::vector<Tensor<Scalar>>& first_moments() const { return m_; }
  const std::vector<Tensor<Scalar>>& second_moments() const { return v_; }
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  AdamOptions& options() { return opts_; }

 private:
  ParamList<Scalar> params_;
  AdamOptions opts_;
  std::vector<Tensor<Scalar>> m_;
  std::vector<Tensor<Scalar>> v_;
  std::int64_t t_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
template <typename Scalar>
double clip_grad_norm(const ParamList<Scalar>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    if (p.has_grad()) sq += p.grad().data().template cast<double>().square().sum();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto f = static_cast<Scalar>(max_norm / norm);
    for (const auto& [name, p] : params)
      if (p.has_grad()) p.mutable_grad().data() *= f;
  }
  return norm;
}

}  // namespace mmif
