#pragma once

#include "mmif/core/nn.hpp"

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

namespace mmif::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
};

/// Central-difference check of d(sum(f(inputs) * R))/d(inputs) for a fixed random
/// projection R. Every Var in `inputs` must require grad.
inline GradCheckResult grad_check(const std::function<Var<double>()>& f, const std::vector<std::pair<std::string, Var<double>>>& inputs,
                                  std::uint64_t seed = 99, double h = 1e-6) {
  Rng rng(seed);
  for (const auto& [n, v] : inputs) v.zero_grad();
  Var<double> out = f();
  const Tensor<double> proj = normal_tensor<double>(out.shape(), rng);
  auto projected = [&](const Var<double>& o) { return (o.value().data() * proj.data()).sum(); };
  sum(mul(out, constant(proj))).backward();

  GradCheckResult res;
  for (const auto& [name, v] : inputs) {
    const Tensor<double> analytic = v.has_grad() ? v.grad() : Tensor<double>(v.shape());
    Buffer<double> numeric(v.size());
    for (Index i = 0; i < v.size(); ++i) {
      const double orig = v.value()[i];
      v.mutable_value()[i] = orig + h;
      double fp, fm;
      {
        NoGradGuard ng;
        fp = projected(f());
        v.mutable_value()[i] = orig - h;
        fm = projected(f());
      }
      v.mutable_value()[i] = orig;
      numeric[i] = (fp - fm) / (2 * h);
    }
    const double diff = (analytic.data() - numeric).matrix().norm();
    const double denom = std::max({analytic.data().matrix().norm(), numeric.matrix().norm(), 1e-8});
    const double rel = diff / denom;
    if (rel >= res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst = name;
    }
  }
  return res;
}

inline Var<double> random_input(Shape s, Rng& rng, double stddev = 1.0) {
  return Var<double>(normal_tensor<double>(std::move(s), rng, stddev), true);
}

}  // namespace mmif::testing
