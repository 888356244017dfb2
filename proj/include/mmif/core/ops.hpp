#pragma once

#include "mmif/core/autograd.hpp"

#include <vector>

namespace mmif {

// Differentiable primitives over Var<Scalar>. Binary elementwise ops broadcast
// NumPy-style (shapes aligned from the right, size-1 dims stretch).

template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar> Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& a, Scalar s);

template <typename Scalar> Var<Scalar> neg(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> sigmoid(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> tanh(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> elu(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> relu(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> leaky_relu(const Var<Scalar>& a, Scalar slope = Scalar(0.2));
template <typename Scalar> Var<Scalar> exp(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> log(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> sqrt(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> square(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> abs(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> pow(const Var<Scalar>& a, Scalar p);
/// Clamps values; the gradient passes only where the input lies inside [lo, hi].
template <typename Scalar> Var<Scalar> clamp(const Var<Scalar>& a, Scalar lo, Scalar hi);

template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> mean(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> sum_axis(const Var<Scalar>& a, int axis);   // keeps dim as 1
template <typename Scalar> Var<Scalar> mean_axis(const Var<Scalar>& a, int axis);  // keeps dim as 1
template <typename Scalar> Var<Scalar> max_axis(const Var<Scalar>& a, int axis);   // keeps dim as 1
template <typename Scalar> Var<Scalar> softmax(const Var<Scalar>& a, int axis);
/// Euclidean norm of each row of a (rows, n) tensor -> (rows, 1); gradient is 0 at a zero row.
template <typename Scalar> Var<Scalar> row_norm(const Var<Scalar>& a);

/// (m,k)x(k,n) or batched (b,m,k)x(b,k,n).
template <typename Scalar> Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename Scalar> Var<Scalar> transpose(const Var<Scalar>& a);

template <typename Scalar> Var<Scalar> reshape(const Var<Scalar>& a, Shape shape);
template <typename Scalar> Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis);
template <typename Scalar> Var<Scalar> slice(const Var<Scalar>& a, int axis, Index start, Index length);

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

/// NCHW convolution; weight is (out, in, kh, kw); bias (out) may be undefined.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, ConvSpec spec);

template <typename Scalar> Var<Scalar> upsample_nearest(const Var<Scalar>& x, int factor);
template <typename Scalar> Var<Scalar> avg_pool(const Var<Scalar>& x, int k);

/// (B, heads*ch, H, W) -> (B*heads, N, ch*p*p), N = (H/p)*(W/p), patches in raster order.
template <typename Scalar> Var<Scalar> patchify(const Var<Scalar>& x, int patch, int heads);
/// Inverse of patchify for an input of shape (B, C, H, W).
template <typename Scalar>
Var<Scalar> unpatchify(const Var<Scalar>& t, Index batch, Index channels, Index height, Index width, int patch,
                       int heads);

// Convenience operators.
template <typename Scalar> Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar> Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar> Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }
template <typename Scalar> Var<Scalar> operator/(const Var<Scalar>& a, const Var<Scalar>& b) { return div(a, b); }
template <typename Scalar> Var<Scalar> operator-(const Var<Scalar>& a) { return neg(a); }
template <typename Scalar> Var<Scalar> operator*(const Var<Scalar>& a, Scalar s) { return scale(a, s); }
template <typename Scalar> Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) { return scale(a, s); }
template <typename Scalar> Var<Scalar> operator+(const Var<Scalar>& a, Scalar s) { return add_scalar(a, s); }
template <typename Scalar> Var<Scalar> operator-(const Var<Scalar>& a, Scalar s) { return add_scalar(a, -s); }

/// Broadcast shape of two shapes, or ShapeError.
Shape broadcast_shape(const Shape& a, const Shape& b);

// Non-differentiable tensor helpers used by data and metrics code.
template <typename Scalar> Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index height, Index width);
template <typename Scalar> Tensor<Scalar> resize_nearest(const Tensor<Scalar>& x, Index height, Index width);

}  // namespace mmif
