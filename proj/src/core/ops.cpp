#include "mmif/core/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace mmif {

namespace {

template <typename Scalar>
using NodeT = Node<Scalar>;

template <typename Scalar>
NodeT<Scalar>* parent_if_grad(NodeT<Scalar>& self, size_t i) {
  NodeT<Scalar>* p = self.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

std::array<Index, 4> pad4(const Shape& s) {
  std::array<Index, 4> d{1, 1, 1, 1};
  require_shape(s.rank() <= 4, "broadcasting supports rank <= 4, got " + s.str());
  for (int i = 0; i < s.rank(); ++i) d[4 - s.rank() + i] = s[i];
  return d;
}

struct Broadcast {
  std::array<Index, 4> out{};
  std::array<Index, 4> sa{};
  std::array<Index, 4> sb{};
};

std::array<Index, 4> bstrides(const std::array<Index, 4>& dims, const std::array<Index, 4>& out) {
  std::array<Index, 4> st{};
  Index s = 1;
  for (int i = 3; i >= 0; --i) {
    st[i] = (dims[i] == 1 && out[i] != 1) ? 0 : s;
    s *= dims[i];
  }
  return st;
}

Broadcast make_broadcast(const Shape& a, const Shape& b, const Shape& out) {
  Broadcast bc;
  bc.out = pad4(out);
  bc.sa = bstrides(pad4(a), bc.out);
  bc.sb = bstrides(pad4(b), bc.out);
  return bc;
}

template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  Index o = 0;
  for (Index i0 = 0; i0 < bc.out[0]; ++i0)
    for (Index i1 = 0; i1 < bc.out[1]; ++i1)
      for (Index i2 = 0; i2 < bc.out[2]; ++i2) {
        Index oa = i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2];
        Index ob = i0 * bc.sb[0] + i1 * bc.sb[1] + i2 * bc.sb[2];
        for (Index i3 = 0; i3 < bc.out[3]; ++i3, ++o) f(o, oa + i3 * bc.sa[3], ob + i3 * bc.sb[3]);
      }
}

enum class BinOp { Add, Sub, Mul, Div };

template <typename Scalar, BinOp Op>
Scalar apply(Scalar x, Scalar y) {
  if constexpr (Op == BinOp::Add) return x + y;
  if constexpr (Op == BinOp::Sub) return x - y;
  if constexpr (Op == BinOp::Mul) return x * y;
  if constexpr (Op == BinOp::Div) return x / y;
}

template <typename Scalar, BinOp Op>
Var<Scalar> binary(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Tensor<Scalar>& av = a.value();
  const Tensor<Scalar>& bv = b.value();
  if (av.shape() == bv.shape()) {
    Buffer<Scalar> out;
    if constexpr (Op == BinOp::Add) out = av.data() + bv.data();
    if constexpr (Op == BinOp::Sub) out = av.data() - bv.data();
    if constexpr (Op == BinOp::Mul) out = av.data() * bv.data();
    if constexpr (Op == BinOp::Div) out = av.data() / bv.data();
    return make_result<Scalar>(Tensor<Scalar>(av.shape(), std::move(out)), {a, b}, [](NodeT<Scalar>& self) {
      const auto& g = self.grad.data();
      NodeT<Scalar>* pa = parent_if_grad(self, 0);
      NodeT<Scalar>* pb = parent_if_grad(self, 1);
      const auto& x = self.parents[0]->value.data();
      const auto& y = self.parents[1]->value.data();
      if constexpr (Op == BinOp::Add) {
        if (pa) pa->grad_buffer() += g;
        if (pb) pb->grad_buffer() += g;
      } else if constexpr (Op == BinOp::Sub) {
        if (pa) pa->grad_buffer() += g;
        if (pb) pb->grad_buffer() -= g;
      } else if constexpr (Op == BinOp::Mul) {
        if (pa) pa->grad_buffer() += g * y;
        if (pb) pb->grad_buffer() += g * x;
      } else {
        if (pa) pa->grad_buffer() += g / y;
        if (pb) pb->grad_buffer() -= g * x / (y * y);
      }
    });
  }
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
  const Broadcast bc = make_broadcast(av.shape(), bv.shape(), out_shape);
  Tensor<Scalar> out(out_shape);
  {
    Scalar* o = out.ptr();
    const Scalar* x = av.ptr();
    const Scalar* y = bv.ptr();
    for_each_broadcast(bc, [&](Index io, Index ia, Index ib) { o[io] = apply<Scalar, Op>(x[ia], y[ib]); });
  }
  return make_result<Scalar>(std::move(out), {a, b}, [bc](NodeT<Scalar>& self) {
    const Scalar* g = self.grad.ptr();
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    NodeT<Scalar>* pb = parent_if_grad(self, 1);
    const Scalar* x = self.parents[0]->value.ptr();
    const Scalar* y = self.parents[1]->value.ptr();
    Scalar* ga = pa ? pa->grad_buffer().data() : nullptr;
    Scalar* gb = pb ? pb->grad_buffer().data() : nullptr;
    for_each_broadcast(bc, [&](Index io, Index ia, Index ib) {
      const Scalar gi = g[io];
      if constexpr (Op == BinOp::Add) {
        if (ga) ga[ia] += gi;
        if (gb) gb[ib] += gi;
      } else if constexpr (Op == BinOp::Sub) {
        if (ga) ga[ia] += gi;
        if (gb) gb[ib] -= gi;
      } else if constexpr (Op == BinOp::Mul) {
        if (ga) ga[ia] += gi * y[ib];
        if (gb) gb[ib] += gi * x[ia];
      } else {
        if (ga) ga[ia] += gi / y[ib];
        if (gb) gb[ib] -= gi * x[ia] / (y[ib] * y[ib]);
      }
    });
  });
}

// Unary op: forward maps the input buffer; local_grad(x, y) gives dy/dx elementwise.
template <typename Scalar, typename Fwd, typename Grad>
Var<Scalar> unary(const Var<Scalar>& a, Fwd fwd, Grad local_grad) {
  Buffer<Scalar> y = fwd(a.value().data());
  return make_result<Scalar>(Tensor<Scalar>(a.shape(), std::move(y)), {a}, [local_grad](NodeT<Scalar>& self) {
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    if (!pa) return;
    pa->grad_buffer() += self.grad.data() * local_grad(pa->value.data(), self.value.data());
  });
}

// View of a tensor as (outer, n, inner) around `axis`.
struct AxisView {
  Index outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  require_shape(axis >= 0 && axis < s.rank(), "axis " + std::to_string(axis) + " out of range for " + s.str());
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[i];
  v.n = s[axis];
  for (int i = axis + 1; i < s.rank(); ++i) v.inner *= s[i];
  return v;
}

Shape keep_dim(const Shape& s, int axis) {
  Shape r = s;
  r[axis] = 1;
  return r;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int r = std::max(a.rank(), b.rank());
  std::vector<Index> out(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int ia = a.rank() - r + i;
    const int ib = b.rank() - r + i;
    const Index da = ia >= 0 ? a[ia] : 1;
    const Index db = ib >= 0 ? b[ib] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + a.str() + " with " + b.str());
    out[static_cast<size_t>(i)] = std::max(da, db);
  }
  return Shape(std::move(out));
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  return binary<Scalar, BinOp::Add>(a, b);
}
template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  return binary<Scalar, BinOp::Sub>(a, b);
}
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  return binary<Scalar, BinOp::Mul>(a, b);
}
template <typename Scalar>
Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b) {
  return binary<Scalar, BinOp::Div>(a, b);
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  return unary(
      a, [s](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x + s; },
      [](const Buffer<Scalar>& x, const Buffer<Scalar>&) -> Buffer<Scalar> { return Buffer<Scalar>::Ones(x.size()); });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  return unary(
      a, [s](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x * s; },
      [s](const Buffer<Scalar>& x, const Buffer<Scalar>&) -> Buffer<Scalar> {
        return Buffer<Scalar>::Constant(x.size(), s);
      });
}

template <typename Scalar>
Var<Scalar> neg(const Var<Scalar>& a) {
  return scale(a, Scalar(-1));
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  return unary(
      a, [](const Buffer<Scalar>& x) -> Buffer<Scalar> { return Scalar(1) / (Scalar(1) + (-x).exp()); },
      [](const Buffer<Scalar>&, const Buffer<Scalar>& y) -> Buffer<Scalar> { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  return unary(
      a, [](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x.tanh(); },
      [](const Buffer<Scalar>&, const Buffer<Scalar>& y) -> Buffer<Scalar> { return Scalar(1) - y * y; });
}

template <typename Scalar>
Var<Scalar> elu(const Var<Scalar>& a) {
  return unary(
      a,
      [](const Buffer<Scalar>& x) -> Buffer<Scalar> {
        return (x > Scalar(0)).select(x, x.min(Scalar(0)).exp() - Scalar(1));
      },
      [](const Buffer<Scalar>& x, const Buffer<Scalar>& y) -> Buffer<Scalar> {
        return (x > Scalar(0)).select(Buffer<Scalar>::Ones(x.size()), y + Scalar(1));
      });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  return unary(
      a, [](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x.max(Scalar(0)); },
      [](const Buffer<Scalar>& x, const Buffer<Scalar>&) -> Buffer<Scalar> {
        return (x > Scalar(0)).template cast<Scalar>();
      });
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& a, Scalar slope) {
  return unary(
      a, [slope](const Buffer<Scalar>& x) -> Buffer<Scalar> { return (x > Scalar(0)).select(x, x * slope); },
      [slope](const Buffer<Scalar>& x, const Buffer<Scalar>&) -> Buffer<Scalar> {
        return (x > Scalar(0)).select(Buffer<Scalar>::Ones(x.size()), Buffer<Scalar>::Constant(x.size(), slope));
      });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  return unary(
      a, [](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x.exp(); },
      [](const Buffer<Scalar>&, const Buffer<Scalar>& y) -> Buffer<Scalar> { return y; });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
  return unary(
      a, [](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x.log(); },
      [](const Buffer<Scalar>& x, const Buffer<Scalar>&) -> Buffer<Scalar> { return x.inverse(); });
}

template <typename Scalar>
Var<Scalar> sqrt(const Var<Scalar>& a) {
  return unary(
      a, [](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x.sqrt(); },
      [](const Buffer<Scalar>&, const Buffer<Scalar>& y) -> Buffer<Scalar> { return Scalar(0.5) / y; });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a) {
  return unary(
      a, [](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x.square(); },
      [](const Buffer<Scalar>& x, const Buffer<Scalar>&) -> Buffer<Scalar> { return Scalar(2) * x; });
}

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& a) {
  return unary(
      a, [](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x.abs(); },
      [](const Buffer<Scalar>& x, const Buffer<Scalar>&) -> Buffer<Scalar> {
        return (x > Scalar(0)).template cast<Scalar>() - (x < Scalar(0)).template cast<Scalar>();
      });
}

template <typename Scalar>
Var<Scalar> pow(const Var<Scalar>& a, Scalar p) {
  return unary(
      a, [p](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x.pow(p); },
      [p](const Buffer<Scalar>& x, const Buffer<Scalar>&) -> Buffer<Scalar> { return p * x.pow(p - Scalar(1)); });
}

template <typename Scalar>
Var<Scalar> clamp(const Var<Scalar>& a, Scalar lo, Scalar hi) {
  return unary(
      a, [lo, hi](const Buffer<Scalar>& x) -> Buffer<Scalar> { return x.max(lo).min(hi); },
      [lo, hi](const Buffer<Scalar>& x, const Buffer<Scalar>&) -> Buffer<Scalar> {
        return ((x >= lo) && (x <= hi)).template cast<Scalar>();
      });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  return make_result<Scalar>(Tensor<Scalar>::scalar(a.value().data().sum()), {a}, [](NodeT<Scalar>& self) {
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    if (pa) pa->grad_buffer() += self.grad.data()[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

template <typename Scalar>
Var<Scalar> sum_axis(const Var<Scalar>& a, int axis) {
  const AxisView v = axis_view(a.shape(), axis);
  Tensor<Scalar> out(keep_dim(a.shape(), axis));
  const Scalar* x = a.value().ptr();
  Scalar* o = out.ptr();
  for (Index i = 0; i < v.outer; ++i)
    for (Index k = 0; k < v.n; ++k)
      for (Index j = 0; j < v.inner; ++j) o[i * v.inner + j] += x[(i * v.n + k) * v.inner + j];
  return make_result<Scalar>(std::move(out), {a}, [v](NodeT<Scalar>& self) {
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    if (!pa) return;
    Scalar* gx = pa->grad_buffer().data();
    const Scalar* g = self.grad.ptr();
    for (Index i = 0; i < v.outer; ++i)
      for (Index k = 0; k < v.n; ++k)
        for (Index j = 0; j < v.inner; ++j) gx[(i * v.n + k) * v.inner + j] += g[i * v.inner + j];
  });
}

template <typename Scalar>
Var<Scalar> row_norm(const Var<Scalar>& a) {
  require_shape(a.shape().rank() == 2, "row_norm expects (rows, n), got " + a.shape().str());
  const Index rows = a.dim(0), n = a.dim(1);
  Tensor<Scalar> out(Shape{rows, 1});
  for (Index r = 0; r < rows; ++r) out[r] = ConstRowMajorMap<Scalar>(a.value().ptr(), rows, n).row(r).norm();
  Tensor<Scalar> norms = out;
  return make_result<Scalar>(std::move(out), {a}, [rows, n, norms](NodeT<Scalar>& self) {
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    if (!pa) return;
    Scalar* gx = pa->grad_buffer().data();
    const Scalar* x = pa->value.ptr();
    for (Index r = 0; r < rows; ++r) {
      // Subgradient 0 at the origin keeps a zero difference from producing NaN.
      if (norms[r] == Scalar(0)) continue;
      const Scalar f = self.grad[r] / norms[r];
      for (Index j = 0; j < n; ++j) gx[r * n + j] += f * x[r * n + j];
    }
  });
}

template <typename Scalar>
Var<Scalar> mean_axis(const Var<Scalar>& a, int axis) {
  return scale(sum_axis(a, axis), Scalar(1) / static_cast<Scalar>(a.dim(axis)));
}

template <typename Scalar>
Var<Scalar> max_axis(const Var<Scalar>& a, int axis) {
  const AxisView v = axis_view(a.shape(), axis);
  Tensor<Scalar> out(keep_dim(a.shape(), axis));
  std::vector<Index> arg(static_cast<size_t>(v.outer * v.inner));
  const Scalar* x = a.value().ptr();
  for (Index i = 0; i < v.outer; ++i)
    for (Index j = 0; j < v.inner; ++j) {
      Index best = 0;
      Scalar m = x[i * v.n * v.inner + j];
      for (Index k = 1; k < v.n; ++k) {
        const Scalar c = x[(i * v.n + k) * v.inner + j];
        if (c > m) {
          m = c;
          best = k;
        }
      }
      out[i * v.inner + j] = m;
      arg[static_cast<size_t>(i * v.inner + j)] = (i * v.n + best) * v.inner + j;
    }
  return make_result<Scalar>(std::move(out), {a}, [arg = std::move(arg)](NodeT<Scalar>& self) {
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    if (!pa) return;
    Scalar* gx = pa->grad_buffer().data();
    for (size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += self.grad.data()[static_cast<Index>(i)];
  });
}

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& a, int axis) {
  const AxisView v = axis_view(a.shape(), axis);
  Tensor<Scalar> out(a.shape());
  const Scalar* x = a.value().ptr();
  Scalar* y = out.ptr();
  for (Index i = 0; i < v.outer; ++i)
    for (Index j = 0; j < v.inner; ++j) {
      const Index base = i * v.n * v.inner + j;
      Scalar m = -std::numeric_limits<Scalar>::infinity();
      for (Index k = 0; k < v.n; ++k) m = std::max(m, x[base + k * v.inner]);
      Scalar s = 0;
      for (Index k = 0; k < v.n; ++k) {
        const Scalar e = std::exp(x[base + k * v.inner] - m);
        y[base + k * v.inner] = e;
        s += e;
      }
      for (Index k = 0; k < v.n; ++k) y[base + k * v.inner] /= s;
    }
  return make_result<Scalar>(std::move(out), {a}, [v](NodeT<Scalar>& self) {
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    if (!pa) return;
    Scalar* gx = pa->grad_buffer().data();
    const Scalar* g = self.grad.ptr();
    const Scalar* y = self.value.ptr();
    for (Index i = 0; i < v.outer; ++i)
      for (Index j = 0; j < v.inner; ++j) {
        const Index base = i * v.n * v.inner + j;
        Scalar dot = 0;
        for (Index k = 0; k < v.n; ++k) dot += g[base + k * v.inner] * y[base + k * v.inner];
        for (Index k = 0; k < v.n; ++k) {
          const Index o = base + k * v.inner;
          gx[o] += y[o] * (g[o] - dot);
        }
      }
  });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool batched = sa.rank() == 3;
  require_shape((sa.rank() == 2 && sb.rank() == 2) || (sa.rank() == 3 && sb.rank() == 3),
                "matmul expects rank-2 or rank-3 operands, got " + sa.str() + " x " + sb.str());
  const Index batch = batched ? sa[0] : 1;
  const Index m = sa[sa.rank() - 2], k = sa[sa.rank() - 1];
  const Index n = sb[sb.rank() - 1];
  require_shape(sb[sb.rank() - 2] == k && (!batched || sb[0] == batch),
                "matmul shape mismatch " + sa.str() + " x " + sb.str());
  Tensor<Scalar> out(batched ? Shape{batch, m, n} : Shape{m, n});
  for (Index i = 0; i < batch; ++i) {
    ConstRowMajorMap<Scalar> A(a.value().ptr() + i * m * k, m, k);
    ConstRowMajorMap<Scalar> B(b.value().ptr() + i * k * n, k, n);
    RowMajorMap<Scalar> C(out.ptr() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  return make_result<Scalar>(std::move(out), {a, b}, [batch, m, k, n](NodeT<Scalar>& self) {
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    NodeT<Scalar>* pb = parent_if_grad(self, 1);
    for (Index i = 0; i < batch; ++i) {
      ConstRowMajorMap<Scalar> G(self.grad.ptr() + i * m * n, m, n);
      if (pa) {
        RowMajorMap<Scalar> GA(pa->grad_buffer().data() + i * m * k, m, k);
        ConstRowMajorMap<Scalar> B(self.parents[1]->value.ptr() + i * k * n, k, n);
        GA.noalias() += G * B.transpose();
      }
      if (pb) {
        RowMajorMap<Scalar> GB(pb->grad_buffer().data() + i * k * n, k, n);
        ConstRowMajorMap<Scalar> A(self.parents[0]->value.ptr() + i * m * k, m, k);
        GB.noalias() += A.transpose() * G;
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  const Shape& s = a.shape();
  require_shape(s.rank() == 2 || s.rank() == 3, "transpose expects rank 2 or 3, got " + s.str());
  const bool batched = s.rank() == 3;
  const Index batch = batched ? s[0] : 1;
  const Index r = s[s.rank() - 2], c = s[s.rank() - 1];
  Tensor<Scalar> out(batched ? Shape{batch, c, r} : Shape{c, r});
  for (Index i = 0; i < batch; ++i) {
    ConstRowMajorMap<Scalar> A(a.value().ptr() + i * r * c, r, c);
    RowMajorMap<Scalar> T(out.ptr() + i * r * c, c, r);
    T = A.transpose();
  }
  return make_result<Scalar>(std::move(out), {a}, [batch, r, c](NodeT<Scalar>& self) {
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    if (!pa) return;
    for (Index i = 0; i < batch; ++i) {
      ConstRowMajorMap<Scalar> G(self.grad.ptr() + i * r * c, c, r);
      RowMajorMap<Scalar> GA(pa->grad_buffer().data() + i * r * c, r, c);
      GA += G.transpose();
    }
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  Tensor<Scalar> out = a.value().reshaped(std::move(shape));
  return make_result<Scalar>(std::move(out), {a}, [](NodeT<Scalar>& self) {
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    if (pa) pa->grad_buffer() += self.grad.data();
  });
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis) {
  require_shape(!parts.empty(), "concat of zero tensors");
  Shape out_shape = parts.front().shape();
  Index total = 0;
  for (const auto& p : parts) {
    require_shape(p.shape().rank() == out_shape.rank(), "concat rank mismatch");
    for (int d = 0; d < out_shape.rank(); ++d)
      if (d != axis)
        require_shape(p.shape()[d] == out_shape[d],
                      "concat shape mismatch " + p.shape().str() + " vs " + out_shape.str());
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  const AxisView v = axis_view(out_shape, axis);
  Tensor<Scalar> out(out_shape);
  std::vector<Index> lens;
  Index off = 0;
  for (const auto& p : parts) {
    const Index len = p.shape()[axis];
    lens.push_back(len);
    for (Index i = 0; i < v.outer; ++i)
      std::copy_n(p.value().ptr() + i * len * v.inner, len * v.inner, out.ptr() + (i * v.n + off) * v.inner);
    off += len;
  }
  return make_result<Scalar>(std::move(out), parts, [v, lens](NodeT<Scalar>& self) {
    Index off = 0;
    for (size_t pi = 0; pi < lens.size(); ++pi) {
      const Index len = lens[pi];
      if (NodeT<Scalar>* p = parent_if_grad(self, pi)) {
        Scalar* gp = p->grad_buffer().data();
        for (Index i = 0; i < v.outer; ++i) {
          Eigen::Map<Buffer<Scalar>> dst(gp + i * len * v.inner, len * v.inner);
          Eigen::Map<const Buffer<Scalar>> src(self.grad.ptr() + (i * v.n + off) * v.inner, len * v.inner);
          dst += src;
        }
      }
      off += len;
    }
  });
}

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& a, int axis, Index start, Index length) {
  const AxisView v = axis_view(a.shape(), axis);
  require_shape(start >= 0 && length >= 0 && start + length <= v.n, "slice out of range on " + a.shape().str());
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  Tensor<Scalar> out(out_shape);
  for (Index i = 0; i < v.outer; ++i)
    std::copy_n(a.value().ptr() + (i * v.n + start) * v.inner, length * v.inner, out.ptr() + i * length * v.inner);
  return make_result<Scalar>(std::move(out), {a}, [v, start, length](NodeT<Scalar>& self) {
    NodeT<Scalar>* pa = parent_if_grad(self, 0);
    if (!pa) return;
    Scalar* gp = pa->grad_buffer().data();
    for (Index i = 0; i < v.outer; ++i) {
      Eigen::Map<Buffer<Scalar>> dst(gp + (i * v.n + start) * v.inner, length * v.inner);
      Eigen::Map<const Buffer<Scalar>> src(self.grad.ptr() + i * length * v.inner, length * v.inner);
      dst += src;
    }
  });
}

namespace {

struct ConvGeom {
  Index n, c, h, w, o, kh, kw, ho, wo;
  ConvSpec spec;
  Index rows() const { return c * kh * kw; }
  Index cols() const { return n * ho * wo; }
};

template <typename Scalar>
void im2col(const ConvGeom& g, const Scalar* x, Scalar* cols) {
  const Index ncols = g.cols();
  const Index plane = g.ho * g.wo;
  for (Index c = 0; c < g.c; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        Scalar* row = cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
        for (Index n = 0; n < g.n; ++n) {
          const Scalar* xp = x + (n * g.c + c) * g.h * g.w;
          Scalar* rp = row + n * plane;
          for (Index oh = 0; oh < g.ho; ++oh) {
            const Index ih = oh * g.spec.stride - g.spec.pad + ki * g.spec.dilation;
            if (ih < 0 || ih >= g.h) {
              std::fill_n(rp + oh * g.wo, g.wo, Scalar(0));
              continue;
            }
            // Output columns whose input column lands inside the image.
            const Index off = kj * g.spec.dilation - g.spec.pad, st = g.spec.stride;
            const Index lo = std::clamp<Index>(off >= 0 ? 0 : (-off + st - 1) / st, 0, g.wo);
            const Index hi = std::clamp<Index>(g.w - off > 0 ? (g.w - off + st - 1) / st : 0, lo, g.wo);
            Scalar* dst = rp + oh * g.wo;
            const Scalar* src = xp + ih * g.w;
            std::fill(dst, dst + lo, Scalar(0));
            if (st == 1) std::copy(src + lo + off, src + hi + off, dst + lo);
            else
              for (Index ow = lo; ow < hi; ++ow) dst[ow] = src[ow * st + off];
            std::fill(dst + hi, dst + g.wo, Scalar(0));
          }
        }
      }
}

template <typename Scalar>
void col2im(const ConvGeom& g, const Scalar* cols, Scalar* dx) {
  const Index ncols = g.cols();
  const Index plane = g.ho * g.wo;
  for (Index c = 0; c < g.c; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        const Scalar* row = cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
        for (Index n = 0; n < g.n; ++n) {
          Scalar* xp = dx + (n * g.c + c) * g.h * g.w;
          const Scalar* rp = row + n * plane;
          for (Index oh = 0; oh < g.ho; ++oh) {
            const Index ih = oh * g.spec.stride - g.spec.pad + ki * g.spec.dilation;
            if (ih < 0 || ih >= g.h) continue;
            const Index off = kj * g.spec.dilation - g.spec.pad, st = g.spec.stride;
            const Index lo = std::clamp<Index>(off >= 0 ? 0 : (-off + st - 1) / st, 0, g.wo);
            const Index hi = std::clamp<Index>(g.w - off > 0 ? (g.w - off + st - 1) / st : 0, lo, g.wo);
            Scalar* dst = xp + ih * g.w;
            const Scalar* src = rp + oh * g.wo;
            for (Index ow = lo; ow < hi; ++ow) dst[ow * st + off] += src[ow];
          }
        }
      }
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, ConvSpec spec) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require_shape(xs.rank() == 4 && ws.rank() == 4, "conv2d expects NCHW input and OIHW weight");
  require_shape(xs[1] == ws[1], "conv2d channel mismatch: input " + xs.str() + ", weight " + ws.str());
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0, spec};
  g.ho = (g.h + 2 * spec.pad - spec.dilation * (g.kh - 1) - 1) / spec.stride + 1;
  g.wo = (g.w + 2 * spec.pad - spec.dilation * (g.kw - 1) - 1) / spec.stride + 1;
  require_shape(g.ho > 0 && g.wo > 0, "conv2d output would be empty for input " + xs.str());
  const bool has_bias = bias.defined();
  if (has_bias) require_shape(bias.size() == g.o, "conv2d bias size mismatch");

  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> colsr(g.rows(), g.cols());
  im2col(g, x.value().ptr(), colsr.data());
  ConstRowMajorMap<Scalar> W(weight.value().ptr(), g.o, g.rows());
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> res(g.o, g.cols());
  res.noalias() = W * colsr;
  Tensor<Scalar> out(Shape{g.n, g.o, g.ho, g.wo});
  const Index plane = g.ho * g.wo;
  for (Index n = 0; n < g.n; ++n)
    for (Index o = 0; o < g.o; ++o) {
      Eigen::Map<Buffer<Scalar>> dst(out.ptr() + (n * g.o + o) * plane, plane);
      dst = res.row(o).segment(n * plane, plane).transpose().array();
      if (has_bias) dst += bias.value()[o];
    }
  std::vector<Var<Scalar>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result<Scalar>(std::move(out), parents, [g, has_bias](NodeT<Scalar>& self) {
    NodeT<Scalar>* px = parent_if_grad(self, 0);
    NodeT<Scalar>* pw = parent_if_grad(self, 1);
    NodeT<Scalar>* pb = has_bias ? parent_if_grad(self, 2) : nullptr;
    const Index plane = g.ho * g.wo;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> G(g.o, g.cols());
    for (Index n = 0; n < g.n; ++n)
      for (Index o = 0; o < g.o; ++o)
        G.row(o).segment(n * plane, plane) =
            Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(self.grad.ptr() + (n * g.o + o) * plane, plane);
    if (pb) pb->grad_buffer() += G.rowwise().sum().array();
    if (pw) {
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> colsr(g.rows(), g.cols());
      im2col(g, self.parents[0]->value.ptr(), colsr.data());
      RowMajorMap<Scalar> GW(pw->grad_buffer().data(), g.o, g.rows());
      GW.noalias() += G * colsr.transpose();
    }
    if (px) {
      ConstRowMajorMap<Scalar> W(self.parents[1]->value.ptr(), g.o, g.rows());
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dcols(g.rows(), g.cols());
      dcols.noalias() = W.transpose() * G;
      col2im(g, dcols.data(), px->grad_buffer().data());
    }
  });
}

template <typename Scalar>
Var<Scalar> upsample_nearest(const Var<Scalar>& x, int factor) {
  const Shape& s = x.shape();
  require_shape(s.rank() == 4, "upsample expects NCHW");
  const Index h = s[2], w = s[3], f = factor;
  Tensor<Scalar> out(Shape{s[0], s[1], h * f, w * f});
  const Index planes = s[0] * s[1];
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.value().ptr() + p * h * w;
    Scalar* dst = out.ptr() + p * h * w * f * f;
    for (Index i = 0; i < h * f; ++i)
      for (Index j = 0; j < w * f; ++j) dst[i * w * f + j] = src[(i / f) * w + j / f];
  }
  return make_result<Scalar>(std::move(out), {x}, [planes, h, w, f](NodeT<Scalar>& self) {
    NodeT<Scalar>* px = parent_if_grad(self, 0);
    if (!px) return;
    Scalar* gx = px->grad_buffer().data();
    for (Index p = 0; p < planes; ++p) {
      const Scalar* g = self.grad.ptr() + p * h * w * f * f;
      Scalar* dst = gx + p * h * w;
      for (Index i = 0; i < h * f; ++i)
        for (Index j = 0; j < w * f; ++j) dst[(i / f) * w + j / f] += g[i * w * f + j];
    }
  });
}

template <typename Scalar>
Var<Scalar> avg_pool(const Var<Scalar>& x, int k) {
  const Shape& s = x.shape();
  require_shape(s.rank() == 4 && s[2] % k == 0 && s[3] % k == 0,
                "avg_pool: spatial dims of " + s.str() + " not divisible by " + std::to_string(k));
  const Index h = s[2], w = s[3], ho = h / k, wo = w / k;
  const Index planes = s[0] * s[1];
  const Scalar inv = Scalar(1) / static_cast<Scalar>(k * k);
  Tensor<Scalar> out(Shape{s[0], s[1], ho, wo});
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.value().ptr() + p * h * w;
    Scalar* dst = out.ptr() + p * ho * wo;
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) dst[(i / k) * wo + j / k] += src[i * w + j] * inv;
  }
  return make_result<Scalar>(std::move(out), {x}, [planes, h, w, k, wo, inv](NodeT<Scalar>& self) {
    NodeT<Scalar>* px = parent_if_grad(self, 0);
    if (!px) return;
    Scalar* gx = px->grad_buffer().data();
    const Index ho = h / k;
    for (Index p = 0; p < planes; ++p) {
      const Scalar* g = self.grad.ptr() + p * ho * wo;
      Scalar* dst = gx + p * h * w;
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) dst[i * w + j] += g[(i / k) * wo + j / k] * inv;
    }
  });
}

namespace {

struct PatchGeom {
  Index b, c, h, w, p, heads, ch, nh, nw;
  Index n() const { return nh * nw; }
  Index dim() const { return ch * p * p; }
};

// Calls f(image_offset, token_offset) for every element.
template <typename F>
void for_each_patch(const PatchGeom& g, F&& f) {
  for (Index b = 0; b < g.b; ++b)
    for (Index hd = 0; hd < g.heads; ++hd)
      for (Index c = 0; c < g.ch; ++c)
        for (Index y = 0; y < g.h; ++y)
          for (Index x = 0; x < g.w; ++x) {
            const Index img = ((b * g.c + hd * g.ch + c) * g.h + y) * g.w + x;
            const Index token = (y / g.p) * g.nw + (x / g.p);
            const Index feat = (c * g.p + y % g.p) * g.p + x % g.p;
            const Index tok = ((b * g.heads + hd) * g.n() + token) * g.dim() + feat;
            f(img, tok);
          }
}

PatchGeom patch_geom(Index b, Index c, Index h, Index w, int patch, int heads) {
  require_shape(patch > 0 && h % patch == 0 && w % patch == 0,
                "patch size " + std::to_string(patch) + " does not divide spatial dims " + std::to_string(h) + "x" +
                    std::to_string(w));
  require_shape(heads > 0 && c % heads == 0, "heads must divide channels");
  return PatchGeom{b, c, h, w, patch, heads, c / heads, h / patch, w / patch};
}

}  // namespace

template <typename Scalar>
Var<Scalar> patchify(const Var<Scalar>& x, int patch, int heads) {
  const Shape& s = x.shape();
  require_shape(s.rank() == 4, "patchify expects NCHW");
  const PatchGeom g = patch_geom(s[0], s[1], s[2], s[3], patch, heads);
  Tensor<Scalar> out(Shape{g.b * g.heads, g.n(), g.dim()});
  const Scalar* src = x.value().ptr();
  Scalar* dst = out.ptr();
  for_each_patch(g, [&](Index img, Index tok) { dst[tok] = src[img]; });
  return make_result<Scalar>(std::move(out), {x}, [g](NodeT<Scalar>& self) {
    NodeT<Scalar>* px = parent_if_grad(self, 0);
    if (!px) return;
    Scalar* gx = px->grad_buffer().data();
    const Scalar* gt = self.grad.ptr();
    for_each_patch(g, [&](Index img, Index tok) { gx[img] += gt[tok]; });
  });
}

template <typename Scalar>
Var<Scalar> unpatchify(const Var<Scalar>& t, Index batch, Index channels, Index height, Index width, int patch,
                       int heads) {
  const PatchGeom g = patch_geom(batch, channels, height, width, patch, heads);
  require_shape(t.shape() == Shape({g.b * g.heads, g.n(), g.dim()}), "unpatchify shape mismatch " + t.shape().str());
  Tensor<Scalar> out(Shape{batch, channels, height, width});
  const Scalar* src = t.value().ptr();
  Scalar* dst = out.ptr();
  for_each_patch(g, [&](Index img, Index tok) { dst[img] = src[tok]; });
  return make_result<Scalar>(std::move(out), {t}, [g](NodeT<Scalar>& self) {
    NodeT<Scalar>* pt = parent_if_grad(self, 0);
    if (!pt) return;
    Scalar* gt = pt->grad_buffer().data();
    const Scalar* gi = self.grad.ptr();
    for_each_patch(g, [&](Index img, Index tok) { gt[tok] += gi[img]; });
  });
}

namespace {
// Leading dims are all planes; last two are H, W.
std::pair<Index, Shape> plane_count(const Shape& s, Index h, Index w) {
  require_shape(s.rank() >= 2, "resize expects at least rank 2");
  Index planes = 1;
  std::vector<Index> dims = s.dims();
  for (int i = 0; i < s.rank() - 2; ++i) planes *= s[i];
  dims[dims.size() - 2] = h;
  dims[dims.size() - 1] = w;
  return {planes, Shape(dims)};
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index height, Index width) {
  const Index ih = x.dim(x.rank() - 2), iw = x.dim(x.rank() - 1);
  auto [planes, shape] = plane_count(x.shape(), height, width);
  Tensor<Scalar> out(shape);
  const double sy = static_cast<double>(ih) / static_cast<double>(height);
  const double sx = static_cast<double>(iw) / static_cast<double>(width);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.ptr() + p * ih * iw;
    Scalar* dst = out.ptr() + p * height * width;
    for (Index i = 0; i < height; ++i) {
      const double fy = std::clamp((static_cast<double>(i) + 0.5) * sy - 0.5, 0.0, static_cast<double>(ih - 1));
      const Index y0 = static_cast<Index>(fy);
      const Index y1 = std::min(y0 + 1, ih - 1);
      const double wy = fy - static_cast<double>(y0);
      for (Index j = 0; j < width; ++j) {
        const double fx = std::clamp((static_cast<double>(j) + 0.5) * sx - 0.5, 0.0, static_cast<double>(iw - 1));
        const Index x0 = static_cast<Index>(fx);
        const Index x1 = std::min(x0 + 1, iw - 1);
        const double wx = fx - static_cast<double>(x0);
        const double v = (1 - wy) * ((1 - wx) * src[y0 * iw + x0] + wx * src[y0 * iw + x1]) +
                         wy * ((1 - wx) * src[y1 * iw + x0] + wx * src[y1 * iw + x1]);
        dst[i * width + j] = static_cast<Scalar>(v);
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> resize_nearest(const Tensor<Scalar>& x, Index height, Index width) {
  const Index ih = x.dim(x.rank() - 2), iw = x.dim(x.rank() - 1);
  auto [planes, shape] = plane_count(x.shape(), height, width);
  Tensor<Scalar> out(shape);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.ptr() + p * ih * iw;
    Scalar* dst = out.ptr() + p * height * width;
    for (Index i = 0; i < height; ++i) {
      const Index y = std::min(ih - 1, (i * ih) / height);
      for (Index j = 0; j < width; ++j) dst[i * width + j] = src[y * iw + std::min(iw - 1, (j * iw) / width)];
    }
  }
  return out;
}

#define MMIF_INSTANTIATE_OPS(S)                                                                            \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                      \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                                      \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                                      \
  template Var<S> div(const Var<S>&, const Var<S>&);                                                      \
  template Var<S> add_scalar(const Var<S>&, S);                                                           \
  template Var<S> scale(const Var<S>&, S);                                                                \
  template Var<S> neg(const Var<S>&);                                                                     \
  template Var<S> sigmoid(const Var<S>&);                                                                 \
  template Var<S> tanh(const Var<S>&);                                                                    \
  template Var<S> elu(const Var<S>&);                                                                     \
  template Var<S> relu(const Var<S>&);                                                                    \
  template Var<S> leaky_relu(const Var<S>&, S);                                                           \
  template Var<S> exp(const Var<S>&);                                                                     \
  template Var<S> log(const Var<S>&);                                                                     \
  template Var<S> sqrt(const Var<S>&);                                                                    \
  template Var<S> row_norm(const Var<S>&);                                                                    \
  template Var<S> square(const Var<S>&);                                                                  \
  template Var<S> abs(const Var<S>&);                                                                     \
  template Var<S> pow(const Var<S>&, S);                                                                  \
  template Var<S> clamp(const Var<S>&, S, S);                                                             \
  template Var<S> sum(const Var<S>&);                                                                     \
  template Var<S> mean(const Var<S>&);                                                                    \
  template Var<S> sum_axis(const Var<S>&, int);                                                           \
  template Var<S> mean_axis(const Var<S>&, int);                                                          \
  template Var<S> max_axis(const Var<S>&, int);                                                           \
  template Var<S> softmax(const Var<S>&, int);                                                            \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                                   \
  template Var<S> transpose(const Var<S>&);                                                               \
  template Var<S> reshape(const Var<S>&, Shape);                                                          \
  template Var<S> concat(const std::vector<Var<S>>&, int);                                                \
  template Var<S> slice(const Var<S>&, int, Index, Index);                                                \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, ConvSpec);                          \
  template Var<S> upsample_nearest(const Var<S>&, int);                                                   \
  template Var<S> avg_pool(const Var<S>&, int);                                                           \
  template Var<S> patchify(const Var<S>&, int, int);                                                      \
  template Var<S> unpatchify(const Var<S>&, Index, Index, Index, Index, int, int);                        \
  template Tensor<S> resize_bilinear(const Tensor<S>&, Index, Index);                                     \
  template Tensor<S> resize_nearest(const Tensor<S>&, Index, Index);

MMIF_INSTANTIATE_OPS(float)
MMIF_INSTANTIATE_OPS(double)
template Tensor<std::int32_t> resize_nearest(const Tensor<std::int32_t>&, Index, Index);

}  // namespace mmif
