#pragma once

#include <algorithm>
#include <atomic>
#include <complex>
#include <numeric>

#include <Eigen/Core>

#include "gelp/ad/tensor.hpp"
#include "gelp/dsp/fft.hpp"

// Differentiable primitives. Every backward is written with these same ops,
// so gradients can be differentiated again (needed by the gradient penalty).
namespace gelp::ad {

namespace detail {

template <class T>
using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
template <class T>
using CVecMap = Eigen::Map<const Vec<T>>;
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;

template <class T>
CVecMap<T> arr(const Tensor<T>& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.size())};
}

template <class T, class Expr>
std::vector<T> eval(const Expr& expr) {
  std::vector<T> out(static_cast<std::size_t>(expr.size()));
  Eigen::Map<Vec<T>>(out.data(), expr.size()) = expr;
  return out;
}

/// Applies a vectorized elementwise function in aligned fixed-size blocks,
/// padding the tail, so each element goes through the same code path no
/// matter where the buffer lives (Eigen's fast transcendental kernels and
/// the scalar fallback round differently).
template <class T, class F>
std::vector<T> eval_blocked(const Tensor<T>& x, F f) {
  constexpr Eigen::Index kBlock = 64;
  using Block = Eigen::Array<T, kBlock, 1>;
  const std::size_t n = x.size();
  std::vector<T> out(n);
  Block in, res;
  for (std::size_t i = 0; i < n; i += kBlock) {
    const std::size_t m = std::min<std::size_t>(kBlock, n - i);
    in.setZero();
    std::copy_n(x.raw() + i, m, in.data());
    res = f(in);
    std::copy_n(res.data(), m, out.data() + i);
  }
  return out;
}

/// Eigen vectorizes tanh only for float; for double, tanh|x| = (1 - e) / (1 + e)
/// with e = exp(-2|x|) is an order of magnitude faster and accurate to a few ulp
/// in absolute terms.
template <class Block>
auto tanh_block(const Block& b) {
  using S = typename Block::Scalar;
  if constexpr (std::is_same_v<S, double>) {
    const Block e = (S(-2) * b.abs()).exp();
    return Block(b.sign() * (S(1) - e) / (S(1) + e));
  } else {
    return Block(b.tanh());
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidArgument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                          to_string(b.shape()));
}

inline bool broadcastable(const Shape& from, const Shape& to) {
  for (std::size_t i = 0; i < 3; ++i)
    if (from[i] != to[i] && from[i] != 1) return false;
  return true;
}

template <class T>
using Grads = std::vector<std::optional<Tensor<T>>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape plumbing

template <class T>
Tensor<T> sum_to(const Tensor<T>& x, Shape shape);

/// Repeats `x` along every axis where it has extent 1.
template <class T>
Tensor<T> broadcast_to(const Tensor<T>& x, Shape shape) {
  if (x.shape() == shape) return x;
  if (!detail::broadcastable(x.shape(), shape))
    throw InvalidArgument("cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  const Shape& s = x.shape();
  std::vector<T> out(numel(shape));
  std::size_t i = 0;
  for (std::size_t b = 0; b < shape[0]; ++b)
    for (std::size_t t = 0; t < shape[1]; ++t) {
      const T* src = x.raw() + ((s[0] == 1 ? 0 : b) * s[1] + (s[1] == 1 ? 0 : t)) * s[2];
      for (std::size_t c = 0; c < shape[2]; ++c) out[i++] = src[s[2] == 1 ? 0 : c];
    }
  const Shape from = x.shape();
  return make_op_result<T>(
      shape, std::move(out), {x},
      [from](const auto&, const auto&, const Tensor<T>& g) { return detail::Grads<T>{sum_to(g, from)}; },
      "broadcast_to");
}

/// Sums `x` over every axis where `shape` has extent 1. Adjoint of broadcast_to.
template <class T>
Tensor<T> sum_to(const Tensor<T>& x, Shape shape) {
  if (x.shape() == shape) return x;
  if (!detail::broadcastable(shape, x.shape()))
    throw InvalidArgument("cannot reduce " + to_string(x.shape()) + " to " + to_string(shape));
  const Shape& s = x.shape();
  std::vector<T> out(numel(shape), T(0));
  std::size_t i = 0;
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t t = 0; t < s[1]; ++t) {
      T* dst = out.data() + ((shape[0] == 1 ? 0 : b) * shape[1] + (shape[1] == 1 ? 0 : t)) * shape[2];
      for (std::size_t c = 0; c < s[2]; ++c) dst[shape[2] == 1 ? 0 : c] += x[i++];
    }
  const Shape from = x.shape();
  return make_op_result<T>(
      shape, std::move(out), {x},
      [from](const auto&, const auto&, const Tensor<T>& g) { return detail::Grads<T>{broadcast_to(g, from)}; },
      "sum_to");
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  return sum_to(x, Shape{1, 1, 1});
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw InvalidArgument("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  if (shape == x.shape()) return x;
  const Shape from = x.shape();
  return make_op_result<T>(
      shape, std::vector<T>(x.data().begin(), x.data().end()), {x},
      [from](const auto&, const auto&, const Tensor<T>& g) { return detail::Grads<T>{reshape(g, from)}; },
      "reshape");
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return make_op_result<T>(
      x.shape(), detail::eval<T>(detail::arr(x) * factor), {x},
      [factor](const auto&, const auto&, const Tensor<T>& g) { return detail::Grads<T>{scale(g, factor)}; },
      "scale");
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return make_op_result<T>(
      x.shape(), detail::eval<T>(detail::arr(x) + value), {x},
      [](const auto&, const auto&, const Tensor<T>& g) { return detail::Grads<T>{g}; }, "add_scalar");
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  return make_op_result<T>(
      a.shape(), detail::eval<T>(detail::arr(a) + detail::arr(b)), {a, b},
      [](const auto&, const auto&, const Tensor<T>& g) { return detail::Grads<T>{g, g}; }, "add");
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  return make_op_result<T>(
      a.shape(), detail::eval<T>(detail::arr(a) - detail::arr(b)), {a, b},
      [](const auto&, const auto&, const Tensor<T>& g) { return detail::Grads<T>{g, neg(g)}; }, "sub");
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  return make_op_result<T>(
      a.shape(), detail::eval<T>(detail::arr(a) * detail::arr(b)), {a, b},
      [](const auto& in, const auto&, const Tensor<T>& g) {
        detail::Grads<T> out(2);
        if (in[0].requires_grad()) out[0] = mul(g, in[1]);
        if (in[1].requires_grad()) out[1] = mul(g, in[0]);
        return out;
      },
      "mul");
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  return make_op_result<T>(
      a.shape(), detail::eval<T>(detail::arr(a) / detail::arr(b)), {a, b},
      [](const auto& in, const Tensor<T>& out, const Tensor<T>& g) {
        detail::Grads<T> r(2);
        const auto gb = div(g, in[1]);
        if (in[0].requires_grad()) r[0] = gb;
        if (in[1].requires_grad()) r[1] = neg(mul(gb, out));
        return r;
      },
      "div");
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return mul(x, x);
}

/// x + y with y broadcast to x's shape.
template <class T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() == y.shape()) return add(x, y);
  if (!detail::broadcastable(y.shape(), x.shape()))
    throw InvalidArgument("add_broadcast: cannot broadcast " + to_string(y.shape()) + " to " + to_string(x.shape()));
  const Shape& s = x.shape();
  const Shape& ys = y.shape();
  std::vector<T> out(x.data().begin(), x.data().end());
  std::size_t i = 0;
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t t = 0; t < s[1]; ++t) {
      const T* src = y.raw() + ((ys[0] == 1 ? 0 : b) * ys[1] + (ys[1] == 1 ? 0 : t)) * ys[2];
      if (ys[2] == 1) {
        for (std::size_t c = 0; c < s[2]; ++c) out[i++] += src[0];
      } else {
        for (std::size_t c = 0; c < s[2]; ++c) out[i++] += src[c];
      }
    }
  const Shape yshape = y.shape();
  return make_op_result<T>(
      s, std::move(out), {x, y},
      [yshape](const auto& in, const auto&, const Tensor<T>& g) {
        detail::Grads<T> r(2);
        if (in[0].requires_grad()) r[0] = g;
        if (in[1].requires_grad()) r[1] = sum_to(g, yshape);
        return r;
      },
      "add_broadcast");
}

/// x * y with y broadcast to x's shape.
template <class T>
Tensor<T> mul_broadcast(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() == y.shape()) return mul(x, y);
  const auto yb = [&] {
    NoGrad guard;
    return broadcast_to(y.detach(), x.shape());
  }();
  const Shape yshape = y.shape();
  return make_op_result<T>(
      x.shape(), detail::eval<T>(detail::arr(x) * detail::arr(yb)), {x, y},
      [yshape](const auto& in, const auto&, const Tensor<T>& g) {
        detail::Grads<T> r(2);
        if (in[0].requires_grad()) r[0] = mul_broadcast(g, in[1]);
        if (in[1].requires_grad()) r[1] = sum_to(mul_broadcast(in[0], g), yshape);
        return r;
      },
      "mul_broadcast");
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return make_op_result<T>(
      x.shape(), detail::eval_blocked(x, [](const auto& b) { return detail::tanh_block(b); }), {x},
      [](const auto&, const Tensor<T>& y, const Tensor<T>& g) {
        auto d = mul(g, add_scalar(neg(square(y)), T(1)));
        if (testing::corrupt_backward()) d = scale(d, T(1.01));
        return detail::Grads<T>{d};
      },
      "tanh");
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return make_op_result<T>(
      x.shape(), detail::eval_blocked(x, [](const auto& b) { return T(1) / (T(1) + (-b).exp()); }), {x},
      [](const auto&, const Tensor<T>& y, const Tensor<T>& g) {
        return detail::Grads<T>{mul(g, mul(y, add_scalar(neg(y), T(1))))};
      },
      "sigmoid");
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return make_op_result<T>(
      x.shape(), detail::eval_blocked(x, [](const auto& b) { return b.sqrt(); }), {x},
      [](const auto&, const Tensor<T>& y, const Tensor<T>& g) {
        return detail::Grads<T>{div(scale(g, T(0.5)), y)};
      },
      "sqrt");
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// ---------------------------------------------------------------------------
// Channel (last axis) and time (middle axis) slicing

template <class T>
Tensor<T> pad_channels(const Tensor<T>& x, std::size_t start, std::size_t total);

/// x[:, :, start:start+len].
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t start, std::size_t len) {
  const Shape s = x.shape();
  require(start + len <= s[2], "slice_channels out of range");
  if (start == 0 && len == s[2]) return x;
  std::vector<T> out(s[0] * s[1] * len);
  for (std::size_t r = 0; r < s[0] * s[1]; ++r)
    std::copy_n(x.raw() + r * s[2] + start, len, out.data() + r * len);
  return make_op_result<T>(
      {s[0], s[1], len}, std::move(out), {x},
      [start, total = s[2]](const auto&, const auto&, const Tensor<T>& g) {
        return detail::Grads<T>{pad_channels(g, start, total)};
      },
      "slice_channels");
}

/// Embeds x at channel offset `start` of a zero tensor with `total` channels.
template <class T>
Tensor<T> pad_channels(const Tensor<T>& x, std::size_t start, std::size_t total) {
  const Shape s = x.shape();
  require(start + s[2] <= total, "pad_channels out of range");
  if (start == 0 && total == s[2]) return x;
  std::vector<T> out(s[0] * s[1] * total, T(0));
  for (std::size_t r = 0; r < s[0] * s[1]; ++r)
    std::copy_n(x.raw() + r * s[2], s[2], out.data() + r * total + start);
  return make_op_result<T>(
      {s[0], s[1], total}, std::move(out), {x},
      [start, len = s[2]](const auto&, const auto&, const Tensor<T>& g) {
        return detail::Grads<T>{slice_channels(g, start, len)};
      },
      "pad_channels");
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  require(!xs.empty(), "concat_channels of an empty list");
  const std::size_t rows = xs[0].dim(0) * xs[0].dim(1);
  std::size_t total = 0;
  for (const auto& x : xs) {
    require(x.dim(0) == xs[0].dim(0) && x.dim(1) == xs[0].dim(1), "concat_channels: batch/time mismatch");
    total += x.dim(2);
  }
  std::vector<T> out(rows * total);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& x : xs) {
    offsets.push_back(offset);
    const std::size_t c = x.dim(2);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.raw() + r * c, c, out.data() + r * total + offset);
    offset += c;
  }
  return make_op_result<T>(
      {xs[0].dim(0), xs[0].dim(1), total}, std::move(out), xs,
      [offsets](const auto& in, const auto&, const Tensor<T>& g) {
        detail::Grads<T> r(in.size());
        for (std::size_t i = 0; i < in.size(); ++i)
          if (in[i].requires_grad()) r[i] = slice_channels(g, offsets[i], in[i].dim(2));
        return r;
      },
      "concat_channels");
}

template <class T>
Tensor<T> pad_time(const Tensor<T>& x, std::size_t start, std::size_t total);

/// x[:, start:start+len, :].
template <class T>
Tensor<T> slice_time(const Tensor<T>& x, std::size_t start, std::size_t len) {
  const Shape s = x.shape();
  require(start + len <= s[1], "slice_time out of range");
  if (start == 0 && len == s[1]) return x;
  std::vector<T> out(s[0] * len * s[2]);
  for (std::size_t b = 0; b < s[0]; ++b)
    std::copy_n(x.raw() + (b * s[1] + start) * s[2], len * s[2], out.data() + b * len * s[2]);
  return make_op_result<T>(
      {s[0], len, s[2]}, std::move(out), {x},
      [start, total = s[1]](const auto&, const auto&, const Tensor<T>& g) {
        return detail::Grads<T>{pad_time(g, start, total)};
      },
      "slice_time");
}

template <class T>
Tensor<T> pad_time(const Tensor<T>& x, std::size_t start, std::size_t total) {
  const Shape s = x.shape();
  require(start + s[1] <= total, "pad_time out of range");
  if (start == 0 && total == s[1]) return x;
  std::vector<T> out(s[0] * total * s[2], T(0));
  for (std::size_t b = 0; b < s[0]; ++b)
    std::copy_n(x.raw() + b * s[1] * s[2], s[1] * s[2], out.data() + (b * total + start) * s[2]);
  return make_op_result<T>(
      {s[0], total, s[2]}, std::move(out), {x},
      [start, len = s[1]](const auto&, const auto&, const Tensor<T>& g) {
        return detail::Grads<T>{slice_time(g, start, len)};
      },
      "pad_time");
}

/// Centre crop along time.
template <class T>
Tensor<T> crop_time_center(const Tensor<T>& x, std::size_t len) {
  require(len <= x.dim(1), "cannot centre-crop to a longer length");
  return slice_time(x, (x.dim(1) - len) / 2, len);
}

// ---------------------------------------------------------------------------
// Dilated 1-D convolution family

enum class Padding { same, valid };

/// Cross-correlation geometry: y[t] = sum_j w[j] x[t + j * dilation - pad].
struct ConvGeometry {
  std::size_t width = 1;
  std::size_t dilation = 1;
  std::ptrdiff_t pad = 0;
  std::size_t in_len = 0;
  std::size_t out_len = 0;

  static ConvGeometry make(std::size_t width, std::size_t dilation, Padding padding, std::size_t in_len) {
    require(width % 2 == 1, "convolution width must be odd");
    require(dilation >= 1, "dilation must be >= 1");
    const std::size_t span = (width - 1) * dilation;
    ConvGeometry g{width, dilation, 0, in_len, in_len};
    if (padding == Padding::same) {
      g.pad = static_cast<std::ptrdiff_t>(span / 2);
    } else {
      if (in_len <= span)
        throw InvalidArgument("valid convolution of width " + std::to_string(width) + " and dilation " +
                              std::to_string(dilation) + " needs more than " + std::to_string(span) + " steps");
      g.out_len = in_len - span;
    }
    return g;
  }

  std::ptrdiff_t offset(std::size_t tap) const {
    return static_cast<std::ptrdiff_t>(tap * dilation) - pad;
  }
  /// Output range [first, last) whose tap `tap` reads inside the input.
  std::pair<std::size_t, std::size_t> valid_range(std::size_t tap) const {
    const std::ptrdiff_t o = offset(tap);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -o);
    const std::ptrdiff_t hi =
        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_len), static_cast<std::ptrdiff_t>(in_len) - o);
    if (hi <= lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  }
};

template <class T>
Tensor<T> conv_raw(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& geo);
template <class T>
Tensor<T> conv_transpose_raw(const Tensor<T>& g, const Tensor<T>& w, const ConvGeometry& geo);
template <class T>
Tensor<T> conv_weight_grad_raw(const Tensor<T>& x, const Tensor<T>& g, const ConvGeometry& geo);

/// x (B, in_len, Cin) * w (width, Cin, Cout) -> (B, out_len, Cout).
template <class T>
Tensor<T> conv_raw(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& geo) {
  const std::size_t batch = x.dim(0), cin = w.dim(1), cout = w.dim(2);
  require(x.dim(1) == geo.in_len && x.dim(2) == cin && w.dim(0) == geo.width,
          "conv1d: input " + to_string(x.shape()) + " incompatible with kernel " + to_string(w.shape()));
  std::vector<T> out(batch * geo.out_len * cout, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    detail::CMatMap<T> xb(x.raw() + b * geo.in_len * cin, geo.in_len, cin);
    detail::MatMap<T> yb(out.data() + b * geo.out_len * cout, geo.out_len, cout);
    for (std::size_t j = 0; j < geo.width; ++j) {
      const auto [lo, hi] = geo.valid_range(j);
      if (hi == lo) continue;
      detail::CMatMap<T> wj(w.raw() + j * cin * cout, cin, cout);
      const auto n = static_cast<Eigen::Index>(hi - lo);
      yb.middleRows(lo, n).noalias() += xb.middleRows(static_cast<Eigen::Index>(lo) + geo.offset(j), n) * wj;
    }
  }
  return make_op_result<T>(
      {batch, geo.out_len, cout}, std::move(out), {x, w},
      [geo](const auto& in, const auto&, const Tensor<T>& g) {
        detail::Grads<T> r(2);
        if (in[0].requires_grad()) r[0] = conv_transpose_raw(g, in[1], geo);
        if (in[1].requires_grad()) r[1] = conv_weight_grad_raw(in[0], g, geo);
        return r;
      },
      "conv1d");
}

/// Adjoint of conv_raw in x: g (B, out_len, Cout) -> (B, in_len, Cin).
template <class T>
Tensor<T> conv_transpose_raw(const Tensor<T>& g, const Tensor<T>& w, const ConvGeometry& geo) {
  const std::size_t batch = g.dim(0), cin = w.dim(1), cout = w.dim(2);
  require(g.dim(1) == geo.out_len && g.dim(2) == cout && w.dim(0) == geo.width, "conv_transpose: shape mismatch");
  std::vector<T> out(batch * geo.in_len * cin, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    detail::CMatMap<T> gb(g.raw() + b * geo.out_len * cout, geo.out_len, cout);
    detail::MatMap<T> zb(out.data() + b * geo.in_len * cin, geo.in_len, cin);
    for (std::size_t j = 0; j < geo.width; ++j) {
      const auto [lo, hi] = geo.valid_range(j);
      if (hi == lo) continue;
      detail::CMatMap<T> wj(w.raw() + j * cin * cout, cin, cout);
      const auto n = static_cast<Eigen::Index>(hi - lo);
      zb.middleRows(static_cast<Eigen::Index>(lo) + geo.offset(j), n).noalias() +=
          gb.middleRows(static_cast<Eigen::Index>(lo), n) * wj.transpose();
    }
  }
  return make_op_result<T>(
      {batch, geo.in_len, cin}, std::move(out), {g, w},
      [geo](const auto& in, const auto&, const Tensor<T>& gz) {
        detail::Grads<T> r(2);
        if (in[0].requires_grad()) r[0] = conv_raw(gz, in[1], geo);
        if (in[1].requires_grad()) r[1] = conv_weight_grad_raw(gz, in[0], geo);
        return r;
      },
      "conv_transpose");
}

/// Adjoint of conv_raw in w: sum over batch and time of x-window (outer) g.
template <class T>
Tensor<T> conv_weight_grad_raw(const Tensor<T>& x, const Tensor<T>& g, const ConvGeometry& geo) {
  const std::size_t batch = x.dim(0), cin = x.dim(2), cout = g.dim(2);
  require(x.dim(1) == geo.in_len && g.dim(1) == geo.out_len && g.dim(0) == batch,
          "conv_weight_grad: shape mismatch");
  std::vector<T> out(geo.width * cin * cout, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    detail::CMatMap<T> xb(x.raw() + b * geo.in_len * cin, geo.in_len, cin);
    detail::CMatMap<T> gb(g.raw() + b * geo.out_len * cout, geo.out_len, cout);
    for (std::size_t j = 0; j < geo.width; ++j) {
      const auto [lo, hi] = geo.valid_range(j);
      if (hi == lo) continue;
      detail::MatMap<T> wj(out.data() + j * cin * cout, cin, cout);
      const auto n = static_cast<Eigen::Index>(hi - lo);
      wj.noalias() += xb.middleRows(static_cast<Eigen::Index>(lo) + geo.offset(j), n).transpose() *
                      gb.middleRows(static_cast<Eigen::Index>(lo), n);
    }
  }
  return make_op_result<T>(
      {geo.width, cin, cout}, std::move(out), {x, g},
      [geo](const auto& in, const auto&, const Tensor<T>& gw) {
        detail::Grads<T> r(2);
        if (in[0].requires_grad()) r[0] = conv_transpose_raw(in[1], gw, geo);
        if (in[1].requires_grad()) r[1] = conv_raw(in[0], gw, geo);
        return r;
      },
      "conv_weight_grad");
}

/// Dilated cross-correlation: out[t] = sum_j w[j] x[t + (j - (width-1)/2) d]
/// for same padding (zeros outside), or out[t] = sum_j w[j] x[t + j d] for valid.
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, std::size_t dilation, Padding padding) {
  require(w.dim(1) == x.dim(2), "conv1d: kernel expects " + std::to_string(w.dim(1)) + " input channels, got " +
                                    std::to_string(x.dim(2)));
  return conv_raw(x, w, ConvGeometry::make(w.dim(0), dilation, padding, x.dim(1)));
}

template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t dilation,
                 Padding padding) {
  return add_broadcast(conv1d(x, w, dilation, padding), bias);
}

// ---------------------------------------------------------------------------
// Sparse linear maps along time

/// Sparse matrix in compressed-row form acting on the flattened (batch, time)
/// rows of a tensor; channels are carried along unchanged.
template <class T>
struct SparseRows {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> index;
  std::vector<T> weight;

  void add(std::size_t col, T w) {
    index.push_back(col);
    weight.push_back(w);
  }
  void end_row() {
    offsets.push_back(index.size());
    ++rows;
  }

  SparseRows transpose() const {
    SparseRows t;
    t.rows = cols;
    t.cols = rows;
    std::vector<std::size_t> count(cols + 1, 0);
    for (auto c : index) ++count[c + 1];
    std::partial_sum(count.begin(), count.end(), count.begin());
    t.offsets = count;
    t.index.resize(index.size());
    t.weight.resize(weight.size());
    std::vector<std::size_t> fill(count.begin(), count.end() - 1);
    for (std::size_t r = 0; r < rows; ++r)
      for (auto e = offsets[r]; e < offsets[r + 1]; ++e) {
        const auto pos = fill[index[e]]++;
        t.index[pos] = r;
        t.weight[pos] = weight[e];
      }
    return t;
  }
};

/// A linear operator from (in_batch, in_time, C) to (out_batch, out_time, C)
/// together with its transpose.
template <class T>
struct LinearMap {
  std::array<std::size_t, 2> in{};
  std::array<std::size_t, 2> out{};
  std::shared_ptr<const SparseRows<T>> forward;
  std::shared_ptr<const SparseRows<T>> adjoint;

  static LinearMap make(std::array<std::size_t, 2> in_bt, std::array<std::size_t, 2> out_bt, SparseRows<T> rows) {
    require(rows.rows == out_bt[0] * out_bt[1], "linear map row count mismatch");
    rows.cols = in_bt[0] * in_bt[1];
    for (auto c : rows.index) require(c < rows.cols, "linear map column out of range");
    LinearMap m{in_bt, out_bt, nullptr, nullptr};
    auto fwd = std::make_shared<const SparseRows<T>>(std::move(rows));
    m.adjoint = std::make_shared<const SparseRows<T>>(fwd->transpose());
    m.forward = std::move(fwd);
    return m;
  }

  LinearMap transposed() const { return {out, in, adjoint, forward}; }
};

template <class T>
Tensor<T> linear_map(const Tensor<T>& x, const LinearMap<T>& map) {
  require(x.dim(0) == map.in[0] && x.dim(1) == map.in[1],
          "linear_map expects input batch/time (" + std::to_string(map.in[0]) + ", " + std::to_string(map.in[1]) +
              "), got " + to_string(x.shape()));
  const std::size_t c = x.dim(2);
  const auto& m = *map.forward;
  std::vector<T> out(m.rows * c, T(0));
  for (std::size_t r = 0; r < m.rows; ++r) {
    T* dst = out.data() + r * c;
    for (auto e = m.offsets[r]; e < m.offsets[r + 1]; ++e) {
      const T* src = x.raw() + m.index[e] * c;
      const T w = m.weight[e];
      for (std::size_t k = 0; k < c; ++k) dst[k] += w * src[k];
    }
  }
  return make_op_result<T>(
      {map.out[0], map.out[1], c}, std::move(out), {x},
      [map](const auto&, const auto&, const Tensor<T>& g) {
        return detail::Grads<T>{linear_map(g, map.transposed())};
      },
      "linear_map");
}

// ---------------------------------------------------------------------------
// Real DFT along the last axis; spectra are stored as interleaved (re, im)

template <class T>
Tensor<T> rdft_transpose(const Tensor<T>& y, std::size_t fft_length, std::size_t out_len);

/// (B, K, L) with L <= fft_length, zero-padded -> (B, K, 2 * (fft_length/2 + 1)).
template <class T>
Tensor<T> rdft(const Tensor<T>& x, std::size_t fft_length) {
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2), bins = fft_length / 2 + 1;
  require(len <= fft_length, "rdft input longer than the FFT");
  dsp::RealFft<T> fft(fft_length);
  std::vector<T> out(rows * 2 * bins);
  for (std::size_t r = 0; r < rows; ++r)
    fft.forward({x.raw() + r * len, len}, {reinterpret_cast<std::complex<T>*>(out.data() + r * 2 * bins), bins});
  return make_op_result<T>(
      {x.dim(0), x.dim(1), 2 * bins}, std::move(out), {x},
      [fft_length, len](const auto&, const auto&, const Tensor<T>& g) {
        return detail::Grads<T>{rdft_transpose(g, fft_length, len)};
      },
      "rdft");
}

/// Transpose of rdft: out[n] = sum_k (re_k cos(2 pi k n / N) - im_k sin(2 pi k n / N)),
/// keeping the first out_len samples.
template <class T>
Tensor<T> rdft_transpose(const Tensor<T>& y, std::size_t fft_length, std::size_t out_len) {
  const std::size_t rows = y.dim(0) * y.dim(1), bins = fft_length / 2 + 1;
  require(y.dim(2) == 2 * bins, "rdft_transpose: spectrum width mismatch");
  require(out_len <= fft_length, "rdft_transpose output longer than the FFT");
  dsp::RealFft<T> fft(fft_length);
  std::vector<T> out(rows * out_len);
  for (std::size_t r = 0; r < rows; ++r)
    fft.forward_transpose({reinterpret_cast<const std::complex<T>*>(y.raw() + r * 2 * bins), bins},
                          {out.data() + r * out_len, out_len});
  return make_op_result<T>(
      {y.dim(0), y.dim(1), out_len}, std::move(out), {y},
      [fft_length](const auto&, const auto&, const Tensor<T>& g) {
        return detail::Grads<T>{rdft(g, fft_length)};
      },
      "rdft_transpose");
}

/// Multiplies interleaved complex spectra by a constant complex response h
/// of shape (1 or B, K, 2 * bins).
template <class T>
Tensor<T> cmul_const(const Tensor<T>& x, const Tensor<T>& h) {
  require(!h.requires_grad(), "cmul_const: the response must be a constant");
  require(h.dim(1) == x.dim(1) && h.dim(2) == x.dim(2) && (h.dim(0) == 1 || h.dim(0) == x.dim(0)),
          "cmul_const: response " + to_string(h.shape()) + " does not match spectrum " + to_string(x.shape()));
  const std::size_t per_batch = x.dim(1) * x.dim(2);
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    const T* hp = h.raw() + (h.dim(0) == 1 ? 0 : b * per_batch);
    const T* xp = x.raw() + b * per_batch;
    T* op = out.data() + b * per_batch;
    for (std::size_t i = 0; i < per_batch; i += 2) {
      op[i] = xp[i] * hp[i] - xp[i + 1] * hp[i + 1];
      op[i + 1] = xp[i] * hp[i + 1] + xp[i + 1] * hp[i];
    }
  }
  return make_op_result<T>(
      x.shape(), std::move(out), {x},
      [h](const auto&, const auto&, const Tensor<T>& g) {
        std::vector<T> conj(h.data().begin(), h.data().end());
        for (std::size_t i = 1; i < conj.size(); i += 2) conj[i] = -conj[i];
        return detail::Grads<T>{cmul_const(g, Tensor<T>(h.shape(), std::move(conj)))};
      },
      "cmul_const");
}

}  // namespace gelp::ad
