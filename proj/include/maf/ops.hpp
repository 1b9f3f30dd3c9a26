#pragma once

// Forward and backward kernels for the operator set used by the network.
// Everything here is a pure function of its arguments; autograd.hpp wraps
// these into recorded graph nodes.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "maf/tensor.hpp"

namespace maf {

struct ConvSpec {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 1;
  Index stride = 1;
  Index padding = -1;  // negative selects kernel / 2
  Index groups = 1;
  bool has_bias = false;

  Index pad() const noexcept { return padding < 0 ? kernel / 2 : padding; }
  bool depthwise() const noexcept {
    return groups == in_channels && groups == out_channels && groups > 0;
  }
  Index out_extent(Index in) const noexcept { return (in + 2 * pad() - kernel) / stride + 1; }
  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel, kernel}; }
  Shape output_shape(const Shape& in) const {
    return {in.n, out_channels, out_extent(in.h), out_extent(in.w)};
  }
  Index weight_count() const { return weight_shape().numel(); }

  void validate() const {
    if (in_channels <= 0 || out_channels <= 0) {
      throw ConfigError("conv: channel counts must be positive");
    }
    if (kernel <= 0 || kernel % 2 == 0) {
      throw ConfigError("conv: kernel must be odd and positive, got " + std::to_string(kernel));
    }
    if (stride != 1 && stride != 2) {
      throw ConfigError("conv: stride must be 1 or 2, got " + std::to_string(stride));
    }
    if (groups <= 0 || in_channels % groups != 0 || out_channels % groups != 0) {
      throw ConfigError("conv: groups " + std::to_string(groups) + " must divide in_channels " +
                        std::to_string(in_channels) + " and out_channels " +
                        std::to_string(out_channels));
    }
  }
};

/// Number of conv2d forward evaluations on this thread since the last reset.
Index conv_call_count() noexcept;
void reset_conv_call_count() noexcept;
void note_conv_call() noexcept;

namespace detail {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapMat = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstMapMat = Eigen::Map<const RowMat<Scalar>>;

// Output columns [lo, hi) whose input column ow*stride - pad + kw is in range.
inline void valid_range(Index in, Index out, Index stride, Index pad, Index kk, Index& lo,
                        Index& hi) {
  const Index off = kk - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const Index last = in - 1 - off;
  hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  if (hi < lo) hi = lo;
}

template <typename Scalar>
void check_conv_args(const Shape& x, const Shape& w, const ConvSpec& spec) {
  spec.validate();
  if (x.c != spec.in_channels) throw ShapeError("conv2d", "input channels", spec.in_channels, x.c);
  const Shape ws = spec.weight_shape();
  if (w.n != ws.n) throw ShapeError("conv2d", "weight out_channels", ws.n, w.n);
  if (w.c != ws.c) throw ShapeError("conv2d", "weight in_channels/groups", ws.c, w.c);
  if (w.h != ws.h) throw ShapeError("conv2d", "weight kernel height", ws.h, w.h);
  if (w.w != ws.w) throw ShapeError("conv2d", "weight kernel width", ws.w, w.w);
  if (spec.out_extent(x.h) <= 0) throw ShapeError("conv2d", "input height too small");
  if (spec.out_extent(x.w) <= 0) throw ShapeError("conv2d", "input width too small");
}

template <typename Scalar>
void im2col(const Scalar* x, Index channels, Index h, Index w, const ConvSpec& spec, Index ho,
            Index wo, Scalar* col) {
  const Index k = spec.kernel, s = spec.stride, p = spec.pad();
  for (Index c = 0; c < channels; ++c) {
    const Scalar* xp = x + c * h * w;
    for (Index kh = 0; kh < k; ++kh) {
      for (Index kw = 0; kw < k; ++kw) {
        Scalar* row = col + ((c * k + kh) * k + kw) * ho * wo;
        Index lo, hi;
        valid_range(w, wo, s, p, kw, lo, hi);
        for (Index oh = 0; oh < ho; ++oh) {
          Scalar* out = row + oh * wo;
          const Index ih = oh * s - p + kh;
          if (ih < 0 || ih >= h) {
            std::fill(out, out + wo, Scalar(0));
            continue;
          }
          const Scalar* in = xp + ih * w - p + kw;
          std::fill(out, out + lo, Scalar(0));
          for (Index ow = lo; ow < hi; ++ow) out[ow] = in[ow * s];
          std::fill(out + hi, out + wo, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* col, Index channels, Index h, Index w, const ConvSpec& spec, Index ho,
            Index wo, Scalar* x) {
  const Index k = spec.kernel, s = spec.stride, p = spec.pad();
  for (Index c = 0; c < channels; ++c) {
    Scalar* xp = x + c * h * w;
    for (Index kh = 0; kh < k; ++kh) {
      for (Index kw = 0; kw < k; ++kw) {
        const Scalar* row = col + ((c * k + kh) * k + kw) * ho * wo;
        Index lo, hi;
        valid_range(w, wo, s, p, kw, lo, hi);
        for (Index oh = 0; oh < ho; ++oh) {
          const Index ih = oh * s - p + kh;
          if (ih < 0 || ih >= h) continue;
          Scalar* in = xp + ih * w - p + kw;
          const Scalar* g = row + oh * wo;
          for (Index ow = lo; ow < hi; ++ow) in[ow * s] += g[ow];
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvSpec& spec) {
  return spec.kernel == 1 && spec.stride == 1 && spec.pad() == 0;
}

}  // namespace detail

/// Grouped 2-D convolution. Depthwise specs take a direct sliding-window path,
/// everything else goes through im2col + GEMM per group.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>* bias,
                      const ConvSpec& spec) {
  detail::check_conv_args<Scalar>(x.shape(), w.shape(), spec);
  if (bias && bias->numel() != spec.out_channels) {
    throw ShapeError("conv2d", "bias length", spec.out_channels, bias->numel());
  }
  note_conv_call();
  const Shape xs = x.shape();
  const Shape ys = spec.output_shape(xs);
  Tensor<Scalar> y(ys);
  const Index k = spec.kernel, s = spec.stride, p = spec.pad();
  const Index ho = ys.h, wo = ys.w;

  if (spec.depthwise()) {
    for (Index n = 0; n < xs.n; ++n) {
      for (Index c = 0; c < xs.c; ++c) {
        const Scalar* xp = x.ptr() + x.offset(n, c, 0, 0);
        Scalar* yp = y.ptr() + y.offset(n, c, 0, 0);
        const Scalar* wk = w.ptr() + c * k * k;
        for (Index kh = 0; kh < k; ++kh) {
          for (Index kw = 0; kw < k; ++kw) {
            const Scalar wv = wk[kh * k + kw];
            Index lo, hi;
            detail::valid_range(xs.w, wo, s, p, kw, lo, hi);
            for (Index oh = 0; oh < ho; ++oh) {
              const Index ih = oh * s - p + kh;
              if (ih < 0 || ih >= xs.h) continue;
              const Scalar* in = xp + ih * xs.w - p + kw;
              Scalar* out = yp + oh * wo;
              for (Index ow = lo; ow < hi; ++ow) out[ow] += wv * in[ow * s];
            }
          }
        }
      }
    }
  } else {
    const Index g = spec.groups;
    const Index cin = xs.c / g, cout = ys.c / g;
    const Index rows = cin * k * k, cols = ho * wo;
    std::vector<Scalar> col;
    if (!detail::is_pointwise(spec)) col.resize(static_cast<std::size_t>(rows * cols));
    for (Index n = 0; n < xs.n; ++n) {
      for (Index gi = 0; gi < g; ++gi) {
        const Scalar* xg = x.ptr() + x.offset(n, gi * cin, 0, 0);
        const Scalar* src = xg;
        if (!col.empty()) {
          detail::im2col(xg, cin, xs.h, xs.w, spec, ho, wo, col.data());
          src = col.data();
        }
        detail::ConstMapMat<Scalar> cm(src, rows, cols);
        detail::ConstMapMat<Scalar> wm(w.ptr() + gi * cout * rows, cout, rows);
        detail::MapMat<Scalar> ym(y.ptr() + y.offset(n, gi * cout, 0, 0), cout, cols);
        ym.noalias() = wm * cm;
      }
    }
  }
  if (bias) {
    for (Index n = 0; n < ys.n; ++n)
      for (Index c = 0; c < ys.c; ++c)
        y.data().segment(y.offset(n, c, 0, 0), ys.plane()) += (*bias)[c];
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const ConvSpec& spec) {
  return conv2d<Scalar>(x, w, nullptr, spec);
}

/// d(loss)/d(x) given d(loss)/d(y).
template <typename Scalar>
Tensor<Scalar> conv2d_grad_input(const Tensor<Scalar>& gy, const Tensor<Scalar>& w,
                                 const ConvSpec& spec, const Shape& xs) {
  Tensor<Scalar> gx(xs);
  const Index k = spec.kernel, s = spec.stride, p = spec.pad();
  const Index ho = gy.shape().h, wo = gy.shape().w;
  if (spec.depthwise()) {
    for (Index n = 0; n < xs.n; ++n) {
      for (Index c = 0; c < xs.c; ++c) {
        Scalar* xp = gx.ptr() + gx.offset(n, c, 0, 0);
        const Scalar* gp = gy.ptr() + gy.offset(n, c, 0, 0);
        const Scalar* wk = w.ptr() + c * k * k;
        for (Index kh = 0; kh < k; ++kh) {
          for (Index kw = 0; kw < k; ++kw) {
            const Scalar wv = wk[kh * k + kw];
            Index lo, hi;
            detail::valid_range(xs.w, wo, s, p, kw, lo, hi);
            for (Index oh = 0; oh < ho; ++oh) {
              const Index ih = oh * s - p + kh;
              if (ih < 0 || ih >= xs.h) continue;
              Scalar* in = xp + ih * xs.w - p + kw;
              const Scalar* g = gp + oh * wo;
              for (Index ow = lo; ow < hi; ++ow) in[ow * s] += wv * g[ow];
            }
          }
        }
      }
    }
    return gx;
  }
  const Index g = spec.groups;
  const Index cin = xs.c / g, cout = spec.out_channels / g;
  const Index rows = cin * k * k, cols = ho * wo;
  const bool pointwise = detail::is_pointwise(spec);
  std::vector<Scalar> col(pointwise ? 0 : static_cast<std::size_t>(rows * cols));
  for (Index n = 0; n < xs.n; ++n) {
    for (Index gi = 0; gi < g; ++gi) {
      detail::ConstMapMat<Scalar> wm(w.ptr() + gi * cout * rows, cout, rows);
      detail::ConstMapMat<Scalar> gm(gy.ptr() + gy.offset(n, gi * cout, 0, 0), cout, cols);
      Scalar* xg = gx.ptr() + gx.offset(n, gi * cin, 0, 0);
      if (pointwise) {
        detail::MapMat<Scalar>(xg, rows, cols).noalias() = wm.transpose() * gm;
      } else {
        detail::MapMat<Scalar>(col.data(), rows, cols).noalias() = wm.transpose() * gm;
        detail::col2im(col.data(), cin, xs.h, xs.w, spec, ho, wo, xg);
      }
    }
  }
  return gx;
}

/// d(loss)/d(w) given d(loss)/d(y).
template <typename Scalar>
Tensor<Scalar> conv2d_grad_weight(const Tensor<Scalar>& gy, const Tensor<Scalar>& x,
                                  const ConvSpec& spec) {
  Tensor<Scalar> gw(spec.weight_shape());
  const Shape xs = x.shape();
  const Index k = spec.kernel, s = spec.stride, p = spec.pad();
  const Index ho = gy.shape().h, wo = gy.shape().w;
  if (spec.depthwise()) {
    for (Index n = 0; n < xs.n; ++n) {
      for (Index c = 0; c < xs.c; ++c) {
        const Scalar* xp = x.ptr() + x.offset(n, c, 0, 0);
        const Scalar* gp = gy.ptr() + gy.offset(n, c, 0, 0);
        Scalar* wk = gw.ptr() + c * k * k;
        for (Index kh = 0; kh < k; ++kh) {
          for (Index kw = 0; kw < k; ++kw) {
            Index lo, hi;
            detail::valid_range(xs.w, wo, s, p, kw, lo, hi);
            Scalar acc(0);
            for (Index oh = 0; oh < ho; ++oh) {
              const Index ih = oh * s - p + kh;
              if (ih < 0 || ih >= xs.h) continue;
              const Scalar* in = xp + ih * xs.w - p + kw;
              const Scalar* g = gp + oh * wo;
              for (Index ow = lo; ow < hi; ++ow) acc += g[ow] * in[ow * s];
            }
            wk[kh * k + kw] += acc;
          }
        }
      }
    }
    return gw;
  }
  const Index g = spec.groups;
  const Index cin = xs.c / g, cout = spec.out_channels / g;
  const Index rows = cin * k * k, cols = ho * wo;
  const bool pointwise = detail::is_pointwise(spec);
  std::vector<Scalar> col(pointwise ? 0 : static_cast<std::size_t>(rows * cols));
  for (Index n = 0; n < xs.n; ++n) {
    for (Index gi = 0; gi < g; ++gi) {
      const Scalar* xg = x.ptr() + x.offset(n, gi * cin, 0, 0);
      const Scalar* src = xg;
      if (!pointwise) {
        detail::im2col(xg, cin, xs.h, xs.w, spec, ho, wo, col.data());
        src = col.data();
      }
      detail::ConstMapMat<Scalar> cm(src, rows, cols);
      detail::ConstMapMat<Scalar> gm(gy.ptr() + gy.offset(n, gi * cout, 0, 0), cout, cols);
      detail::MapMat<Scalar>(gw.ptr() + gi * cout * rows, cout, rows).noalias() +=
          gm * cm.transpose();
    }
  }
  return gw;
}

/// Sum of `t` over batch and spatial dims, one value per channel, as (c,1,1,1).
template <typename Scalar>
Tensor<Scalar> channel_sum(const Tensor<Scalar>& t) {
  const Shape s = t.shape();
  Tensor<Scalar> out = Tensor<Scalar>::vector(s.c);
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) out[c] += t.data().segment(t.offset(n, c, 0, 0), s.plane()).sum();
  return out;
}

/// Inference-mode batch normalization statistics and affine parameters.
template <typename Scalar>
struct BatchNormParams {
  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Vec gamma;
  Vec beta;
  Vec running_mean;
  Vec running_var;
  Scalar eps = Scalar(1e-5);

  static BatchNormParams identity(Index channels, Scalar eps = Scalar(1e-5)) {
    return {Vec::Ones(channels), Vec::Zero(channels), Vec::Zero(channels), Vec::Ones(channels),
            eps};
  }
  Index channels() const noexcept { return gamma.size(); }
  void validate() const {
    const Index c = channels();
    if (beta.size() != c) throw ShapeError("batchnorm", "beta length", c, beta.size());
    if (running_mean.size() != c)
      throw ShapeError("batchnorm", "running_mean length", c, running_mean.size());
    if (running_var.size() != c)
      throw ShapeError("batchnorm", "running_var length", c, running_var.size());
    if ((running_var < Scalar(0)).any()) throw ConfigError("batchnorm: negative running_var");
  }
};

/// y[c] = gamma[c] * (x[c] - mean[c]) / sqrt(var[c] + eps) + beta[c]
template <typename Scalar>
Tensor<Scalar> batchnorm_infer(const Tensor<Scalar>& x, const BatchNormParams<Scalar>& bn) {
  bn.validate();
  const Shape s = x.shape();
  if (s.c != bn.channels()) throw ShapeError("batchnorm_infer", "channels", bn.channels(), s.c);
  Tensor<Scalar> y(s);
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      const Scalar inv = Scalar(1) / std::sqrt(bn.running_var[c] + bn.eps);
      const Index o = x.offset(n, c, 0, 0);
      y.data().segment(o, s.plane()) =
          bn.gamma[c] * (x.data().segment(o, s.plane()) - bn.running_mean[c]) * inv + bn.beta[c];
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> silu(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.shape(), x.data() / (Scalar(1) + (-x.data()).exp()));
}

/// d silu / dx = s * (1 + x * (1 - s)), s = sigmoid(x).
template <typename Scalar>
Tensor<Scalar> silu_grad(const Tensor<Scalar>& x, const Tensor<Scalar>& gy) {
  const auto sig = (Scalar(1) / (Scalar(1) + (-x.data()).exp())).eval();
  return Tensor<Scalar>(x.shape(),
                        gy.data() * sig * (Scalar(1) + x.data() * (Scalar(1) - sig)));
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& x) {
  const Shape s = x.shape();
  Tensor<Scalar> y({s.n, s.c, 2 * s.h, 2 * s.w});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index i = 0; i < 2 * s.h; ++i)
        for (Index j = 0; j < 2 * s.w; ++j) y(n, c, i, j) = x(n, c, i / 2, j / 2);
  return y;
}

/// Adjoint of upsample_nearest2x: sums each 2x2 block.
template <typename Scalar>
Tensor<Scalar> upsample_nearest2x_grad(const Tensor<Scalar>& gy) {
  const Shape s = gy.shape();
  Tensor<Scalar> gx({s.n, s.c, s.h / 2, s.w / 2});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index i = 0; i < s.h; ++i)
        for (Index j = 0; j < s.w; ++j) gx(n, c, i / 2, j / 2) += gy(n, c, i, j);
  return gx;
}

/// Mean over non-overlapping 2x2 windows (stride 2); odd trailing rows/cols are dropped.
template <typename Scalar>
Tensor<Scalar> avg_pool2x(const Tensor<Scalar>& x) {
  const Shape s = x.shape();
  Tensor<Scalar> y({s.n, s.c, s.h / 2, s.w / 2});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index i = 0; i < s.h / 2; ++i)
        for (Index j = 0; j < s.w / 2; ++j)
          y(n, c, i, j) = (x(n, c, 2 * i, 2 * j) + x(n, c, 2 * i, 2 * j + 1) +
                           x(n, c, 2 * i + 1, 2 * j) + x(n, c, 2 * i + 1, 2 * j + 1)) /
                          Scalar(4);
  return y;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(std::span<const Tensor<Scalar>* const> xs) {
  if (xs.empty()) throw ConfigError("concat_channels: empty input list");
  const Shape first = xs.front()->shape();
  Index channels = 0;
  for (const Tensor<Scalar>* t : xs) {
    const Shape s = t->shape();
    if (s.n != first.n) throw ShapeError("concat_channels", "batch", first.n, s.n);
    if (s.h != first.h) throw ShapeError("concat_channels", "height", first.h, s.h);
    if (s.w != first.w) throw ShapeError("concat_channels", "width", first.w, s.w);
    channels += s.c;
  }
  Tensor<Scalar> y({first.n, channels, first.h, first.w});
  for (Index n = 0; n < first.n; ++n) {
    Index c0 = 0;
    for (const Tensor<Scalar>* t : xs) {
      const Index len = t->shape().c * first.plane();
      y.data().segment(y.offset(n, c0, 0, 0), len) = t->data().segment(t->offset(n, 0, 0, 0), len);
      c0 += t->shape().c;
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& xs) {
  std::vector<const Tensor<Scalar>*> ptrs;
  ptrs.reserve(xs.size());
  for (const auto& t : xs) ptrs.push_back(&t);
  return concat_channels<Scalar>(std::span<const Tensor<Scalar>* const>(ptrs));
}

/// Channel slice [c0, c0 + count) of x.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, Index c0, Index count) {
  const Shape s = x.shape();
  Tensor<Scalar> y({s.n, count, s.h, s.w});
  for (Index n = 0; n < s.n; ++n)
    y.data().segment(y.offset(n, 0, 0, 0), count * s.plane()) =
        x.data().segment(x.offset(n, c0, 0, 0), count * s.plane());
  return y;
}

inline void check_split_sizes(Index channels, std::span<const Index> sizes) {
  Index total = 0;
  for (Index v : sizes) {
    if (v <= 0) throw ConfigError("split_channels: sizes must be positive");
    total += v;
  }
  if (total != channels) {
    throw ConfigError("split_channels: sizes sum to " + std::to_string(total) + " but input has " +
                      std::to_string(channels) + " channels");
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>> split_channels(const Tensor<Scalar>& x, std::span<const Index> sizes) {
  check_split_sizes(x.shape().c, sizes);
  std::vector<Tensor<Scalar>> out;
  Index c0 = 0;
  for (Index v : sizes) {
    out.push_back(slice_channels(x, c0, v));
    c0 += v;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  const Shape s = x.shape();
  Tensor<Scalar> y({s.n, s.c, 1, 1});
  if (s.plane() == 0) return y;
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      y(n, c, 0, 0) = x.data().segment(x.offset(n, c, 0, 0), s.plane()).mean();
  return y;
}

}  // namespace maf
