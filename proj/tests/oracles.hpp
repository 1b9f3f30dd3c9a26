#pragma once

// Direct-loop references the optimized kernels are compared against.

#include <cmath>

#include "maf/layers.hpp"

namespace maf::oracle {

/// Six nested loops over (n, o, y, x, i, r, c) with explicit zero padding.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>* bias,
                      const ConvSpec& spec) {
  const Shape xs = x.shape();
  const Shape ys = spec.output_shape(xs);
  const Index k = spec.kernel, s = spec.stride, p = spec.pad();
  const Index in_per_group = spec.in_channels / spec.groups;
  const Index out_per_group = spec.out_channels / spec.groups;
  Tensor<Scalar> y(ys);
  for (Index n = 0; n < ys.n; ++n)
    for (Index o = 0; o < ys.c; ++o) {
      const Index g = o / out_per_group;
      for (Index oy = 0; oy < ys.h; ++oy)
        for (Index ox = 0; ox < ys.w; ++ox) {
          double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
          for (Index i = 0; i < in_per_group; ++i)
            for (Index r = 0; r < k; ++r)
              for (Index c = 0; c < k; ++c) {
                const Index iy = oy * s - p + r, ix = ox * s - p + c;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += static_cast<double>(x(n, g * in_per_group + i, iy, ix)) * static_cast<double>(w(o, i, r, c));
              }
          y(n, o, oy, ox) = static_cast<Scalar>(acc);
        }
    }
  return y;
}

template <typename Scalar>
Tensor<Scalar> batchnorm(const Tensor<Scalar>& x, const BatchNormParams<Scalar>& bn) {
  Tensor<Scalar> y(x.shape());
  const Shape s = x.shape();
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index i = 0; i < s.h; ++i)
        for (Index j = 0; j < s.w; ++j)
          y(n, c, i, j) = bn.gamma[c] * (x(n, c, i, j) - bn.running_mean[c]) / std::sqrt(bn.running_var[c] + bn.eps) +
                          bn.beta[c];
  return y;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return Tensor<Scalar>(a.shape(), a.data() + b.data());
}

}  // namespace maf::oracle
