#pragma once

// Reparameterizable heterogeneous depthwise convolution: one large depthwise
// kernel trained alongside smaller parallel depthwise kernels, each with its
// own batch norm. At inference the branches collapse into a single large
// kernel plus bias:
//
//   O = I * (K_large + sum_i pad(K_small_i)) + (B_large + sum_i B_small_i)
//
// where every K/B pair is a branch's conv weight with its BN folded in.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maf/layers.hpp"

namespace maf {

/// All odd k with 3 <= k <= large - 2, descending.
std::vector<Index> default_small_kernels(Index large);

/// Validates a (large, small...) kernel set: all odd, small strictly
/// decreasing, each small >= 3 and < large.
void validate_kernel_set(Index large, std::span<const Index> small);

/// Folds inference-mode BN into a conv weight (out, in/g, k, k):
///   w'[o] = w[o] * gamma[o] / sqrt(var[o] + eps)
///   b'[o] = beta[o] - gamma[o] * mean[o] / sqrt(var[o] + eps)
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> fold_bn(const Tensor<Scalar>& w,
                                                  const BatchNormParams<Scalar>& bn) {
  bn.validate();
  const Shape s = w.shape();
  if (s.n != bn.channels()) throw ShapeError("fold_bn", "channels", bn.channels(), s.n);
  Tensor<Scalar> wf(s);
  Tensor<Scalar> bf = Tensor<Scalar>::vector(s.n);
  const Index per = s.c * s.h * s.w;
  for (Index o = 0; o < s.n; ++o) {
    const Scalar std = std::sqrt(bn.running_var[o] + bn.eps);
    wf.data().segment(o * per, per) = w.data().segment(o * per, per) * bn.gamma[o] / std;
    bf[o] = bn.beta[o] - bn.gamma[o] * bn.running_mean[o] / std;
  }
  return {std::move(wf), std::move(bf)};
}

/// Zero-pads a (out, in, k, k) kernel symmetrically to (out, in, target, target).
template <typename Scalar>
Tensor<Scalar> pad_kernel(const Tensor<Scalar>& w, Index target) {
  const Shape s = w.shape();
  if (target < s.h || (target - s.h) % 2 != 0 || s.h != s.w) {
    throw ConfigError("pad_kernel: cannot center a " + std::to_string(s.h) + "x" +
                      std::to_string(s.w) + " kernel in " + std::to_string(target));
  }
  const Index off = (target - s.h) / 2;
  Tensor<Scalar> out({s.n, s.c, target, target});
  for (Index o = 0; o < s.n; ++o)
    for (Index i = 0; i < s.c; ++i)
      for (Index r = 0; r < s.h; ++r)
        for (Index c = 0; c < s.w; ++c) out(o, i, r + off, c + off) = w(o, i, r, c);
  return out;
}

inline ConvSpec depthwise_spec(Index channels, Index kernel, bool bias = false) {
  return ConvSpec{channels, channels, kernel, 1, -1, channels, bias};
}

/// Sum over branches of BN(depthwise_conv(x, w_i)) with "same" padding per branch.
template <typename Scalar>
Var<Scalar> sum_depthwise_branches(const Var<Scalar>& x, std::span<const Var<Scalar>> weights,
                                   std::span<const Var<Scalar>> gammas,
                                   std::span<const Var<Scalar>> betas,
                                   std::span<const BatchNormParams<Scalar>> stats) {
  std::vector<Var<Scalar>> outs;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const Index c = x.shape().c;
    const ConvSpec spec = depthwise_spec(c, weights[i].shape().h);
    outs.push_back(batchnorm_infer<Scalar>(conv2d<Scalar>(x, weights[i], spec), gammas[i], betas[i],
                                           stats[i]));
  }
  return outs.size() == 1 ? outs.front() : add(outs);
}

template <typename Scalar>
struct FusedKernel {
  Var<Scalar> weight;  // (channels, 1, K, K)
  Var<Scalar> bias;    // (channels, 1, 1, 1)
};

template <typename Scalar>
class RepHDWConv {
 public:
  struct Branch {
    Index kernel = 0;
    Var<Scalar> weight;
    BatchNorm<Scalar> bn;
  };

  RepHDWConv() = default;
  RepHDWConv(std::string name, Index channels, Index large_kernel, std::vector<Index> small_kernels,
             Rng& rng)
      : name_(std::move(name)), channels_(channels) {
    if (channels <= 0) throw ConfigError(name_ + ": channels must be positive");
    validate_kernel_set(large_kernel, small_kernels);
    std::vector<Index> kernels{large_kernel};
    kernels.insert(kernels.end(), small_kernels.begin(), small_kernels.end());
    for (Index k : kernels) {
      const std::string prefix = name_ + ".k" + std::to_string(k);
      branches_.push_back(
          {k, Var<Scalar>(he_normal<Scalar>(depthwise_spec(channels, k), rng), true),
           BatchNorm<Scalar>(prefix + ".bn", channels)});
    }
  }

  const std::string& name() const noexcept { return name_; }
  Index channels() const noexcept { return channels_; }
  Index large_kernel() const noexcept { return branches_.front().kernel; }
  std::vector<Index> small_kernels() const {
    std::vector<Index> ks;
    for (std::size_t i = 1; i < branches_.size(); ++i) ks.push_back(branches_[i].kernel);
    return ks;
  }
  std::vector<Branch>& branches() noexcept { return branches_; }
  const std::vector<Branch>& branches() const noexcept { return branches_; }

  /// Multi-branch path: every branch conv + BN, summed.
  Var<Scalar> forward_train(const Var<Scalar>& x) {
    if (x.shape().c != channels_) throw ShapeError(name_, "channels", channels_, x.shape().c);
    std::vector<Var<Scalar>> outs;
    for (auto& b : branches_) {
      const ConvSpec spec = depthwise_spec(channels_, b.kernel);
      Var<Scalar> y = conv2d<Scalar>(x, b.weight, spec);
      record_cost({name_ + ".k" + std::to_string(b.kernel), "dwconv",
                   conv_params(channels_, channels_, b.kernel, channels_, false), 0,
                   conv_macs(channels_, channels_, b.kernel, channels_, y.shape().h, y.shape().w),
                   y.shape()});
      outs.push_back(b.bn.forward(y));
    }
    return outs.size() == 1 ? outs.front() : add(outs);
  }

  /// Single depthwise conv with the merged kernel and bias.
  Var<Scalar> forward_fused(const Var<Scalar>& x) const {
    if (!fused_) throw StateError(name_ + ": forward_fused called before fuse()");
    if (x.shape().c != channels_) throw ShapeError(name_, "channels", channels_, x.shape().c);
    const Index k = large_kernel();
    Var<Scalar> y = conv2d<Scalar>(x, fused_->weight, &fused_->bias, depthwise_spec(channels_, k, true));
    record_cost({name_ + ".fused", "dwconv", conv_params(channels_, channels_, k, channels_, true), 0,
                 conv_macs(channels_, channels_, k, channels_, y.shape().h, y.shape().w), y.shape()});
    return y;
  }

  /// Fused path when deployed and fused weights exist, branch path otherwise.
  Var<Scalar> forward(const Var<Scalar>& x) {
    return (deploy_ && fused_) ? forward_fused(x) : forward_train(x);
  }

  /// Folds each branch's BN, pads every kernel to the large size and sums
  /// kernels and biases, accumulating in double. Recomputed from the
  /// branches on every call.
  const FusedKernel<Scalar>& fuse() {
    validate_kernel_set(large_kernel(), small_kernels());
    const Index k = large_kernel();
    Tensor<double> weight({channels_, 1, k, k});
    Tensor<double> bias = Tensor<double>::vector(channels_);
    for (const auto& b : branches_) {
      if (b.bn.training()) {
        throw StateError(name_ + ": cannot fuse while batch norm is in training mode");
      }
      const BatchNormParams<Scalar> p = b.bn.params();
      const BatchNormParams<double> pd{p.gamma.template cast<double>(), p.beta.template cast<double>(),
                                       p.running_mean.template cast<double>(),
                                       p.running_var.template cast<double>(), static_cast<double>(p.eps)};
      auto [wf, bf] = fold_bn(b.weight.value().template cast<double>(), pd);
      weight.data() += pad_kernel(wf, k).data();
      bias.data() += bf.data();
    }
    fused_ = FusedKernel<Scalar>{Var<Scalar>(weight.template cast<Scalar>()),
                                 Var<Scalar>(bias.template cast<Scalar>())};
    return *fused_;
  }

  bool is_fused() const noexcept { return fused_.has_value(); }
  const std::optional<FusedKernel<Scalar>>& fused() const noexcept { return fused_; }
  void clear_fused() { fused_.reset(); }
  /// Installs fused tensors (weight loading); shapes are checked.
  void set_fused(Tensor<Scalar> weight, Tensor<Scalar> bias) {
    const Index k = large_kernel();
    if (!(weight.shape() == Shape{channels_, 1, k, k}))
      throw ShapeError(name_, "fused weight shape " + weight.shape().str());
    if (bias.numel() != channels_) throw ShapeError(name_, "fused bias length", channels_, bias.numel());
    fused_ = FusedKernel<Scalar>{Var<Scalar>(std::move(weight)), Var<Scalar>(std::move(bias))};
  }

  bool deployed() const noexcept { return deploy_; }
  void set_deploy(bool on) noexcept { deploy_ = on; }

  void set_training(bool on) {
    for (auto& b : branches_) b.bn.set_training(on);
  }
  void randomize_bn(Rng& rng) {
    for (auto& b : branches_) b.bn.randomize(rng);
  }

  void visit(const Visitor<Scalar>& f) {
    for (auto& b : branches_) {
      f(name_ + ".k" + std::to_string(b.kernel) + ".weight", b.weight, true);
      b.bn.visit(f);
    }
    if (fused_) {
      f(name_ + ".fused.weight", fused_->weight, false);
      f(name_ + ".fused.bias", fused_->bias, false);
    }
  }

  void inventory(std::vector<LayerInfo>& out) const {
    out.push_back({name_, "rephdw", channels_, channels_, large_kernel(), 1, channels_,
                   small_kernels(), deploy_ && fused_.has_value()});
  }

  /// Learnable parameter count of the branch path: conv weights plus 2 per BN channel.
  Index train_params() const {
    Index t = 0;
    for (const auto& b : branches_) t += channels_ * b.kernel * b.kernel + 2 * channels_;
    return t;
  }
  /// Parameter count of the fused path: C*K^2 + C.
  Index fused_params() const { return channels_ * large_kernel() * large_kernel() + channels_; }

 private:
  std::string name_;
  Index channels_ = 0;
  std::vector<Branch> branches_;
  std::optional<FusedKernel<Scalar>> fused_;
  bool deploy_ = false;
};

}  // namespace maf
