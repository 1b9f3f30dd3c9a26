#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "maf/autograd.hpp"
#include "maf/cost.hpp"

namespace maf {

using Rng = std::mt19937_64;

inline constexpr double kBatchNormMomentum = 0.1;

/// Callback over named tensors of a module. `learnable` is false for
/// running statistics and for derived (fused) weights.
template <typename Scalar>
using Visitor = std::function<void(const std::string& name, Var<Scalar>& tensor, bool learnable)>;

/// He-normal initialization for a conv weight of the given spec.
template <typename Scalar>
Tensor<Scalar> he_normal(const ConvSpec& spec, Rng& rng) {
  const double fan_in = static_cast<double>((spec.in_channels / spec.groups) * spec.kernel * spec.kernel);
  return Tensor<Scalar>::normal(spec.weight_shape(), rng, std::sqrt(2.0 / fan_in));
}

template <typename Scalar>
class Conv {
 public:
  Conv() = default;
  Conv(std::string name, const ConvSpec& spec, Rng& rng) : name_(std::move(name)), spec_(spec) {
    spec_.validate();
    weight_ = Var<Scalar>(he_normal<Scalar>(spec_, rng), true);
    if (spec_.has_bias) bias_ = Var<Scalar>(Tensor<Scalar>::vector(spec_.out_channels), true);
  }

  Var<Scalar> forward(const Var<Scalar>& x) const {
    Var<Scalar> y = conv2d<Scalar>(x, weight_, bias_.defined() ? &bias_ : nullptr, spec_);
    const Shape& s = y.shape();
    record_cost({name_, spec_.depthwise() ? "dwconv" : "conv",
                 conv_params(spec_.in_channels, spec_.out_channels, spec_.kernel, spec_.groups,
                             spec_.has_bias),
                 0,
                 conv_macs(spec_.in_channels, spec_.out_channels, spec_.kernel, spec_.groups, s.h,
                           s.w),
                 s});
    return y;
  }

  void visit(const Visitor<Scalar>& f) {
    f(name_ + ".weight", weight_, true);
    if (bias_.defined()) f(name_ + ".bias", bias_, true);
  }

  void inventory(std::vector<LayerInfo>& out) const {
    out.push_back({name_, spec_.depthwise() ? "dwconv" : "conv", spec_.in_channels,
                   spec_.out_channels, spec_.kernel, spec_.stride, spec_.groups, {}, false});
  }

  const std::string& name() const noexcept { return name_; }
  const ConvSpec& spec() const noexcept { return spec_; }
  Var<Scalar>& weight() noexcept { return weight_; }
  const Var<Scalar>& weight() const noexcept { return weight_; }
  Var<Scalar>& bias() noexcept { return bias_; }

 private:
  std::string name_;
  ConvSpec spec_;
  Var<Scalar> weight_;
  Var<Scalar> bias_;
};

template <typename Scalar>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, Index channels, Scalar eps = Scalar(1e-5),
            Scalar momentum = Scalar(kBatchNormMomentum))
      : name_(std::move(name)),
        gamma_(Tensor<Scalar>::vector(channels, Scalar(1)), true),
        beta_(Tensor<Scalar>::vector(channels), true),
        mean_(Tensor<Scalar>::vector(channels)),
        var_(Tensor<Scalar>::vector(channels, Scalar(1))),
        eps_(eps),
        momentum_(momentum) {}

  Index channels() const { return gamma_.value().numel(); }
  bool training() const noexcept { return training_; }
  void set_training(bool on) noexcept { training_ = on; }

  BatchNormParams<Scalar> params() const {
    return {gamma_.value().data(), beta_.value().data(), mean_.value().data(), var_.value().data(),
            eps_};
  }

  /// Inference mode normalizes with running statistics. Training mode uses
  /// batch statistics and updates the running ones with `momentum`.
  Var<Scalar> forward(const Var<Scalar>& x) {
    const Shape& s = x.shape();
    record_cost({name_, "bn", 2 * channels(), 2 * channels(), 0, s});
    if (!training_) return batchnorm_infer<Scalar>(x, gamma_, beta_, params());
    BatchStats<Scalar> stats;
    Var<Scalar> y = batchnorm_train<Scalar>(x, gamma_, beta_, eps_, &stats);
    const Scalar unbias = stats.count > 1 ? Scalar(stats.count) / Scalar(stats.count - 1) : Scalar(1);
    mean_.mutable_value().data() = (Scalar(1) - momentum_) * mean_.value().data() + momentum_ * stats.mean;
    var_.mutable_value().data() =
        (Scalar(1) - momentum_) * var_.value().data() + momentum_ * stats.var * unbias;
    return y;
  }

  /// Draws random affine parameters and running statistics, as a trained
  /// network would carry. Used by the fusion checks.
  void randomize(Rng& rng) {
    std::uniform_real_distribution<double> scale(0.5, 1.5), shift(-0.2, 0.2);
    for (Index c = 0; c < channels(); ++c) {
      gamma_.mutable_value()[c] = static_cast<Scalar>(scale(rng));
      beta_.mutable_value()[c] = static_cast<Scalar>(shift(rng));
      mean_.mutable_value()[c] = static_cast<Scalar>(shift(rng));
      var_.mutable_value()[c] = static_cast<Scalar>(scale(rng));
    }
  }

  void visit(const Visitor<Scalar>& f) {
    f(name_ + ".gamma", gamma_, true);
    f(name_ + ".beta", beta_, true);
    f(name_ + ".running_mean", mean_, false);
    f(name_ + ".running_var", var_, false);
  }

  void inventory(std::vector<LayerInfo>& out) const {
    out.push_back({name_, "bn", channels(), channels(), 0, 1, 1, {}, false});
  }

  Var<Scalar>& gamma() noexcept { return gamma_; }
  Var<Scalar>& beta() noexcept { return beta_; }
  Var<Scalar>& running_mean() noexcept { return mean_; }
  Var<Scalar>& running_var() noexcept { return var_; }
  Scalar eps() const noexcept { return eps_; }

 private:
  std::string name_;
  Var<Scalar> gamma_, beta_, mean_, var_;
  Scalar eps_ = Scalar(1e-5);
  Scalar momentum_ = Scalar(kBatchNormMomentum);
  bool training_ = false;
};

/// Conv (no bias) -> BN -> optional SiLU.
template <typename Scalar>
class ConvBn {
 public:
  ConvBn() = default;
  ConvBn(const std::string& name, Index in, Index out, Index kernel, Index stride, bool act, Rng& rng)
      : conv_(name + ".conv", ConvSpec{in, out, kernel, stride, -1, 1, false}, rng),
        bn_(name + ".bn", out),
        act_(act) {}

  Var<Scalar> forward(const Var<Scalar>& x, bool activations = true) {
    Var<Scalar> y = bn_.forward(conv_.forward(x));
    return (act_ && activations) ? silu(y) : y;
  }

  void visit(const Visitor<Scalar>& f) {
    conv_.visit(f);
    bn_.visit(f);
  }
  void inventory(std::vector<LayerInfo>& out) const {
    conv_.inventory(out);
    bn_.inventory(out);
  }
  void set_training(bool on) { bn_.set_training(on); }
  void randomize_bn(Rng& rng) { bn_.randomize(rng); }

  Conv<Scalar>& conv() noexcept { return conv_; }
  BatchNorm<Scalar>& bn() noexcept { return bn_; }
  bool has_activation() const noexcept { return act_; }
  Index out_channels() const noexcept { return conv_.spec().out_channels; }

 private:
  Conv<Scalar> conv_;
  BatchNorm<Scalar> bn_;
  bool act_ = true;
};

}  // namespace maf
