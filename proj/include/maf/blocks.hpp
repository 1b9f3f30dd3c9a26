#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "maf/rep_conv.hpp"

namespace maf {

struct BottleneckConfig {
  Index channels = 0;
  double expansion = 2.0;
  Index kernel = 5;
  bool use_rep = true;    // parallel small depthwise branches
  bool use_large = true;  // GHKS kernel; when off every bottleneck uses 5x5

  Index expanded() const { return static_cast<Index>(std::lround(static_cast<double>(channels) * expansion)); }
  Index depthwise_kernel() const { return use_large ? kernel : 5; }
  std::vector<Index> small_kernels() const {
    const Index k = depthwise_kernel();
    return (use_rep && k >= 5) ? default_small_kernels(k) : std::vector<Index>{};
  }
  void validate() const {
    if (channels <= 0) throw ConfigError("bottleneck.channels must be positive");
    if (!(expansion > 0.0)) throw ConfigError("bottleneck.expansion must be positive");
    if (expanded() < channels) throw ConfigError("bottleneck: expanded width below channels");
    if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("bottleneck.kernel must be odd");
  }
};

struct HELANConfig {
  Index in_channels = 0;
  Index out_channels = 0;
  Index hidden = 0;
  Index n_bottlenecks = 2;
  BottleneckConfig bottleneck;  // channels is overwritten with hidden
  bool use_elan = true;

  Index concat_width() const { return use_elan ? (2 + n_bottlenecks) * hidden : 2 * hidden; }
  void validate() const {
    if (in_channels <= 0 || out_channels <= 0 || hidden <= 0) {
      throw ConfigError("helan: channel widths must be positive");
    }
    if (n_bottlenecks < 1) throw ConfigError("helan.n_bottlenecks must be >= 1");
    BottleneckConfig b = bottleneck;
    b.channels = hidden;
    b.validate();
  }
};

/// 1x1 expand -> SiLU -> RepHDWConv -> SiLU -> 1x1 shrink (no activation).
template <typename Scalar>
class InvertedBottleneck {
 public:
  InvertedBottleneck() = default;
  InvertedBottleneck(const std::string& name, const BottleneckConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const Index e = cfg_.expanded();
    expand_ = ConvBn<Scalar>(name + ".expand", cfg_.channels, e, 1, 1, true, rng);
    dw_ = RepHDWConv<Scalar>(name + ".rephdw", e, cfg_.depthwise_kernel(), cfg_.small_kernels(), rng);
    shrink_ = ConvBn<Scalar>(name + ".shrink", e, cfg_.channels, 1, 1, false, rng);
  }

  Var<Scalar> forward(const Var<Scalar>& x) {
    if (x.shape().c != cfg_.channels) throw ShapeError("bottleneck", "channels", cfg_.channels, x.shape().c);
    Var<Scalar> h = expand_.forward(x, activations_);
    h = dw_.forward(h);
    if (activations_) h = silu(h);
    return shrink_.forward(h, activations_);
  }

  void visit(const Visitor<Scalar>& f) {
    expand_.visit(f);
    dw_.visit(f);
    shrink_.visit(f);
  }
  void inventory(std::vector<LayerInfo>& out) const {
    expand_.inventory(out);
    dw_.inventory(out);
    shrink_.inventory(out);
  }
  template <typename Fn>
  void for_each_rep(Fn&& fn) {
    fn(dw_);
  }
  void set_training(bool on) {
    expand_.set_training(on);
    dw_.set_training(on);
    shrink_.set_training(on);
  }
  void randomize_bn(Rng& rng) {
    expand_.randomize_bn(rng);
    dw_.randomize_bn(rng);
    shrink_.randomize_bn(rng);
  }
  /// Bypasses every activation so the block is linear in its input.
  void set_linear(bool on) noexcept { activations_ = !on; }

  const BottleneckConfig& config() const noexcept { return cfg_; }
  ConvBn<Scalar>& expand() noexcept { return expand_; }
  RepHDWConv<Scalar>& rephdw() noexcept { return dw_; }
  ConvBn<Scalar>& shrink() noexcept { return shrink_; }

 private:
  BottleneckConfig cfg_;
  ConvBn<Scalar> expand_;
  RepHDWConv<Scalar> dw_;
  ConvBn<Scalar> shrink_;
  bool activations_ = true;
};

/// Aggregation block: 1x1 conv, split into two halves, one half kept as is,
/// the other driven through a chain of inverted bottlenecks. With ELAN on
/// every intermediate output is retained; a final 1x1 conv maps the concat
/// to out_channels.
template <typename Scalar>
class HELAN {
 public:
  HELAN() = default;
  HELAN(const std::string& name, const HELANConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    cfg_.bottleneck.channels = cfg_.hidden;
    pw_in_ = ConvBn<Scalar>(name + ".pw_in", cfg_.in_channels, 2 * cfg_.hidden, 1, 1, true, rng);
    for (Index i = 0; i < cfg_.n_bottlenecks; ++i) {
      chain_.emplace_back(name + ".b" + std::to_string(i), cfg_.bottleneck, rng);
    }
    pw_out_ = ConvBn<Scalar>(name + ".pw_out", cfg_.concat_width(), cfg_.out_channels, 1, 1, true, rng);
  }

  /// Returns (output, pre-projection concat).
  std::pair<Var<Scalar>, Var<Scalar>> forward_with_concat(const Var<Scalar>& x) {
    if (x.shape().c != cfg_.in_channels) throw ShapeError("helan", "channels", cfg_.in_channels, x.shape().c);
    Var<Scalar> h = pw_in_.forward(x, activations_);
    const Index sizes[2] = {cfg_.hidden, cfg_.hidden};
    std::vector<Var<Scalar>> halves = split_channels(h, std::span<const Index>(sizes));
    std::vector<Var<Scalar>> lanes = cfg_.use_elan ? halves : std::vector<Var<Scalar>>{halves[0]};
    Var<Scalar> cur = halves[1];
    for (auto& b : chain_) {
      cur = b.forward(cur);
      if (cfg_.use_elan) lanes.push_back(cur);
    }
    if (!cfg_.use_elan) lanes.push_back(cur);
    Var<Scalar> cat = concat_channels(lanes);
    return {pw_out_.forward(cat, activations_), cat};
  }

  Var<Scalar> forward(const Var<Scalar>& x) { return forward_with_concat(x).first; }

  void visit(const Visitor<Scalar>& f) {
    pw_in_.visit(f);
    for (auto& b : chain_) b.visit(f);
    pw_out_.visit(f);
  }
  void inventory(std::vector<LayerInfo>& out) const {
    pw_in_.inventory(out);
    for (const auto& b : chain_) b.inventory(out);
    pw_out_.inventory(out);
  }
  template <typename Fn>
  void for_each_rep(Fn&& fn) {
    for (auto& b : chain_) b.for_each_rep(fn);
  }
  void set_training(bool on) {
    pw_in_.set_training(on);
    for (auto& b : chain_) b.set_training(on);
    pw_out_.set_training(on);
  }
  void randomize_bn(Rng& rng) {
    pw_in_.randomize_bn(rng);
    for (auto& b : chain_) b.randomize_bn(rng);
    pw_out_.randomize_bn(rng);
  }
  void set_linear(bool on) {
    activations_ = !on;
    for (auto& b : chain_) b.set_linear(on);
  }

  const HELANConfig& config() const noexcept { return cfg_; }
  ConvBn<Scalar>& pw_in() noexcept { return pw_in_; }
  ConvBn<Scalar>& pw_out() noexcept { return pw_out_; }
  std::vector<InvertedBottleneck<Scalar>>& chain() noexcept { return chain_; }

 private:
  HELANConfig cfg_;
  ConvBn<Scalar> pw_in_;
  std::vector<InvertedBottleneck<Scalar>> chain_;
  ConvBn<Scalar> pw_out_;
  bool activations_ = true;
};

}  // namespace maf
