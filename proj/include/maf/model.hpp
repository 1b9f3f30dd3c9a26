#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "maf/mafpn.hpp"

namespace maf {

inline NeckConfig default_neck() {
  NeckConfig n;
  n.n_bottlenecks = 5;
  return n;
}

/// Full network description. Serialized as JSON (see config.hpp).
struct ModelConfig {
  Index in_channels = 3;
  Index stem_width = 16;
  std::array<Index, 4> widths{32, 64, 128, 256};  // P2..P5
  std::array<Index, 4> depths{2, 2, 2, 1};        // bottlenecks per backbone HELAN
  std::vector<Index> backbone_kernels{3, 5, 7, 9};
  double expansion = 4.0;
  bool use_elan = true;
  bool use_rep = true;
  bool use_large = true;
  NeckConfig neck = default_neck();
  Index head_width = 64;
  Index head_kernel = 7;
  Index head_outputs = 84;
  std::uint64_t seed = 0;

  /// Throws ConfigError with a field path on any violation.
  void validate() const;
  /// Neck config with the block-level toggles applied.
  NeckConfig resolved_neck() const;
};

/// Anything that maps an input image to named intermediate activations.
template <typename Scalar>
class TapModel {
 public:
  using Taps = std::vector<std::pair<std::string, Var<Scalar>>>;
  virtual ~TapModel() = default;
  virtual Taps forward_taps(const Var<Scalar>& x) = 0;
  virtual Index in_channels() const = 0;
};

/// Per-level detection head stub: 1x1 in, two RepHDW convs, 1x1 out with bias.
template <typename Scalar>
class HeadStub {
 public:
  HeadStub() = default;
  HeadStub(const std::string& name, Index in, Index width, Index kernel, Index outputs, Rng& rng)
      : stem_(name + ".stem", in, width, 1, 1, true, rng),
        dw1_(name + ".rephdw1", width, kernel, kernel >= 5 ? default_small_kernels(kernel) : std::vector<Index>{}, rng),
        dw2_(name + ".rephdw2", width, kernel, kernel >= 5 ? default_small_kernels(kernel) : std::vector<Index>{}, rng),
        out_(name + ".out", ConvSpec{width, outputs, 1, 1, -1, 1, true}, rng) {}

  Var<Scalar> forward(const Var<Scalar>& x) {
    Var<Scalar> h = stem_.forward(x);
    h = silu(dw1_.forward(h));
    h = silu(dw2_.forward(h));
    return out_.forward(h);
  }
  void visit(const Visitor<Scalar>& f) {
    stem_.visit(f);
    dw1_.visit(f);
    dw2_.visit(f);
    out_.visit(f);
  }
  void inventory(std::vector<LayerInfo>& out) const {
    stem_.inventory(out);
    dw1_.inventory(out);
    dw2_.inventory(out);
    out_.inventory(out);
  }
  template <typename Fn>
  void for_each_rep(Fn&& fn) {
    fn(dw1_);
    fn(dw2_);
  }
  void set_training(bool on) {
    stem_.set_training(on);
    dw1_.set_training(on);
    dw2_.set_training(on);
  }
  void randomize_bn(Rng& rng) {
    stem_.randomize_bn(rng);
    dw1_.randomize_bn(rng);
    dw2_.randomize_bn(rng);
  }

 private:
  ConvBn<Scalar> stem_;
  RepHDWConv<Scalar> dw1_, dw2_;
  Conv<Scalar> out_;
};

/// Backbone P2..P5 + MAFPN neck + per-level head stubs.
template <typename Scalar>
class Model : public TapModel<Scalar> {
 public:
  explicit Model(const ModelConfig& cfg);

  /// Taps: stem, P2..P5, P'5, P'4, P'3, N3, N4, N5, out3, out4, out5.
  typename TapModel<Scalar>::Taps forward_taps(const Var<Scalar>& x) override;
  /// Same as forward_taps without the heads.
  typename TapModel<Scalar>::Taps forward_features(const Var<Scalar>& x);
  /// Head outputs at strides 8, 16, 32.
  std::array<Var<Scalar>, 3> forward(const Var<Scalar>& x);
  Index in_channels() const override { return cfg_.in_channels; }

  static std::vector<std::string> tap_names();

  /// Fuses every RepHDW unit and switches them to the fused path.
  void fuse();
  /// Selects fused (true) or branch (false) evaluation for units that have fused weights.
  void set_deploy(bool on);
  /// Training mode uses batch statistics in every BN.
  void set_training(bool on);
  bool training() const noexcept { return training_; }
  /// Random BN affine parameters and running statistics everywhere.
  void randomize_bn(std::uint64_t seed);
  /// Sets every BN's running statistics to the batch statistics it sees on
  /// `x` in one training-mode pass, as a trained network would carry.
  void calibrate_bn(const Tensor<Scalar>& x);

  void visit(const Visitor<Scalar>& f);
  std::vector<LayerInfo> inventory();
  template <typename Fn>
  void for_each_rep(Fn&& fn) {
    for (auto& h : stages_) h.for_each_rep(fn);
    neck_.for_each_rep(fn);
    for (auto& h : heads_) h.for_each_rep(fn);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<WiringEdge>& neck_edges() const noexcept { return neck_.edges(); }
  MAFPN<Scalar>& neck() noexcept { return neck_; }

 private:
  void check_input(const Shape& s) const;

  ModelConfig cfg_;
  ConvBn<Scalar> stem_;
  std::array<ConvBn<Scalar>, 4> downs_;
  std::array<HELAN<Scalar>, 4> stages_;
  MAFPN<Scalar> neck_;
  std::array<HeadStub<Scalar>, 3> heads_;
  bool training_ = false;
};

/// Validates the config and builds a deterministically initialized model.
template <typename Scalar = float>
Model<Scalar> build_model(const ModelConfig& cfg) {
  cfg.validate();
  return Model<Scalar>(cfg);
}

/// Depthwise RepHDW stack used for receptive-field measurements:
/// depth x (RepHDWConv -> SiLU), taps "layer1".."layerN".
template <typename Scalar>
class DepthwiseStack : public TapModel<Scalar> {
 public:
  DepthwiseStack(Index channels, Index depth, Index kernel, bool rep, std::uint64_t seed);
  typename TapModel<Scalar>::Taps forward_taps(const Var<Scalar>& x) override;
  Index in_channels() const override { return channels_; }
  void fuse();
  void randomize_bn(std::uint64_t seed);
  std::vector<RepHDWConv<Scalar>>& units() noexcept { return units_; }

 private:
  Index channels_;
  std::vector<RepHDWConv<Scalar>> units_;
};

extern template class Model<float>;
extern template class Model<double>;
extern template class DepthwiseStack<float>;
extern template class DepthwiseStack<double>;

}  // namespace maf
