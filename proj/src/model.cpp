#include "maf/model.hpp"

namespace maf {

void ModelConfig::validate() const {
  if (in_channels <= 0) throw ConfigError("in_channels: must be positive");
  if (stem_width <= 0) throw ConfigError("stem_width: must be positive");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] < 2) throw ConfigError("backbone.widths[" + std::to_string(i) + "]: must be >= 2");
    if (depths[i] < 1) throw ConfigError("backbone.depths[" + std::to_string(i) + "]: must be >= 1");
  }
  if (backbone_kernels.size() != 4) {
    throw ConfigError("backbone.kernels: expected 4 stages (P2..P5), got " +
                      std::to_string(backbone_kernels.size()));
  }
  for (std::size_t i = 0; i < backbone_kernels.size(); ++i) {
    const Index k = backbone_kernels[i];
    if (k <= 0 || k % 2 == 0) throw ConfigError("backbone.kernels[" + std::to_string(i) + "]: must be odd");
    if (i > 0 && k <= backbone_kernels[i - 1]) {
      throw ConfigError("backbone.kernels[" + std::to_string(i) + "]: must be strictly increasing");
    }
  }
  if (!(expansion > 0.0)) throw ConfigError("blocks.expansion: must be positive");
  try {
    resolved_neck().validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("neck: ") + e.what());
  }
  if (head_width <= 0) throw ConfigError("head.width: must be positive");
  if (head_kernel <= 0 || head_kernel % 2 == 0) throw ConfigError("head.kernel: must be odd");
  if (head_outputs <= 0) throw ConfigError("head.outputs: must be positive");
}

NeckConfig ModelConfig::resolved_neck() const {
  NeckConfig n = neck;
  n.expansion = expansion;
  n.use_elan = use_elan;
  n.use_rep = use_rep;
  n.use_large = use_large;
  return n;
}

template <typename Scalar>
Model<Scalar>::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  stem_ = ConvBn<Scalar>("backbone.stem", cfg_.in_channels, cfg_.stem_width, 3, 2, true, rng);
  Index prev = cfg_.stem_width;
  for (int i = 0; i < 4; ++i) {
    const std::string name = "backbone.p" + std::to_string(i + 2);
    const Index w = cfg_.widths[i];
    downs_[i] = ConvBn<Scalar>(name + ".down", prev, w, 3, 2, true, rng);
    HELANConfig hc;
    hc.in_channels = w;
    hc.out_channels = w;
    hc.hidden = w / 2;
    hc.n_bottlenecks = cfg_.depths[i];
    hc.use_elan = cfg_.use_elan;
    hc.bottleneck = BottleneckConfig{hc.hidden, cfg_.expansion, cfg_.backbone_kernels[i], cfg_.use_rep,
                                     cfg_.use_large};
    stages_[i] = HELAN<Scalar>(name + ".helan", hc, rng);
    prev = w;
  }
  neck_ = MAFPN<Scalar>("neck", cfg_.resolved_neck(), cfg_.widths, rng);
  for (int i = 0; i < 3; ++i) {
    heads_[i] = HeadStub<Scalar>("head.l" + std::to_string(i + 3), cfg_.neck.widths[i], cfg_.head_width,
                                 cfg_.head_kernel, cfg_.head_outputs, rng);
  }
}

template <typename Scalar>
void Model<Scalar>::check_input(const Shape& s) const {
  if (s.c != cfg_.in_channels) throw ShapeError("model", "input channels", cfg_.in_channels, s.c);
  if (s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("model", "input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                  " is not a positive multiple of 32");
  }
}

template <typename Scalar>
std::vector<std::string> Model<Scalar>::tap_names() {
  return {"stem", "P2", "P3", "P4", "P5", "P'5", "P'4", "P'3", "N3", "N4", "N5", "out3", "out4", "out5"};
}

template <typename Scalar>
typename TapModel<Scalar>::Taps Model<Scalar>::forward_features(const Var<Scalar>& x) {
  check_input(x.shape());
  typename TapModel<Scalar>::Taps taps;
  Var<Scalar> h = stem_.forward(x);
  taps.emplace_back("stem", h);
  std::array<Var<Scalar>, 4> p;
  for (int i = 0; i < 4; ++i) {
    h = stages_[i].forward(downs_[i].forward(h));
    p[i] = h;
    taps.emplace_back("P" + std::to_string(i + 2), h);
  }
  NeckOutputs<Scalar> o = neck_.forward(p[0], p[1], p[2], p[3]);
  taps.emplace_back("P'5", o.p5_td);
  taps.emplace_back("P'4", o.p4_td);
  taps.emplace_back("P'3", o.p3_td);
  taps.emplace_back("N3", o.n3);
  taps.emplace_back("N4", o.n4);
  taps.emplace_back("N5", o.n5);
  return taps;
}

template <typename Scalar>
typename TapModel<Scalar>::Taps Model<Scalar>::forward_taps(const Var<Scalar>& x) {
  auto taps = forward_features(x);
  const std::size_t n = taps.size();
  for (int i = 0; i < 3; ++i) {
    Var<Scalar> feat = taps[n - 3 + i].second;
    taps.emplace_back("out" + std::to_string(i + 3), heads_[i].forward(feat));
  }
  return taps;
}

template <typename Scalar>
std::array<Var<Scalar>, 3> Model<Scalar>::forward(const Var<Scalar>& x) {
  auto taps = forward_taps(x);
  const std::size_t n = taps.size();
  return {taps[n - 3].second, taps[n - 2].second, taps[n - 1].second};
}

template <typename Scalar>
void Model<Scalar>::fuse() {
  if (training_) throw StateError("model: cannot fuse while in training mode");
  for_each_rep([](RepHDWConv<Scalar>& r) {
    r.fuse();
    r.set_deploy(true);
  });
}

template <typename Scalar>
void Model<Scalar>::set_deploy(bool on) {
  for_each_rep([on](RepHDWConv<Scalar>& r) { r.set_deploy(on); });
}

template <typename Scalar>
void Model<Scalar>::set_training(bool on) {
  training_ = on;
  stem_.set_training(on);
  for (auto& d : downs_) d.set_training(on);
  for (auto& s : stages_) s.set_training(on);
  neck_.set_training(on);
  for (auto& h : heads_) h.set_training(on);
}

template <typename Scalar>
void Model<Scalar>::randomize_bn(std::uint64_t seed) {
  Rng rng(seed);
  stem_.randomize_bn(rng);
  for (int i = 0; i < 4; ++i) {
    downs_[i].randomize_bn(rng);
    stages_[i].randomize_bn(rng);
  }
  neck_.randomize_bn(rng);
  for (auto& h : heads_) h.randomize_bn(rng);
}

template <typename Scalar>
void Model<Scalar>::calibrate_bn(const Tensor<Scalar>& x) {
  auto is_stat = [](const std::string& name) {
    return name.ends_with(".running_mean") || name.ends_with(".running_var");
  };
  visit([&](const std::string& name, Var<Scalar>& v, bool) {
    if (is_stat(name)) v.mutable_value().data().setZero();
  });
  const bool was_training = training_;
  set_training(true);
  {
    NoGradGuard guard;
    forward(Var<Scalar>(x));
  }
  set_training(was_training);
  visit([&](const std::string& name, Var<Scalar>& v, bool) {
    if (is_stat(name)) v.mutable_value().data() /= Scalar(kBatchNormMomentum);
  });
}

template <typename Scalar>
void Model<Scalar>::visit(const Visitor<Scalar>& f) {
  stem_.visit(f);
  for (int i = 0; i < 4; ++i) {
    downs_[i].visit(f);
    stages_[i].visit(f);
  }
  neck_.visit(f);
  for (auto& h : heads_) h.visit(f);
}

template <typename Scalar>
std::vector<LayerInfo> Model<Scalar>::inventory() {
  std::vector<LayerInfo> out;
  stem_.inventory(out);
  for (int i = 0; i < 4; ++i) {
    downs_[i].inventory(out);
    stages_[i].inventory(out);
  }
  neck_.inventory(out);
  for (const auto& h : heads_) h.inventory(out);
  return out;
}

template <typename Scalar>
DepthwiseStack<Scalar>::DepthwiseStack(Index channels, Index depth, Index kernel, bool rep, std::uint64_t seed)
    : channels_(channels) {
  if (depth < 1) throw ConfigError("stack depth must be >= 1");
  Rng rng(seed);
  const std::vector<Index> small = (rep && kernel >= 5) ? default_small_kernels(kernel) : std::vector<Index>{};
  for (Index i = 0; i < depth; ++i) {
    units_.emplace_back("stack.layer" + std::to_string(i + 1), channels, kernel, small, rng);
  }
}

template <typename Scalar>
typename TapModel<Scalar>::Taps DepthwiseStack<Scalar>::forward_taps(const Var<Scalar>& x) {
  typename TapModel<Scalar>::Taps taps;
  Var<Scalar> h = x;
  for (std::size_t i = 0; i < units_.size(); ++i) {
    h = silu(units_[i].forward(h));
    taps.emplace_back("layer" + std::to_string(i + 1), h);
  }
  return taps;
}

template <typename Scalar>
void DepthwiseStack<Scalar>::fuse() {
  for (auto& u : units_) {
    u.fuse();
    u.set_deploy(true);
  }
}

template <typename Scalar>
void DepthwiseStack<Scalar>::randomize_bn(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& u : units_) u.randomize_bn(rng);
}

template class Model<float>;
template class Model<double>;
template class DepthwiseStack<float>;
template class DepthwiseStack<double>;

}  // namespace maf
