#pragma once

// Multi-branch auxiliary FPN neck.
//
// Pathway 1 (top-down) builds P'n with superficial assisted fusion:
//   P'n  = HELAN(concat(silu(C(Down(P_{n-1}))), P_n, U(P'_{n+1})))
// Pathway 2 (bottom-up) builds P''n with advanced assisted fusion:
//   P''n = HELAN(concat(silu(C(Down(P'_{n-1}))), silu(C(Down(P''_{n-1}))), P'_n, C(U(P'_{n+1}))))
// Down is a 3x3 stride-2 conv + BN, C a 1x1 conv + BN, U nearest 2x upsampling.

#include <array>
#include <set>
#include <string>
#include <vector>

#include "maf/blocks.hpp"

namespace maf {

enum class LaneKind {
  BackboneAssist,  // silu(C(Down(backbone tap))), SAF
  Same,            // same-level input passed through
  Upsample,        // U(x)
  CrossDown,       // silu(C(Down(P'_{n-1}))), AAF cross-pathway
  BottomUp,        // silu(C(Down(P''_{n-1}))), plain PAFPN path
  CrossUp,         // C(U(P'_{n+1})), AAF cross-pathway
  Projection,      // C(x)
};

const char* lane_kind_name(LaneKind kind) noexcept;

/// One input lane of a fusion node.
template <typename Scalar>
class Lane {
 public:
  Lane() = default;
  Lane(const std::string& name, LaneKind kind, Index in, Index out, Rng& rng)
      : kind_(kind), in_(in), out_(out) {
    switch (kind_) {
      case LaneKind::BackboneAssist:
      case LaneKind::CrossDown:
      case LaneKind::BottomUp:
        down_ = ConvBn<Scalar>(name + ".down", in, in, 3, 2, false, rng);
        proj_ = ConvBn<Scalar>(name + ".c", in, out, 1, 1, false, rng);
        break;
      case LaneKind::CrossUp:
      case LaneKind::Projection:
        proj_ = ConvBn<Scalar>(name + ".c", in, out, 1, 1, false, rng);
        break;
      case LaneKind::Same:
      case LaneKind::Upsample:
        if (in != out) throw ConfigError(name + ": pass-through lane cannot change width");
        break;
    }
  }

  /// Spatial scale of the input relative to the node's grid: 2, 1 or 1/2 (as -2).
  int input_scale() const noexcept {
    switch (kind_) {
      case LaneKind::BackboneAssist:
      case LaneKind::CrossDown:
      case LaneKind::BottomUp:
        return 2;
      case LaneKind::Upsample:
      case LaneKind::CrossUp:
        return -2;
      default:
        return 1;
    }
  }

  Var<Scalar> forward(const Var<Scalar>& x, bool activations = true) {
    if (x.shape().c != in_) throw ShapeError(std::string("lane ") + lane_kind_name(kind_), "channels", in_, x.shape().c);
    switch (kind_) {
      case LaneKind::BackboneAssist:
      case LaneKind::CrossDown:
      case LaneKind::BottomUp: {
        Var<Scalar> y = proj_.forward(down_.forward(x, activations), activations);
        return activations ? silu(y) : y;
      }
      case LaneKind::CrossUp:
        return proj_.forward(upsample_nearest2x(x), activations);
      case LaneKind::Projection:
        return proj_.forward(x, activations);
      case LaneKind::Upsample:
        return upsample_nearest2x(x);
      case LaneKind::Same:
        break;
    }
    return x;
  }

  LaneKind kind() const noexcept { return kind_; }
  Index in_channels() const noexcept { return in_; }
  Index out_channels() const noexcept { return out_; }
  bool has_down() const noexcept { return input_scale() == 2; }
  bool has_proj() const noexcept { return kind_ != LaneKind::Same && kind_ != LaneKind::Upsample; }
  ConvBn<Scalar>& down() noexcept { return down_; }
  ConvBn<Scalar>& proj() noexcept { return proj_; }

  void visit(const Visitor<Scalar>& f) {
    if (has_down()) down_.visit(f);
    if (has_proj()) proj_.visit(f);
  }
  void inventory(std::vector<LayerInfo>& out) const {
    if (has_down()) down_.inventory(out);
    if (has_proj()) proj_.inventory(out);
  }
  void set_training(bool on) {
    if (has_down()) down_.set_training(on);
    if (has_proj()) proj_.set_training(on);
  }
  void randomize_bn(Rng& rng) {
    if (has_down()) down_.randomize_bn(rng);
    if (has_proj()) proj_.randomize_bn(rng);
  }

 private:
  LaneKind kind_ = LaneKind::Same;
  Index in_ = 0;
  Index out_ = 0;
  ConvBn<Scalar> down_;
  ConvBn<Scalar> proj_;
};

/// Concatenation of lanes on a common grid; the caller feeds the result into
/// a HELAN block.
template <typename Scalar>
class FusionNode {
 public:
  struct LaneDef {
    std::string source;
    LaneKind kind;
    Index in;
    Index out;
  };

  FusionNode() = default;
  FusionNode(std::string name, std::string level, const std::vector<LaneDef>& lanes, Rng& rng)
      : name_(std::move(name)), level_(std::move(level)) {
    if (lanes.empty()) throw ConfigError(name_ + ": fusion node needs at least one lane");
    for (std::size_t i = 0; i < lanes.size(); ++i) {
      sources_.push_back(lanes[i].source);
      lanes_.emplace_back(name_ + ".lane" + std::to_string(i), lanes[i].kind, lanes[i].in, lanes[i].out, rng);
    }
  }

  Index out_channels() const {
    Index c = 0;
    for (const auto& l : lanes_) c += l.out_channels();
    return c;
  }

  /// `inputs` in lane order. Each input's spatial size must sit at the lane's
  /// scale relative to the node grid.
  Var<Scalar> forward(const std::vector<Var<Scalar>>& inputs, bool activations = true) {
    if (inputs.size() != lanes_.size()) {
      throw ShapeError(name_, "input count", static_cast<Index>(lanes_.size()), static_cast<Index>(inputs.size()));
    }
    Index h = -1, w = -1;
    for (std::size_t i = 0; i < lanes_.size(); ++i) {
      const Shape& s = inputs[i].shape();
      const int sc = lanes_[i].input_scale();
      const Index gh = sc == 2 ? s.h / 2 : (sc == -2 ? s.h * 2 : s.h);
      const Index gw = sc == 2 ? s.w / 2 : (sc == -2 ? s.w * 2 : s.w);
      if ((sc == 2 && (s.h % 2 != 0 || s.w % 2 != 0))) {
        throw ShapeError(name_, "level " + level_ + ": lane from " + sources_[i] + " has odd extent " + s.str());
      }
      if (h < 0) {
        h = gh;
        w = gw;
      } else if (gh != h || gw != w) {
        throw ShapeError(name_, "level " + level_ + ": lane from " + sources_[i] + " with shape " + s.str() +
                                    " does not land on the " + std::to_string(h) + "x" + std::to_string(w) +
                                    " grid");
      }
    }
    std::vector<Var<Scalar>> outs;
    for (std::size_t i = 0; i < lanes_.size(); ++i) outs.push_back(lanes_[i].forward(inputs[i], activations));
    return concat_channels(outs);
  }

  const std::string& level() const noexcept { return level_; }
  const std::vector<std::string>& sources() const noexcept { return sources_; }
  std::vector<Lane<Scalar>>& lanes() noexcept { return lanes_; }
  const std::vector<Lane<Scalar>>& lanes() const noexcept { return lanes_; }

  void visit(const Visitor<Scalar>& f) {
    for (auto& l : lanes_) l.visit(f);
  }
  void inventory(std::vector<LayerInfo>& out) const {
    for (const auto& l : lanes_) l.inventory(out);
  }
  void set_training(bool on) {
    for (auto& l : lanes_) l.set_training(on);
  }
  void randomize_bn(Rng& rng) {
    for (auto& l : lanes_) l.randomize_bn(rng);
  }

 private:
  std::string name_;
  std::string level_;
  std::vector<std::string> sources_;
  std::vector<Lane<Scalar>> lanes_;
};

/// SAF node: concat(silu(C(Down(shallow))), same, U(deep)).
template <typename Scalar>
FusionNode<Scalar> make_saf_node(const std::string& name, const std::string& level, Index shallow_ch,
                                 Index same_ch, Index deep_ch, Index assist_width, Rng& rng) {
  return FusionNode<Scalar>(name, level,
                            {{"shallow", LaneKind::BackboneAssist, shallow_ch, assist_width},
                             {"same", LaneKind::Same, same_ch, same_ch},
                             {"deep", LaneKind::Upsample, deep_ch, deep_ch}},
                            rng);
}

/// AAF node: concat(silu(C(Down(prev1))), silu(C(Down(prev2))), same, C(U(deep))),
/// every lane projected to `width` (`same` must already have it).
template <typename Scalar>
FusionNode<Scalar> make_aaf_node(const std::string& name, const std::string& level, Index prev1_ch,
                                 Index prev2_ch, Index same_ch, Index deep_ch, Index width, Rng& rng) {
  if (same_ch != width) throw ConfigError(name + ": AAF same-level lane width must equal the lane width");
  return FusionNode<Scalar>(name, level,
                            {{"prev1", LaneKind::CrossDown, prev1_ch, width},
                             {"prev2", LaneKind::BottomUp, prev2_ch, width},
                             {"same", LaneKind::Same, same_ch, same_ch},
                             {"deep", LaneKind::CrossUp, deep_ch, width}},
                            rng);
}

struct NeckConfig {
  std::array<Index, 3> widths{64, 128, 256};  // P3, P4, P5 lanes (both pathways)
  double assist_ratio = 0.5;                  // SAF assist lane = ratio * lane width
  std::array<Index, 3> kernels{5, 7, 9};      // HELAN kernel per level P3, P4, P5
  bool enable_saf = true;
  bool enable_aaf = true;
  Index n_bottlenecks = 2;
  double expansion = 2.0;
  bool use_elan = true;
  bool use_rep = true;
  bool use_large = true;

  Index assist_width(int level_index) const {
    return std::max<Index>(1, static_cast<Index>(std::lround(assist_ratio * static_cast<double>(widths[level_index]))));
  }
  void validate() const;
};

/// Wiring edge `src -> dst [kind]`.
struct WiringEdge {
  std::string src;
  std::string dst;
  std::string kind;
};

template <typename Scalar>
struct NeckOutputs {
  Var<Scalar> p5_td, p4_td, p3_td;  // P'5, P'4, P'3
  Var<Scalar> n3, n4, n5;           // P''3, P''4, P''5
};

/// Lineage of backbone levels ("P2".."P5") feeding `node` through `edges`.
std::set<std::string> backbone_lineage(const std::vector<WiringEdge>& edges, const std::string& node);

/// Text dump, one `src -> dst [kind]` per line.
std::string format_edges(const std::vector<WiringEdge>& edges);

template <typename Scalar>
class MAFPN {
 public:
  MAFPN() = default;
  /// `backbone` = channel widths of P2..P5.
  MAFPN(const std::string& name, const NeckConfig& cfg, const std::array<Index, 4>& backbone, Rng& rng)
      : cfg_(cfg), backbone_(backbone) {
    cfg_.validate();
    const auto [w3, w4, w5] = cfg_.widths;
    using LD = typename FusionNode<Scalar>::LaneDef;

    p5_proj_ = Lane<Scalar>(name + ".p5_td", LaneKind::Projection, backbone[3], w5, rng);
    add_edge("P5", "P'5", LaneKind::Projection);

    // Pathway 1.
    std::vector<LD> l4, l3;
    if (cfg_.enable_saf) l4.push_back({"P3", LaneKind::BackboneAssist, backbone[1], cfg_.assist_width(1)});
    l4.push_back({"P4", LaneKind::Same, backbone[2], backbone[2]});
    l4.push_back({"P'5", LaneKind::Upsample, w5, w5});
    if (cfg_.enable_saf) l3.push_back({"P2", LaneKind::BackboneAssist, backbone[0], cfg_.assist_width(0)});
    l3.push_back({"P3", LaneKind::Same, backbone[1], backbone[1]});
    l3.push_back({"P'4", LaneKind::Upsample, w4, w4});
    build_level(name + ".p4_td", "P'4", l4, w4, cfg_.kernels[1], fuse_p4_td_, helan_p4_td_, rng);
    build_level(name + ".p3_td", "P'3", l3, w3, cfg_.kernels[0], fuse_p3_td_, helan_p3_td_, rng);

    // Pathway 2.
    std::vector<LD> m3, m4, m5;
    if (cfg_.enable_saf) m3.push_back({"P2", LaneKind::BackboneAssist, backbone[0], w3});
    m3.push_back({"P'3", LaneKind::Same, w3, w3});
    if (cfg_.enable_aaf) m3.push_back({"P'4", LaneKind::CrossUp, w4, w3});
    if (cfg_.enable_aaf) m4.push_back({"P'3", LaneKind::CrossDown, w3, w4});
    m4.push_back({"P''3", LaneKind::BottomUp, w3, w4});
    m4.push_back({"P'4", LaneKind::Same, w4, w4});
    if (cfg_.enable_aaf) m4.push_back({"P'5", LaneKind::CrossUp, w5, w4});
    if (cfg_.enable_aaf) m5.push_back({"P'4", LaneKind::CrossDown, w4, w5});
    m5.push_back({"P''4", LaneKind::BottomUp, w4, w5});
    m5.push_back({"P'5", LaneKind::Same, w5, w5});
    build_level(name + ".n3", "P''3", m3, w3, cfg_.kernels[0], fuse_n3_, helan_n3_, rng);
    build_level(name + ".n4", "P''4", m4, w4, cfg_.kernels[1], fuse_n4_, helan_n4_, rng);
    build_level(name + ".n5", "P''5", m5, w5, cfg_.kernels[2], fuse_n5_, helan_n5_, rng);
    check_widths();
  }

  NeckOutputs<Scalar> forward(const Var<Scalar>& p2, const Var<Scalar>& p3, const Var<Scalar>& p4,
                              const Var<Scalar>& p5) {
    const std::array<const Var<Scalar>*, 4> taps{&p2, &p3, &p4, &p5};
    for (int i = 0; i < 4; ++i) {
      if (taps[i]->shape().c != backbone_[i]) {
        throw ShapeError("mafpn", "P" + std::to_string(i + 2) + " channels", backbone_[i], taps[i]->shape().c);
      }
      if (i > 0 && (taps[i - 1]->shape().h != 2 * taps[i]->shape().h ||
                    taps[i - 1]->shape().w != 2 * taps[i]->shape().w)) {
        throw ShapeError("mafpn", "P" + std::to_string(i + 1) + " " + taps[i - 1]->shape().str() +
                                      " is not twice the resolution of P" + std::to_string(i + 2) + " " +
                                      taps[i]->shape().str());
      }
    }
    NeckOutputs<Scalar> o;
    o.p5_td = p5_proj_.forward(p5);
    std::vector<Var<Scalar>> in4, in3;
    if (cfg_.enable_saf) in4.push_back(p3);
    in4.push_back(p4);
    in4.push_back(o.p5_td);
    o.p4_td = helan_p4_td_.forward(fuse_p4_td_.forward(in4));
    if (cfg_.enable_saf) in3.push_back(p2);
    in3.push_back(p3);
    in3.push_back(o.p4_td);
    o.p3_td = helan_p3_td_.forward(fuse_p3_td_.forward(in3));

    std::vector<Var<Scalar>> m3, m4, m5;
    if (cfg_.enable_saf) m3.push_back(p2);
    m3.push_back(o.p3_td);
    if (cfg_.enable_aaf) m3.push_back(o.p4_td);
    o.n3 = helan_n3_.forward(fuse_n3_.forward(m3));
    if (cfg_.enable_aaf) m4.push_back(o.p3_td);
    m4.push_back(o.n3);
    m4.push_back(o.p4_td);
    if (cfg_.enable_aaf) m4.push_back(o.p5_td);
    o.n4 = helan_n4_.forward(fuse_n4_.forward(m4));
    if (cfg_.enable_aaf) m5.push_back(o.p4_td);
    m5.push_back(o.n4);
    m5.push_back(o.p5_td);
    o.n5 = helan_n5_.forward(fuse_n5_.forward(m5));
    return o;
  }

  const std::vector<WiringEdge>& edges() const noexcept { return edges_; }
  const NeckConfig& config() const noexcept { return cfg_; }

  void visit(const Visitor<Scalar>& f) {
    p5_proj_.visit(f);
    for_each_node([&](FusionNode<Scalar>& n, HELAN<Scalar>& h) {
      n.visit(f);
      h.visit(f);
    });
  }
  void inventory(std::vector<LayerInfo>& out) {
    p5_proj_.inventory(out);
    for_each_node([&](FusionNode<Scalar>& n, HELAN<Scalar>& h) {
      n.inventory(out);
      h.inventory(out);
    });
  }
  template <typename Fn>
  void for_each_rep(Fn&& fn) {
    for_each_node([&](FusionNode<Scalar>&, HELAN<Scalar>& h) { h.for_each_rep(fn); });
  }
  void set_training(bool on) {
    p5_proj_.set_training(on);
    for_each_node([&](FusionNode<Scalar>& n, HELAN<Scalar>& h) {
      n.set_training(on);
      h.set_training(on);
    });
  }
  void randomize_bn(Rng& rng) {
    p5_proj_.randomize_bn(rng);
    for_each_node([&](FusionNode<Scalar>& n, HELAN<Scalar>& h) {
      n.randomize_bn(rng);
      h.randomize_bn(rng);
    });
  }

  /// Fusion nodes keyed by output level ("P'4", "P'3", "P''3", "P''4", "P''5").
  FusionNode<Scalar>& node(const std::string& level) {
    for (auto* n : {&fuse_p4_td_, &fuse_p3_td_, &fuse_n3_, &fuse_n4_, &fuse_n5_})
      if (n->level() == level) return *n;
    throw ConfigError("mafpn: unknown level " + level);
  }

 private:
  template <typename Fn>
  void for_each_node(Fn&& fn) {
    fn(fuse_p4_td_, helan_p4_td_);
    fn(fuse_p3_td_, helan_p3_td_);
    fn(fuse_n3_, helan_n3_);
    fn(fuse_n4_, helan_n4_);
    fn(fuse_n5_, helan_n5_);
  }

  void add_edge(const std::string& src, const std::string& dst, LaneKind kind) {
    edges_.push_back({src, dst, lane_kind_name(kind)});
  }

  void build_level(const std::string& name, const std::string& level,
                   const std::vector<typename FusionNode<Scalar>::LaneDef>& lanes, Index width, Index kernel,
                   FusionNode<Scalar>& node, HELAN<Scalar>& helan, Rng& rng) {
    node = FusionNode<Scalar>(name + ".fuse", level, lanes, rng);
    for (const auto& l : lanes) add_edge(l.source, level, l.kind);
    HELANConfig hc;
    hc.in_channels = node.out_channels();
    hc.out_channels = width;
    hc.hidden = std::max<Index>(1, width / 2);
    hc.n_bottlenecks = cfg_.n_bottlenecks;
    hc.use_elan = cfg_.use_elan;
    hc.bottleneck = BottleneckConfig{hc.hidden, cfg_.expansion, kernel, cfg_.use_rep, cfg_.use_large};
    helan = HELAN<Scalar>(name + ".helan", hc, rng);
  }

  void check_widths() const {
    if (cfg_.enable_aaf) {
      for (const auto* n : {&fuse_n3_, &fuse_n4_, &fuse_n5_}) {
        const Index w = n->lanes().front().out_channels();
        for (const auto& l : n->lanes())
          if (l.out_channels() != w) throw ConfigError("mafpn: unequal lane widths at " + n->level());
      }
    }
  }

  NeckConfig cfg_;
  std::array<Index, 4> backbone_{};
  Lane<Scalar> p5_proj_;
  FusionNode<Scalar> fuse_p4_td_, fuse_p3_td_, fuse_n3_, fuse_n4_, fuse_n5_;
  HELAN<Scalar> helan_p4_td_, helan_p3_td_, helan_n3_, helan_n4_, helan_n5_;
  std::vector<WiringEdge> edges_;
};

}  // namespace maf
