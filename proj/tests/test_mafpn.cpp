#include <doctest.h>

#include <algorithm>

#include "maf/mafpn.hpp"
#include "maf/model.hpp"

using namespace maf;

namespace {

const char* kGoldenEdges =
    "P5 -> P'5 [projection]\n"
    "P3 -> P'4 [backbone-assist]\n"
    "P4 -> P'4 [same]\n"
    "P'5 -> P'4 [upsample]\n"
    "P2 -> P'3 [backbone-assist]\n"
    "P3 -> P'3 [same]\n"
    "P'4 -> P'3 [upsample]\n"
    "P2 -> P''3 [backbone-assist]\n"
    "P'3 -> P''3 [same]\n"
    "P'4 -> P''3 [cross-up]\n"
    "P'3 -> P''4 [cross-down]\n"
    "P''3 -> P''4 [bottom-up]\n"
    "P'4 -> P''4 [same]\n"
    "P'5 -> P''4 [cross-up]\n"
    "P'4 -> P''5 [cross-down]\n"
    "P''4 -> P''5 [bottom-up]\n"
    "P'5 -> P''5 [same]\n";

Index pw_in_width(Model<float>& m, const std::string& level) {
  for (const auto& l : m.inventory())
    if (l.name == "neck." + level + ".helan.pw_in.conv") return l.in_channels;
  return -1;
}

std::size_t count_kind(const std::vector<WiringEdge>& edges, const std::string& kind) {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [&](const WiringEdge& e) { return e.kind == kind; }));
}

}  // namespace

TEST_SUITE("mafpn") {
  TEST_CASE("SAF node concatenates assist, same and upsampled lanes") {
    Rng rng(1);
    auto node = make_saf_node<float>("saf", "P'3", 32, 64, 128, 32, rng);
    CHECK(node.out_channels() == 224);
    const VarF y = node.forward({VarF(TensorF::normal({1, 32, 16, 16}, rng)), VarF(TensorF::normal({1, 64, 8, 8}, rng)),
                                 VarF(TensorF::normal({1, 128, 4, 4}, rng))});
    CHECK(y.shape() == Shape{1, 224, 8, 8});
  }

  TEST_CASE("SAF lanes are isolated") {
    Rng rng(2);
    auto node = make_saf_node<double>("saf", "P'4", 2, 3, 4, 2, rng);
    node.randomize_bn(rng);
    std::vector<VarD> in{VarD(TensorD::normal({1, 2, 8, 8}, rng)), VarD(TensorD::normal({1, 3, 4, 4}, rng)),
                         VarD(TensorD::normal({1, 4, 2, 2}, rng))};
    const TensorD base = node.forward(in).value();
    in[2] = VarD(TensorD::normal({1, 4, 2, 2}, rng));
    const TensorD changed = node.forward(in).value();
    const Index sizes[] = {2, 3, 4};
    const auto a = split_channels(base, std::span<const Index>(sizes));
    const auto b = split_channels(changed, std::span<const Index>(sizes));
    CHECK(max_abs_diff(a[0], b[0]) == 0.0);
    CHECK(max_abs_diff(a[1], b[1]) == 0.0);
    CHECK(max_abs_diff(a[2], b[2]) > 0.0);
    const Index up_sizes[] = {2, 3, 4};
    const auto up = split_channels(changed, std::span<const Index>(up_sizes))[2];
    CHECK(max_abs_diff(up, upsample_nearest2x(in[2].value())) == 0.0);
  }

  TEST_CASE("SAF node rejects lanes off the grid") {
    Rng rng(3);
    auto node = make_saf_node<float>("saf", "P'4", 2, 3, 4, 2, rng);
    CHECK_THROWS_AS(node.forward({VarF(TensorF::ones({1, 2, 8, 8})), VarF(TensorF::ones({1, 3, 4, 4})),
                                  VarF(TensorF::ones({1, 4, 4, 4}))}),
                    ShapeError);
    CHECK_THROWS_AS(node.forward({VarF(TensorF::ones({1, 2, 8, 8}))}), ShapeError);
  }

  TEST_CASE("AAF node widths") {
    Rng rng(4);
    auto node = make_aaf_node<float>("aaf", "P''4", 8, 8, 16, 32, 16, rng);
    CHECK(node.out_channels() == 4 * 16);
    CHECK_THROWS_AS(make_aaf_node<float>("aaf", "P''4", 8, 8, 12, 32, 16, rng), ConfigError);

    Model<float> m = build_model<float>(ModelConfig{});
    const auto w = m.config().neck.widths;
    CHECK(pw_in_width(m, "n4") == 4 * w[1]);
    CHECK(pw_in_width(m, "n5") == 3 * w[2]);
  }

  TEST_CASE("golden wiring") {
    Model<float> m = build_model<float>(ModelConfig{});
    CHECK(format_edges(m.neck_edges()) == kGoldenEdges);
  }

  TEST_CASE("every output level draws on at least three backbone levels") {
    Model<float> m = build_model<float>(ModelConfig{});
    for (const char* node : {"P''3", "P''4", "P''5"}) {
      CAPTURE(node);
      CHECK(backbone_lineage(m.neck_edges(), node).size() >= 3);
    }
    CHECK(backbone_lineage(m.neck_edges(), "P''3").count("P2") == 1);
  }

  TEST_CASE("P2 only feeds fusion nodes") {
    Model<float> m = build_model<float>(ModelConfig{});
    for (const auto& e : m.neck_edges()) CHECK(e.dst != "P2");
    const auto taps = Model<float>::tap_names();
    const std::vector<std::string> outs(taps.end() - 3, taps.end());
    CHECK(std::find(outs.begin(), outs.end(), "P2") == outs.end());
  }

  TEST_CASE("disabling SAF removes the backbone-assist lanes") {
    ModelConfig cfg;
    cfg.neck.enable_saf = false;
    Model<float> m = build_model<float>(cfg);
    CHECK(count_kind(m.neck_edges(), "backbone-assist") == 0);
    CHECK(count_kind(m.neck_edges(), "cross-up") == 2);
    const auto w = cfg.widths;
    CHECK(pw_in_width(m, "p3_td") == w[1] + cfg.neck.widths[1]);
    CHECK(pw_in_width(m, "n3") == 2 * cfg.neck.widths[0]);
  }

  TEST_CASE("disabling AAF removes the cross-pathway lanes") {
    ModelConfig cfg;
    cfg.neck.enable_aaf = false;
    Model<float> m = build_model<float>(cfg);
    CHECK(count_kind(m.neck_edges(), "cross-up") == 0);
    CHECK(count_kind(m.neck_edges(), "cross-down") == 0);
    CHECK(count_kind(m.neck_edges(), "backbone-assist") == 3);
    CHECK(pw_in_width(m, "n4") == 2 * cfg.neck.widths[1]);
    CHECK(pw_in_width(m, "n5") == 2 * cfg.neck.widths[2]);
  }

  TEST_CASE("neck output shapes") {
    ModelConfig cfg;
    Model<float> m = build_model<float>(cfg);
    NoGradGuard guard;
    Rng rng(5);
    const auto y = m.forward_taps(VarF(TensorF::normal({1, 3, 64, 64}, rng)));
    for (const auto& [name, v] : y) {
      if (name == "N3") CHECK(v.shape() == Shape{1, 64, 8, 8});
      if (name == "N4") CHECK(v.shape() == Shape{1, 128, 4, 4});
      if (name == "N5") CHECK(v.shape() == Shape{1, 256, 2, 2});
    }
  }
}
