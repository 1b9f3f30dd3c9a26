#include <doctest.h>

#include <map>

#include "maf/analysis.hpp"

using namespace maf;

namespace {

CostReport single_conv(const ConvSpec& spec, Index h, Index w) {
  Rng rng(0);
  Conv<float> conv("c", spec, rng);
  return trace_costs<float>([&](const VarF& x) { conv.forward(x); }, spec.in_channels, h, w);
}

}  // namespace

TEST_SUITE("analysis") {
  TEST_CASE("conv counting example") {
    const CostReport r = single_conv(ConvSpec{16, 32, 3, 1, -1, 1, true}, 64, 64);
    CHECK(r.total_params() == 4640);
    CHECK(r.total_macs() == 18874368);
    CHECK(r.total_flops() == 2 * 18874368);
  }

  TEST_CASE("depthwise and strided counting") {
    CHECK(single_conv(depthwise_spec(8, 5), 16, 16).total_macs() == 8 * 25 * 256);
    CHECK(single_conv(ConvSpec{4, 8, 3, 2}, 16, 16).total_macs() == 4 * 8 * 9 * 64);
  }

  TEST_CASE("fused RepHDW unit parameter count") {
    Rng rng(1);
    RepHDWConv<float> r("u", 32, 7, {5, 3}, rng);
    r.fuse();
    r.set_deploy(true);
    const CostReport c = trace_costs<float>([&](const VarF& x) { r.forward(x); }, 32, 16, 16);
    CHECK(c.total_params() == 1600);
  }

  TEST_CASE("batch norm counts 2C parameters and 2C buffers") {
    BatchNorm<float> bn("bn", 12);
    const CostReport c = trace_costs<float>([&](const VarF& x) { bn.forward(x); }, 12, 8, 8);
    CHECK(c.total_params() == 24);
    CHECK(c.total_buffers() == 24);
    CHECK(c.total_macs() == 0);
  }

  TEST_CASE("fusion parameter delta matches the closed form") {
    Model<float> m = build_model<float>(ModelConfig{});
    const Index before = count_costs(m, 320, 320).total_params();
    const Index delta = fusion_param_delta(m);
    m.fuse();
    const CostReport after = count_costs(m, 320, 320);
    CHECK(before - after.total_params() == delta);
    CHECK(delta > 0);
  }

  TEST_CASE("conv MACs scale with the input area") {
    Model<float> m = build_model<float>(ModelConfig{});
    const CostReport a = count_costs(m, 320, 320), b = count_costs(m, 640, 640);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      CAPTURE(a.rows[i].name);
      CHECK(b.rows[i].macs == 4 * a.rows[i].macs);
      CHECK(b.rows[i].params == a.rows[i].params);
    }
  }

  TEST_CASE("kernel schedule of the default model") {
    Model<float> m = build_model<float>(ModelConfig{});
    const KernelSchedule k = kernel_schedule(m.inventory());
    CHECK(k.backbone == std::vector<Index>{3, 5, 7, 9});
    CHECK(k.neck == std::vector<Index>{5, 7, 9});
    CHECK(k.head == std::vector<Index>{7});
  }

  TEST_CASE("ERF radius of synthetic maps") {
    Eigen::ArrayXXd dirac = Eigen::ArrayXXd::Zero(9, 9);
    dirac(4, 4) = 1.0;
    CHECK(erf_radius(dirac) == 0.0);
    CHECK(erf_support_radius(dirac) == 0);
    Eigen::ArrayXXd box = Eigen::ArrayXXd::Zero(9, 9);
    box.block(3, 3, 3, 3) = 1.0 / 9.0;
    CHECK(erf_radius(box) == 1.0);
    CHECK(erf_support_radius(box) == 1);
    CHECK(erf_radius(Eigen::ArrayXXd::Zero(5, 5)) == 0.0);
  }

  TEST_CASE("ERF support grows by the kernel half-width per layer") {
    for (Index depth : {1, 2}) {
      DepthwiseStack<double> s(1, depth, 3, false, 0);
      const auto map = erf_map<double>(s, "layer" + std::to_string(depth), TensorD::ones({1, 1, 16, 16}));
      CHECK(erf_support_radius(map) == depth);
      CHECK(map.sum() == doctest::Approx(1.0));
    }
  }

  TEST_CASE("ERF radius does not shrink with depth") {
    DepthwiseStack<float> s(2, 4, 5, true, 1);
    s.randomize_bn(2);
    s.fuse();
    double prev = -1.0;
    for (int i = 1; i <= 4; ++i) {
      const auto map = erf_map<float>(s, "layer" + std::to_string(i), TensorF::ones({1, 2, 48, 48}));
      const double r = erf_radius(map);
      CHECK(r >= prev);
      prev = r;
    }
  }

  TEST_CASE("unknown tap") {
    DepthwiseStack<float> s(1, 1, 3, false, 0);
    CHECK_THROWS_AS(erf_map<float>(s, "layer9", TensorF::ones({1, 1, 8, 8})), ConfigError);
  }

  TEST_CASE("ablation presets") {
    ModelConfig base;
    const auto t3 = run_ablation("table3", base, 320);
    REQUIRE(t3.size() == 4);
    for (std::size_t i = 1; i < t3.size(); ++i) CHECK(t3[i].train_params > t3[i - 1].train_params);
    const auto t2 = run_ablation("table2", base, 320);
    REQUIRE(t2.size() == 6);
    CHECK(t2[1].fused_params == t2[2].fused_params);
    CHECK(t2[2].train_params > t2[1].train_params);
    CHECK(run_ablation("table5", base, 320).size() == 4);
    CHECK_THROWS_AS(run_ablation("table9", base, 320), ConfigError);
  }
}
