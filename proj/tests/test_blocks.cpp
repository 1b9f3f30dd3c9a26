#include <doctest.h>

#include "maf/blocks.hpp"
#include "maf/model.hpp"

using namespace maf;

namespace {

HELANConfig small_helan(bool elan) {
  HELANConfig cfg;
  cfg.in_channels = 6;
  cfg.out_channels = 10;
  cfg.hidden = 4;
  cfg.n_bottlenecks = 3;
  cfg.use_elan = elan;
  cfg.bottleneck = BottleneckConfig{4, 2.0, 7, true, true};
  return cfg;
}

}  // namespace

TEST_SUITE("blocks") {
  TEST_CASE("bottleneck with a zero shrink conv outputs zero") {
    Rng rng(1);
    InvertedBottleneck<double> b("b", BottleneckConfig{4, 2.0, 7, true, true}, rng);
    b.shrink().conv().weight().mutable_value() = TensorD(b.shrink().conv().weight().shape());
    const VarD y = b.forward(VarD(TensorD::normal({2, 4, 6, 6}, rng)));
    CHECK((y.value().data() == 0.0).all());
  }

  TEST_CASE("linear bottleneck with identity weights passes the input through") {
    Rng rng(2);
    InvertedBottleneck<double> b("b", BottleneckConfig{3, 1.0, 5, true, true}, rng);
    b.set_linear(true);
    TensorD eye({3, 3, 1, 1});
    for (Index c = 0; c < 3; ++c) eye(c, c, 0, 0) = 1.0;
    b.expand().conv().weight().mutable_value() = eye;
    b.shrink().conv().weight().mutable_value() = eye;
    auto& branches = b.rephdw().branches();
    for (std::size_t i = 0; i < branches.size(); ++i) {
      TensorD w(branches[i].weight.shape());
      if (i == 0)
        for (Index c = 0; c < 3; ++c) w(c, 0, 2, 2) = 1.0;
      branches[i].weight.mutable_value() = w;
    }
    const TensorD x = TensorD::normal({1, 3, 5, 5}, rng);
    const double bn_scale = std::pow(1.0 / std::sqrt(1.0 + 1e-5), 3);
    CHECK(max_abs_diff(b.forward(VarD(x)).value(), TensorD(x.shape(), x.data() * bn_scale)) <= 1e-12);
  }

  TEST_CASE("bottleneck equals its composed parts") {
    Rng rng(3);
    InvertedBottleneck<double> b("b", BottleneckConfig{4, 2.0, 7, true, true}, rng);
    b.randomize_bn(rng);
    const VarD x(TensorD::normal({2, 4, 8, 8}, rng));
    const VarD manual = b.shrink().forward(silu(b.rephdw().forward(b.expand().forward(x))));
    CHECK(max_abs_diff(b.forward(x).value(), manual.value()) == 0.0);
  }

  TEST_CASE("bottleneck widths and kernels follow the toggles") {
    BottleneckConfig c{8, 2.0, 9, true, true};
    CHECK(c.expanded() == 16);
    CHECK(c.depthwise_kernel() == 9);
    CHECK(c.small_kernels() == std::vector<Index>{7, 5, 3});
    c.use_rep = false;
    CHECK(c.small_kernels().empty());
    c.use_large = false;
    c.use_rep = true;
    CHECK(c.depthwise_kernel() == 5);
    CHECK(c.small_kernels() == std::vector<Index>{3});
    CHECK_THROWS_AS((BottleneckConfig{8, 0.5, 9, true, true}.validate()), ConfigError);
  }

  TEST_CASE("HELAN concat width") {
    Rng rng(4);
    for (bool elan : {true, false}) {
      HELAN<float> h("h", small_helan(elan), rng);
      const auto [y, cat] = h.forward_with_concat(VarF(TensorF::normal({1, 6, 8, 8}, rng)));
      CHECK(cat.shape().c == (elan ? (2 + 3) * 4 : 2 * 4));
      CHECK(y.shape() == Shape{1, 10, 8, 8});
    }
  }

  TEST_CASE("HELAN keeps the first half untouched") {
    Rng rng(5);
    HELAN<double> h("h", small_helan(true), rng);
    h.randomize_bn(rng);
    const VarD x(TensorD::normal({2, 6, 5, 5}, rng));
    const auto [y, cat] = h.forward_with_concat(x);
    const VarD pre = h.pw_in().forward(x);
    const Index sizes[] = {4, 4};
    const auto halves = split_channels(pre.value(), std::span<const Index>(sizes));
    const Index cat_sizes[] = {4, 16};
    CHECK(max_abs_diff(split_channels(cat.value(), std::span<const Index>(cat_sizes))[0], halves[0]) == 0.0);
  }

  TEST_CASE("every HELAN parameter receives gradient") {
    Rng rng(6);
    HELAN<double> h("h", small_helan(true), rng);
    h.randomize_bn(rng);
    const VarD x(TensorD::normal({2, 6, 5, 5}, rng), true);
    backward(sum(h.forward(x)));
    int with_grad = 0, total = 0;
    h.visit([&](const std::string& name, VarD& v, bool learnable) {
      if (!learnable) return;
      ++total;
      CAPTURE(name);
      CHECK(v.has_grad());
      with_grad += v.has_grad() && (v.grad().data() != 0.0).any() ? 1 : 0;
    });
    CHECK(with_grad == total);
    CHECK(x.has_grad());
  }

  TEST_CASE("block toggles show up in the model inventory") {
    ModelConfig base;
    auto rephdw = [](const ModelConfig& c) {
      Model<float> m = build_model<float>(c);
      std::vector<LayerInfo> out;
      for (const auto& l : m.inventory())
        if (l.kind == "rephdw" && l.stage() == "backbone") out.push_back(l);
      return out;
    };
    const auto full = rephdw(base);
    CHECK(full.size() == 7);
    for (const auto& l : full) CHECK(!l.small_kernels.empty() == (l.kernel >= 5));

    ModelConfig no_rep = base;
    no_rep.use_rep = false;
    for (const auto& l : rephdw(no_rep)) CHECK(l.small_kernels.empty());

    ModelConfig no_large = base;
    no_large.use_large = false;
    for (const auto& l : rephdw(no_large)) CHECK(l.kernel == 5);

    ModelConfig no_elan = base;
    no_elan.use_elan = false;
    Model<float> m = build_model<float>(no_elan);
    for (const auto& l : m.inventory())
      if (l.name == "backbone.p3.helan.pw_out.conv") CHECK(l.in_channels == 2 * 32);
  }
}
