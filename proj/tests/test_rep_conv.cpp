#include <doctest.h>

#include "maf/rep_conv.hpp"
#include "oracles.hpp"

using namespace maf;

namespace {

/// Branch path rebuilt from the oracle conv and BN.
TensorD branch_oracle(RepHDWConv<double>& r, const TensorD& x) {
  TensorD out(x.shape());
  for (auto& b : r.branches()) {
    const ConvSpec spec = depthwise_spec(r.channels(), b.kernel);
    const TensorD y = oracle::conv2d<double>(x, b.weight.value(), nullptr, spec);
    out = oracle::add(out, oracle::batchnorm(y, b.bn.params()));
  }
  return out;
}

}  // namespace

TEST_SUITE("rep_conv") {
  TEST_CASE("default small kernels") {
    CHECK(default_small_kernels(9) == std::vector<Index>{7, 5, 3});
    CHECK(default_small_kernels(5) == std::vector<Index>{3});
    CHECK_THROWS_AS(default_small_kernels(3), ConfigError);
  }

  TEST_CASE("kernel set validation") {
    const Index ok[] = {5, 3};
    CHECK_NOTHROW(validate_kernel_set(7, ok));
    const Index even[] = {4};
    CHECK_THROWS_AS(validate_kernel_set(7, even), ConfigError);
    const Index big[] = {7};
    CHECK_THROWS_AS(validate_kernel_set(7, big), ConfigError);
    const Index unordered[] = {3, 5};
    CHECK_THROWS_AS(validate_kernel_set(7, unordered), ConfigError);
    CHECK_THROWS_AS(validate_kernel_set(6, {}), ConfigError);
  }

  TEST_CASE("fold_bn examples") {
    TensorD w = TensorD::constant({1, 1, 1, 1}, 3.0);
    BatchNormParams<double> bn = BatchNormParams<double>::identity(1, 0.0);
    bn.gamma << 2.0;
    bn.beta << 1.0;
    bn.running_mean << 0.5;
    bn.running_var << 4.0;
    const auto [wf, bf] = fold_bn(w, bn);
    CHECK(wf[0] == doctest::Approx(3.0));
    CHECK(bf[0] == doctest::Approx(0.5));

    Rng rng(1);
    BatchNormParams<double> r = BatchNormParams<double>::identity(4);
    for (Index c = 0; c < 4; ++c) {
      r.gamma[c] = 0.5 + 0.25 * static_cast<double>(c);
      r.beta[c] = -0.1 * static_cast<double>(c);
      r.running_mean[c] = 0.3 - 0.2 * static_cast<double>(c);
      r.running_var[c] = 0.5 + static_cast<double>(c);
    }
    const ConvSpec spec = depthwise_spec(4, 5);
    const TensorD x = TensorD::normal({2, 4, 9, 9}, rng);
    const TensorD wr = TensorD::normal(spec.weight_shape(), rng);
    const auto [wr_f, br_f] = fold_bn(wr, r);
    const ConvSpec biased = depthwise_spec(4, 5, true);
    CHECK(max_abs_diff(conv2d<double>(x, wr_f, &br_f, biased), batchnorm_infer<double>(conv2d<double>(x, wr, spec), r)) <=
          1e-12);
  }

  TEST_CASE("pad_kernel centers the small kernel") {
    TensorF w = TensorF::ones({2, 1, 3, 3});
    const TensorF p = pad_kernel(w, 7);
    CHECK(p.shape() == Shape{2, 1, 7, 7});
    CHECK(p.data().sum() == 18.0f);
    for (Index i = 0; i < 7; ++i)
      for (Index j = 0; j < 7; ++j) {
        const bool inside = i >= 2 && i <= 4 && j >= 2 && j <= 4;
        CHECK(p(1, 0, i, j) == (inside ? 1.0f : 0.0f));
      }
    CHECK_THROWS_AS(pad_kernel(w, 4), ConfigError);
    CHECK_THROWS_AS(pad_kernel(TensorF::ones({1, 1, 7, 7}), 5), ConfigError);
  }

  TEST_CASE("zero large kernel plus a 3x3 Dirac branch gives a centered Dirac") {
    Rng rng(2);
    RepHDWConv<double> r("u", 2, 7, {3}, rng);
    r.branches()[0].weight.mutable_value() = TensorD({2, 1, 7, 7});
    TensorD dirac({2, 1, 3, 3});
    dirac(0, 0, 1, 1) = dirac(1, 0, 1, 1) = 1.0;
    r.branches()[1].weight.mutable_value() = dirac;
    const auto& f = r.fuse();
    for (Index c = 0; c < 2; ++c)
      for (Index i = 0; i < 7; ++i)
        for (Index j = 0; j < 7; ++j) {
          const double expected = i == 3 && j == 3 ? 1.0 / std::sqrt(1.0 + 1e-5) : 0.0;
          CHECK(f.weight.value()(c, 0, i, j) == doctest::Approx(expected));
        }
    CHECK((f.bias.value().data() == 0.0).all());
  }

  TEST_CASE("identical Dirac branches double the kernel") {
    Rng rng(3);
    RepHDWConv<double> r("u", 3, 5, {3}, rng);
    TensorD big({3, 1, 5, 5}), small({3, 1, 3, 3});
    for (Index c = 0; c < 3; ++c) {
      big(c, 0, 2, 2) = 1.0;
      small(c, 0, 1, 1) = 1.0;
    }
    r.branches()[0].weight.mutable_value() = big;
    r.branches()[1].weight.mutable_value() = small;
    const TensorD x = TensorD::normal({1, 3, 6, 6}, rng);
    r.fuse();
    const TensorD y = r.forward_fused(VarD(x)).value();
    CHECK(max_abs_diff(y, TensorD(x.shape(), 2.0 * x.data() / std::sqrt(1.0 + 1e-5))) <= 1e-12);
  }

  TEST_CASE("fused output matches the compositional oracle") {
    Rng rng(4);
    for (Index large : {3, 5, 7, 9}) {
      RepHDWConv<double> r("u", 4, large, large >= 5 ? default_small_kernels(large) : std::vector<Index>{}, rng);
      r.randomize_bn(rng);
      const TensorD x = TensorD::normal({2, 4, 12, 10}, rng);
      const TensorD ref = branch_oracle(r, x);
      CHECK(max_abs_diff(r.forward_train(VarD(x)).value(), ref) <= 1e-10);
      r.fuse();
      CHECK(max_abs_diff(r.forward_fused(VarD(x)).value(), ref) <= 1e-10);
    }
  }

  TEST_CASE("float fusion stays within tolerance") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      RepHDWConv<float> r("u", 8, 9, {7, 5, 3}, rng);
      r.randomize_bn(rng);
      r.fuse();
      const VarF x(TensorF::normal({2, 8, 16, 16}, rng));
      CHECK(max_abs_diff(r.forward_train(x).value(), r.forward_fused(x).value()) <= 1e-4);
    }
  }

  TEST_CASE("the fused path runs one convolution") {
    Rng rng(6);
    RepHDWConv<float> r("u", 4, 9, {7, 5, 3}, rng);
    r.fuse();
    r.set_deploy(true);
    const VarF x(TensorF::normal({1, 4, 8, 8}, rng));
    reset_conv_call_count();
    r.forward(x);
    CHECK(conv_call_count() == 1);
    r.set_deploy(false);
    reset_conv_call_count();
    r.forward(x);
    CHECK(conv_call_count() == 4);
  }

  TEST_CASE("fuse is idempotent") {
    Rng rng(7);
    RepHDWConv<double> r("u", 3, 7, {5, 3}, rng);
    r.randomize_bn(rng);
    const TensorD w1 = r.fuse().weight.value();
    const TensorD w2 = r.fuse().weight.value();
    CHECK(max_abs_diff(w1, w2) == 0.0);
  }

  TEST_CASE("fusion state errors") {
    Rng rng(8);
    RepHDWConv<float> r("u", 3, 5, {3}, rng);
    CHECK_THROWS_AS(r.forward_fused(VarF(TensorF::ones({1, 3, 4, 4}))), StateError);
    r.set_training(true);
    CHECK_THROWS_AS(r.fuse(), StateError);
    r.set_training(false);
    r.fuse();
    CHECK_THROWS_AS(r.forward_train(VarF(TensorF::ones({1, 2, 4, 4}))), ShapeError);
    CHECK_THROWS_AS(r.set_fused(TensorF::ones({3, 1, 3, 3}), TensorF::ones({3, 1, 1, 1})), ShapeError);
  }

  TEST_CASE("parameter counts") {
    Rng rng(9);
    RepHDWConv<float> r("u", 32, 7, {5, 3}, rng);
    CHECK(r.fused_params() == 32 * 49 + 32);
    CHECK(r.train_params() == 32 * (49 + 25 + 9) + 3 * 2 * 32);
  }
}
