#include <doctest.h>

#include "maf/layers.hpp"
#include "oracles.hpp"

using namespace maf;

TEST_SUITE("ops") {
  TEST_CASE("conv2d matches the direct-loop oracle") {
    Rng rng(1);
    for (Index stride : {1, 2})
      for (bool dw : {false, true})
        for (Index k : {1, 3, 5, 7, 9}) {
          const Index cin = 6, cout = dw ? 6 : 4;
          const ConvSpec spec{cin, cout, k, stride, -1, dw ? cin : 1, true};
          const TensorD x = TensorD::normal({2, cin, 11, 13}, rng);
          const TensorD w = TensorD::normal(spec.weight_shape(), rng);
          const TensorD b = TensorD::normal({cout, 1, 1, 1}, rng);
          CAPTURE(k);
          CAPTURE(stride);
          CAPTURE(dw);
          const TensorD ref = oracle::conv2d(x, w, &b, spec);
          CHECK(max_abs_diff(conv2d<double>(x, w, &b, spec), ref) <= 1e-5);
          const TensorF xf = x.cast<float>(), wf = w.cast<float>(), bf = b.cast<float>();
          const double scale = ref.data().abs().maxCoeff();
          CHECK(max_abs_diff(conv2d<float>(xf, wf, &bf, spec), ref.cast<float>()) <= 1e-5 * scale);
        }
  }

  TEST_CASE("grouped conv matches the oracle") {
    Rng rng(2);
    const ConvSpec spec{6, 4, 3, 1, -1, 2, false};
    const TensorD x = TensorD::normal({1, 6, 7, 7}, rng);
    const TensorD w = TensorD::normal(spec.weight_shape(), rng);
    CHECK(max_abs_diff(conv2d<double>(x, w, spec), oracle::conv2d<double>(x, w, nullptr, spec)) <= 1e-12);
  }

  TEST_CASE("1x1 identity kernel reproduces the input") {
    Rng rng(3);
    const TensorF x = TensorF::normal({2, 3, 5, 5}, rng);
    TensorF w({3, 3, 1, 1});
    for (Index c = 0; c < 3; ++c) w(c, c, 0, 0) = 1.0f;
    CHECK(max_abs_diff(conv2d<float>(x, w, ConvSpec{3, 3, 1}), x) == 0.0);
  }

  TEST_CASE("all-ones 3x3 on all-ones input counts the in-bounds taps") {
    const TensorF x = TensorF::ones({1, 1, 4, 4});
    const TensorF w = TensorF::ones({1, 1, 3, 3});
    const TensorF y = conv2d<float>(x, w, ConvSpec{1, 1, 3});
    CHECK(y(0, 0, 1, 1) == 9.0f);
    CHECK(y(0, 0, 0, 0) == 4.0f);
    CHECK(y(0, 0, 0, 1) == 6.0f);
  }

  TEST_CASE("conv is linear in the input") {
    Rng rng(4);
    const ConvSpec spec{3, 2, 3};
    const TensorD a = TensorD::normal({1, 3, 6, 6}, rng), b = TensorD::normal({1, 3, 6, 6}, rng);
    const TensorD w = TensorD::normal(spec.weight_shape(), rng);
    TensorD lhs = conv2d<double>(TensorD(a.shape(), 2.0 * a.data() + 3.0 * b.data()), w, spec);
    TensorD rhs(lhs.shape(), 2.0 * conv2d<double>(a, w, spec).data() + 3.0 * conv2d<double>(b, w, spec).data());
    CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
  }

  TEST_CASE("conv argument errors") {
    Rng rng(5);
    const TensorF x = TensorF::ones({1, 3, 8, 8});
    CHECK_THROWS_AS(conv2d<float>(x, TensorF::ones({2, 4, 3, 3}), ConvSpec{4, 2, 3}), ShapeError);
    CHECK_THROWS_AS(conv2d<float>(x, TensorF::ones({2, 3, 3, 3}), ConvSpec{3, 2, 4}), ConfigError);
    CHECK_THROWS_AS(conv2d<float>(x, TensorF::ones({2, 3, 3, 3}), ConvSpec{3, 2, 3, 3}), ConfigError);
    CHECK_THROWS_AS(conv2d<float>(x, TensorF::ones({2, 3, 3, 3}), ConvSpec{3, 2, 3, 1, -1, 2}), ConfigError);
    CHECK_THROWS_AS(conv2d<float>(x, TensorF::ones({2, 3, 5, 5}), ConvSpec{3, 2, 3}), ShapeError);
  }

  TEST_CASE("batchnorm inference examples") {
    BatchNormParams<double> bn = BatchNormParams<double>::identity(1, 0.0);
    bn.gamma << 2.0;
    bn.beta << 1.0;
    bn.running_mean << 1.0;
    bn.running_var << 4.0;
    const TensorD x = TensorD::constant({1, 1, 1, 1}, 7.0);
    CHECK(batchnorm_infer<double>(x, bn)[0] == doctest::Approx(7.0));
    bn.gamma << 0.0;
    CHECK(batchnorm_infer<double>(x, bn)[0] == 1.0);

    Rng rng(6);
    BatchNormParams<double> r = BatchNormParams<double>::identity(3);
    r.gamma << 0.5, 1.5, -1.0;
    r.beta << 0.1, 0.2, 0.3;
    r.running_mean << -1.0, 0.0, 2.0;
    r.running_var << 0.25, 1.0, 9.0;
    const TensorD xs = TensorD::normal({2, 3, 4, 4}, rng);
    CHECK(max_abs_diff(batchnorm_infer<double>(xs, r), oracle::batchnorm(xs, r)) <= 1e-12);
  }

  TEST_CASE("batchnorm rejects mismatched statistics") {
    BatchNormParams<float> bn = BatchNormParams<float>::identity(3);
    CHECK_THROWS_AS(batchnorm_infer<float>(TensorF::ones({1, 2, 2, 2}), bn), ShapeError);
    bn.running_var[0] = -1.0f;
    CHECK_THROWS_AS(batchnorm_infer<float>(TensorF::ones({1, 3, 2, 2}), bn), ConfigError);
  }

  TEST_CASE("silu values") {
    TensorD x({1, 1, 1, 3});
    x[0] = 0.0;
    x[1] = 1.0;
    x[2] = -1.0;
    const TensorD y = silu(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == doctest::Approx(0.7310585786));
    CHECK(y[2] == doctest::Approx(-0.2689414214));
  }

  TEST_CASE("nearest upsampling replicates each pixel into a 2x2 block") {
    TensorF x({1, 1, 2, 2});
    for (Index i = 0; i < 4; ++i) x[i] = static_cast<float>(i + 1);
    const TensorF y = upsample_nearest2x(x);
    CHECK(y.shape() == Shape{1, 1, 4, 4});
    CHECK(y(0, 0, 0, 0) == 1.0f);
    CHECK(y(0, 0, 1, 1) == 1.0f);
    CHECK(y(0, 0, 0, 3) == 2.0f);
    CHECK(y(0, 0, 3, 0) == 3.0f);
    CHECK(y(0, 0, 3, 3) == 4.0f);
    Rng rng(7);
    const TensorF r = TensorF::normal({2, 3, 5, 4}, rng);
    CHECK(max_abs_diff(avg_pool2x(upsample_nearest2x(r)), r) == 0.0);
  }

  TEST_CASE("concat and split are exact inverses") {
    Rng rng(8);
    const TensorF a = TensorF::normal({2, 2, 3, 3}, rng), b = TensorF::normal({2, 5, 3, 3}, rng);
    const TensorF cat = concat_channels<float>(std::vector<TensorF>{a, b});
    CHECK(cat.shape() == Shape{2, 7, 3, 3});
    const Index sizes[] = {2, 5};
    const auto parts = split_channels(cat, std::span<const Index>(sizes));
    CHECK(max_abs_diff(parts[0], a) == 0.0);
    CHECK(max_abs_diff(parts[1], b) == 0.0);
  }

  TEST_CASE("concat and split errors") {
    const TensorF a = TensorF::ones({1, 2, 3, 3}), b = TensorF::ones({1, 2, 4, 3});
    CHECK_THROWS_AS(concat_channels<float>(std::vector<TensorF>{a, b}), ShapeError);
    CHECK_THROWS_AS(concat_channels<float>(std::vector<TensorF>{}), ConfigError);
    const Index bad[] = {1, 2};
    CHECK_THROWS(split_channels(a, std::span<const Index>(bad)));
  }

  TEST_CASE("checked mode rejects non-finite results") {
    const bool prev = checked_mode();
    set_checked_mode(true);
    TensorF x = TensorF::ones({1, 1, 2, 2});
    x[0] = std::numeric_limits<float>::infinity();
    VarF v(x, true);
    CHECK_THROWS_AS(silu(conv2d<float>(v, VarF(TensorF::constant({1, 1, 1, 1}, -1.0f)), ConvSpec{1, 1, 1})),
                    NumericError);
    set_checked_mode(false);
    CHECK_NOTHROW(conv2d<float>(v, VarF(TensorF::ones({1, 1, 1, 1})), ConvSpec{1, 1, 1}));
    set_checked_mode(prev);
  }
}
