#include <doctest.h>

#include "maf/config.hpp"
#include "maf/model.hpp"

using namespace maf;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.stem_width = 4;
  c.widths = {4, 8, 16, 32};
  c.depths = {1, 1, 1, 1};
  c.expansion = 2.0;
  c.neck.widths = {8, 16, 32};
  c.neck.n_bottlenecks = 1;
  c.head_width = 4;
  c.head_outputs = 3;
  return c;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("input size must be a multiple of 32") {
    Model<float> m = build_model<float>(tiny_config());
    NoGradGuard guard;
    CHECK_THROWS_AS(m.forward(VarF(TensorF::ones({1, 3, 48, 64}))), ShapeError);
    CHECK_THROWS_AS(m.forward(VarF(TensorF::ones({1, 4, 64, 64}))), ShapeError);
    CHECK_NOTHROW(m.forward(VarF(TensorF::ones({1, 3, 64, 96}))));
  }

  TEST_CASE("output shapes") {
    Model<float> m = build_model<float>(tiny_config());
    NoGradGuard guard;
    const auto y = m.forward(VarF(TensorF::ones({2, 3, 64, 64})));
    CHECK(y[0].shape() == Shape{2, 3, 8, 8});
    CHECK(y[1].shape() == Shape{2, 3, 4, 4});
    CHECK(y[2].shape() == Shape{2, 3, 2, 2});
  }

  TEST_CASE("same seed builds the same model") {
    Rng rng(1);
    const VarF x(TensorF::normal({1, 3, 64, 64}, rng));
    NoGradGuard guard;
    Model<float> a = build_model<float>(tiny_config());
    Model<float> b = build_model<float>(tiny_config());
    for (int i = 0; i < 3; ++i) CHECK(max_abs_diff(a.forward(x)[i].value(), b.forward(x)[i].value()) == 0.0);
    ModelConfig other = tiny_config();
    other.seed = 1;
    Model<float> c = build_model<float>(other);
    CHECK(max_abs_diff(a.forward(x)[0].value(), c.forward(x)[0].value()) > 0.0);
  }

  TEST_CASE("whole-model fusion matches the branch path in double precision") {
    Model<double> m = build_model<double>(tiny_config());
    m.randomize_bn(3);
    Rng rng(2);
    const TensorD x = TensorD::normal({1, 3, 64, 64}, rng);
    m.calibrate_bn(x);
    NoGradGuard guard;
    const auto train = m.forward(VarD(x));
    m.fuse();
    reset_conv_call_count();
    const auto fused = m.forward(VarD(x));
    for (int i = 0; i < 3; ++i) CHECK(max_abs_diff(train[i].value(), fused[i].value()) <= 1e-9);
    Index units = 0;
    m.for_each_rep([&](RepHDWConv<double>& r) {
      ++units;
      CHECK(r.deployed());
    });
    CHECK(units > 0);
  }

  TEST_CASE("fusing during training is rejected") {
    Model<float> m = build_model<float>(tiny_config());
    m.set_training(true);
    CHECK_THROWS_AS(m.fuse(), StateError);
  }

  TEST_CASE("calibration restores the training flag") {
    Model<float> m = build_model<float>(tiny_config());
    Rng rng(3);
    m.calibrate_bn(TensorF::normal({2, 3, 32, 32}, rng));
    CHECK_FALSE(m.training());
  }

  TEST_CASE("config JSON round trip") {
    ModelConfig c = tiny_config();
    c.neck.enable_aaf = false;
    c.seed = 42;
    const ModelConfig back = parse_model_config(model_config_to_json(c));
    CHECK(model_config_to_json(back) == model_config_to_json(c));
    CHECK(back.seed == 42);
    CHECK_FALSE(back.neck.enable_aaf);
  }

  TEST_CASE("config JSON errors") {
    CHECK_THROWS_AS(parse_model_config(R"({"bogus": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"neck": {"widths": [1, 2]}})"), ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"backbone": {"kernels": [3, 5, 7]}})"), ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"backbone": {"depths": [1, 1, 1]}})"), ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"stem_width": "wide"})"), ConfigError);
    CHECK_THROWS_AS(parse_model_config("{"), ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"head": {"kernel": 4}})"), ConfigError);
    CHECK_THROWS_AS(load_model_config("/nonexistent/config.json"), ConfigError);
    try {
      parse_model_config(R"({"neck": {"depht": 2}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("$.neck.depht") != std::string::npos);
    }
  }

  TEST_CASE("absent keys keep defaults") {
    const ModelConfig c = parse_model_config(R"({"seed": 7})");
    CHECK(model_config_to_json(c) != model_config_to_json(ModelConfig{}));
    ModelConfig d;
    d.seed = 7;
    CHECK(model_config_to_json(c) == model_config_to_json(d));
  }
}
