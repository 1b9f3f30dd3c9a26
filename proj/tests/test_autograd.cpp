#include <doctest.h>

#include "maf/gradcheck.hpp"
#include "maf/gradcheck_suite.hpp"
#include "maf/layers.hpp"

using namespace maf;

TEST_SUITE("autograd") {
  TEST_CASE("sum backward yields ones") {
    Rng rng(1);
    VarD x(TensorD::normal({2, 3, 4, 4}, rng), true);
    backward(sum(x));
    CHECK((x.grad().data() == 1.0).all());
  }

  TEST_CASE("conv weight gradient of a summed all-ones conv equals the output area") {
    VarD x(TensorD::ones({1, 1, 5, 5}));
    VarD w(TensorD::ones({1, 1, 1, 1}), true);
    backward(sum(conv2d<double>(x, w, ConvSpec{1, 1, 1})));
    CHECK(w.grad()[0] == 25.0);
  }

  TEST_CASE("gradients accumulate over reused inputs") {
    VarD x(TensorD::constant({1, 2, 1, 1}, 3.0), true);
    backward(sum(add<double>({x, x, x})));
    CHECK((x.grad().data() == 3.0).all());
  }

  TEST_CASE("backward errors") {
    VarD x(TensorD::ones({1, 2, 2, 2}), true);
    CHECK_THROWS_AS(backward(silu(x)), StateError);
    VarD loss = sum(silu(x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), StateError);
    VarD c(TensorD::ones({1, 1, 1, 1}));
    CHECK_THROWS_AS(backward(sum(c)), StateError);
  }

  TEST_CASE("no-grad guard records nothing") {
    VarD x(TensorD::ones({1, 1, 2, 2}), true);
    VarD y;
    {
      NoGradGuard guard;
      y = silu(x);
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(grad_enabled());
  }

  TEST_CASE("every op and block passes the finite-difference check") {
    for (const auto& c : gradcheck_cases()) {
      const GradCheckResult r = c.run({});
      CAPTURE(r.name);
      CAPTURE(r.max_rel_error);
      CHECK(r.passed);
    }
  }

  TEST_CASE("a corrupted backward is rejected") {
    for (const char* op : {"conv2d", "batchnorm", "silu", "upsample", "concat"}) {
      set_corrupt_backward(op);
      bool any_failed = false;
      for (const auto& c : gradcheck_cases()) {
        if (c.name.rfind("conv2d_k3", 0) != 0 && c.name != "batchnorm_infer" && c.name != "silu" &&
            c.name != "upsample" && c.name != "concat")
          continue;
        any_failed = any_failed || !c.run({}).passed;
      }
      set_corrupt_backward("");
      CAPTURE(op);
      CHECK(any_failed);
    }
  }

  TEST_CASE("case selection") {
    CHECK(select_gradcheck_cases({"all"}).size() == gradcheck_cases().size());
    CHECK(select_gradcheck_cases({"conv2d_k7"}).size() == 4);
    CHECK(select_gradcheck_cases({"silu"}).size() == 1);
    CHECK_THROWS_AS(select_gradcheck_cases({}), ConfigError);
    CHECK_THROWS_AS(select_gradcheck_cases({"nope"}), ConfigError);
  }
}
