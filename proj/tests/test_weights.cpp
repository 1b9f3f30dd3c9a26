#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>

#include "maf/weights.hpp"

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

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("maf_test_" + name)).string();
}

void put_u32(std::string& s, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s[at + static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
}

}  // namespace

TEST_SUITE("weights") {
  TEST_CASE("encode and decode are inverses") {
    std::vector<WeightEntry> e{{"a.weight", {2, 1, 3, 3}, std::vector<float>(18, 0.5f)},
                               {"a.bias", {2, 1, 1, 1}, {-1.0f, 2.0f}}};
    const std::string bytes = encode_weights(e);
    CHECK(bytes.substr(0, 4) == "MAFW");
    const auto back = decode_weights(bytes);
    REQUIRE(back.size() == 2);
    CHECK(back[1].name == "a.bias");
    CHECK(back[1].shape == Shape{2, 1, 1, 1});
    CHECK(back[1].values == std::vector<float>{-1.0f, 2.0f});
    CHECK(encode_weights(back) == bytes);
  }

  TEST_CASE("model round trip is byte-identical and output-identical") {
    Model<float> a = build_model<float>(tiny_config());
    a.randomize_bn(5);
    const std::string path = temp_path("roundtrip.bin");
    save_weights(a, path);
    ModelConfig other = tiny_config();
    other.seed = 9;
    Model<float> b = build_model<float>(other);
    load_weights(b, path);
    CHECK(encode_weights(collect_weights(b)) == read_file_bytes(path));
    Rng rng(1);
    const VarF x(TensorF::normal({1, 3, 64, 64}, rng));
    NoGradGuard guard;
    for (int i = 0; i < 3; ++i) CHECK(max_abs_diff(a.forward(x)[i].value(), b.forward(x)[i].value()) == 0.0);
    std::filesystem::remove(path);
  }

  TEST_CASE("fused kernels survive a round trip") {
    Model<float> a = build_model<float>(tiny_config());
    a.randomize_bn(6);
    a.fuse();
    Model<float> b = build_model<float>(tiny_config());
    apply_weights(b, decode_weights(encode_weights(collect_weights(a))));
    b.for_each_rep([](RepHDWConv<float>& r) {
      CHECK(r.is_fused());
      CHECK(r.deployed());
    });
    Rng rng(2);
    const VarF x(TensorF::normal({1, 3, 32, 32}, rng));
    NoGradGuard guard;
    reset_conv_call_count();
    const auto ya = a.forward(x);
    const Index calls = conv_call_count();
    reset_conv_call_count();
    const auto yb = b.forward(x);
    CHECK(conv_call_count() == calls);
    for (int i = 0; i < 3; ++i) CHECK(max_abs_diff(ya[i].value(), yb[i].value()) == 0.0);
  }

  TEST_CASE("truncation reports the byte offset") {
    Model<float> a = build_model<float>(tiny_config());
    const std::string bytes = encode_weights(collect_weights(a));
    for (std::size_t cut : {std::size_t{2}, std::size_t{10}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
      CAPTURE(cut);
      try {
        decode_weights(bytes.substr(0, cut));
        FAIL("expected ParseError");
      } catch (const ParseError& e) {
        CHECK(e.offset() <= cut);
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
      }
    }
  }

  TEST_CASE("header errors") {
    std::vector<WeightEntry> e{{"x", {1, 1, 1, 1}, {1.0f}}};
    std::string bytes = encode_weights(e);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_weights(bad_magic), ParseError);
    std::string bad_version = bytes;
    put_u32(bad_version, 4, 99);
    CHECK_THROWS_AS(decode_weights(bad_version), ParseError);
    std::string bad_dtype = bytes;
    put_u32(bad_dtype, 12 + 4 + 1, 7);
    try {
      decode_weights(bad_dtype);
      FAIL("expected ParseError");
    } catch (const ParseError& err) {
      CHECK(std::string(err.what()).find("dtype") != std::string::npos);
      CHECK(err.offset() == 17);
    }
    CHECK_THROWS_AS(decode_weights(bytes + "x"), ParseError);
  }

  TEST_CASE("model mismatch errors") {
    Model<float> a = build_model<float>(tiny_config());
    auto entries = collect_weights(a);
    auto missing = entries;
    missing.pop_back();
    CHECK_THROWS_AS(apply_weights(a, missing), ConfigError);
    auto extra = entries;
    extra.push_back({"nope", {1, 1, 1, 1}, {0.0f}});
    CHECK_THROWS_AS(apply_weights(a, extra), ConfigError);
    auto dup = entries;
    dup.push_back(entries.front());
    CHECK_THROWS_AS(apply_weights(a, dup), ConfigError);
    auto reshaped = entries;
    reshaped.front().shape.n += 1;
    CHECK_THROWS_AS(apply_weights(a, reshaped), ShapeError);
    CHECK_THROWS_AS(read_file_bytes("/nonexistent/weights.bin"), ConfigError);
  }
}
