#include "maf/gradcheck_suite.hpp"

#include "maf/blocks.hpp"
#include "maf/mafpn.hpp"

namespace maf {

namespace {

TensorD rand_t(const Shape& s, Rng& rng) { return TensorD::uniform(s, rng, -1.0, 1.0); }

/// Scalar test loss <y, r> with a fixed random weighting.
VarD weighted(const VarD& y, std::uint64_t seed) {
  Rng rng(seed);
  return dot(y, rand_t(y.shape(), rng));
}

/// Checks a module's gradients w.r.t. its activation inputs and every
/// learnable tensor, by rebinding the module's Vars to the probe inputs.
template <typename Module, typename Forward>
GradCheckResult check_module(const std::string& name, Module& m, std::vector<TensorD> acts, Forward fwd,
                             const GradCheckOptions& opt, std::uint64_t seed) {
  const std::size_t n_acts = acts.size();
  std::vector<TensorD> inputs = std::move(acts);
  m.visit([&](const std::string&, VarD& v, bool learnable) {
    if (learnable) inputs.push_back(v.value());
  });
  LossFn fn = [&, n_acts](const std::vector<VarD>& vars) {
    std::size_t k = n_acts;
    m.visit([&](const std::string&, VarD& v, bool learnable) {
      if (learnable) v = vars[k++];
    });
    std::vector<VarD> xs(vars.begin(), vars.begin() + static_cast<std::ptrdiff_t>(n_acts));
    return weighted(fwd(xs), seed);
  };
  GradCheckOptions o = opt;
  if (o.max_elements == 0) o.max_elements = 16;
  return gradcheck(name, fn, inputs, o);
}

GradCheckCase conv_case(Index k, bool depthwise, Index stride) {
  const std::string name = "conv2d_k" + std::to_string(k) + (depthwise ? "_dw" : "_dense") + "_s" +
                           std::to_string(stride);
  return {name, [=](const GradCheckOptions& opt) {
            Rng rng(opt.seed + static_cast<std::uint64_t>(k * 10 + stride + (depthwise ? 100 : 0)));
            const Index cin = 4, cout = depthwise ? 4 : 6;
            const ConvSpec spec{cin, cout, k, stride, -1, depthwise ? cin : 1, true};
            std::vector<TensorD> in{rand_t({2, cin, 7, 7}, rng), rand_t(spec.weight_shape(), rng),
                                    rand_t({cout, 1, 1, 1}, rng)};
            const std::uint64_t seed = rng();
            return gradcheck(name,
                             [=](const std::vector<VarD>& v) {
                               return weighted(conv2d<double>(v[0], v[1], &v[2], spec), seed);
                             },
                             in, opt);
          }};
}

template <typename Build>
GradCheckCase op_case(const std::string& name, std::vector<Shape> shapes, Build build) {
  return {name, [=](const GradCheckOptions& opt) {
            Rng rng(opt.seed + std::hash<std::string>{}(name));
            std::vector<TensorD> in;
            for (const auto& s : shapes) in.push_back(rand_t(s, rng));
            const std::uint64_t seed = rng();
            return gradcheck(name, [=](const std::vector<VarD>& v) { return weighted(build(v), seed); }, in, opt);
          }};
}

}  // namespace

std::vector<GradCheckCase> gradcheck_cases() {
  std::vector<GradCheckCase> cases;
  for (Index k : {1, 3, 7})
    for (bool dw : {false, true})
      for (Index s : {1, 2}) cases.push_back(conv_case(k, dw, s));

  cases.push_back(op_case("batchnorm_infer", {{2, 3, 4, 4}, {3, 1, 1, 1}, {3, 1, 1, 1}},
                          [](const std::vector<VarD>& v) {
                            BatchNormParams<double> bn = BatchNormParams<double>::identity(3);
                            bn.running_mean << 0.1, -0.3, 0.2;
                            bn.running_var << 0.7, 1.3, 2.1;
                            return batchnorm_infer<double>(v[0], v[1], v[2], bn);
                          }));
  cases.push_back(op_case("batchnorm_train", {{2, 3, 4, 4}, {3, 1, 1, 1}, {3, 1, 1, 1}},
                          [](const std::vector<VarD>& v) {
                            return batchnorm_train<double>(v[0], v[1], v[2], 1e-5, nullptr);
                          }));
  cases.push_back(op_case("silu", {{2, 3, 5, 5}}, [](const std::vector<VarD>& v) { return silu(v[0]); }));
  cases.push_back(op_case("upsample", {{2, 3, 3, 4}},
                          [](const std::vector<VarD>& v) { return upsample_nearest2x(v[0]); }));
  cases.push_back(op_case("avg_pool", {{2, 3, 4, 6}}, [](const std::vector<VarD>& v) { return avg_pool2x(v[0]); }));
  cases.push_back(op_case("concat", {{2, 2, 3, 3}, {2, 3, 3, 3}, {2, 1, 3, 3}}, [](const std::vector<VarD>& v) {
    return concat_channels(v);
  }));
  cases.push_back(op_case("split", {{2, 6, 3, 3}}, [](const std::vector<VarD>& v) {
    const Index sizes[] = {1, 3, 2};
    auto parts = split_channels(v[0], std::span<const Index>(sizes));
    return concat_channels(std::vector<VarD>{parts[2], parts[0], silu(parts[1])});
  }));
  cases.push_back(op_case("global_avg_pool", {{2, 3, 4, 5}},
                          [](const std::vector<VarD>& v) { return global_avg_pool(v[0]); }));
  cases.push_back({"softmax_cross_entropy", [](const GradCheckOptions& opt) {
                     Rng rng(opt.seed + 7);
                     const int labels[] = {1, 0, 2, 1};
                     return gradcheck("softmax_cross_entropy",
                                      [&](const std::vector<VarD>& v) {
                                        return softmax_cross_entropy(v[0], std::span<const int>(labels));
                                      },
                                      {rand_t({4, 3, 1, 1}, rng)}, opt);
                   }});

  cases.push_back({"rephdw", [](const GradCheckOptions& opt) {
                     Rng rng(opt.seed + 11);
                     RepHDWConv<double> m("rephdw", 3, 7, {5, 3}, rng);
                     m.randomize_bn(rng);
                     TensorD x = rand_t({2, 3, 6, 6}, rng);
                     return check_module("rephdw", m, {x}, [&](const std::vector<VarD>& v) { return m.forward(v[0]); },
                                         opt, rng());
                   }});
  cases.push_back({"bottleneck", [](const GradCheckOptions& opt) {
                     Rng rng(opt.seed + 13);
                     InvertedBottleneck<double> m("bottleneck", BottleneckConfig{4, 2.0, 7, true, true}, rng);
                     m.randomize_bn(rng);
                     TensorD x = rand_t({2, 4, 6, 6}, rng);
                     return check_module("bottleneck", m, {x},
                                         [&](const std::vector<VarD>& v) { return m.forward(v[0]); }, opt, rng());
                   }});
  cases.push_back({"helan", [](const GradCheckOptions& opt) {
                     Rng rng(opt.seed + 17);
                     HELANConfig cfg;
                     cfg.in_channels = 4;
                     cfg.out_channels = 6;
                     cfg.hidden = 2;
                     cfg.n_bottlenecks = 2;
                     cfg.bottleneck = BottleneckConfig{2, 2.0, 5, true, true};
                     HELAN<double> m("helan", cfg, rng);
                     m.randomize_bn(rng);
                     TensorD x = rand_t({2, 4, 5, 5}, rng);
                     return check_module("helan", m, {x}, [&](const std::vector<VarD>& v) { return m.forward(v[0]); },
                                         opt, rng());
                   }});
  cases.push_back({"saf_node", [](const GradCheckOptions& opt) {
                     Rng rng(opt.seed + 19);
                     auto m = make_saf_node<double>("saf", "P4", 2, 3, 4, 2, rng);
                     m.randomize_bn(rng);
                     std::vector<TensorD> acts{rand_t({2, 2, 8, 8}, rng), rand_t({2, 3, 4, 4}, rng),
                                               rand_t({2, 4, 2, 2}, rng)};
                     return check_module("saf_node", m, acts, [&](const std::vector<VarD>& v) { return m.forward(v); },
                                         opt, rng());
                   }});
  cases.push_back({"aaf_node", [](const GradCheckOptions& opt) {
                     Rng rng(opt.seed + 23);
                     auto m = make_aaf_node<double>("aaf", "P4", 2, 3, 3, 4, 3, rng);
                     m.randomize_bn(rng);
                     std::vector<TensorD> acts{rand_t({2, 2, 8, 8}, rng), rand_t({2, 3, 8, 8}, rng),
                                               rand_t({2, 3, 4, 4}, rng), rand_t({2, 4, 2, 2}, rng)};
                     return check_module("aaf_node", m, acts, [&](const std::vector<VarD>& v) { return m.forward(v); },
                                         opt, rng());
                   }});
  return cases;
}

std::vector<GradCheckCase> select_gradcheck_cases(const std::vector<std::string>& filters) {
  if (filters.empty()) throw ConfigError("gradcheck: empty op list");
  std::vector<GradCheckCase> all = gradcheck_cases();
  std::vector<GradCheckCase> out;
  std::vector<bool> taken(all.size(), false);
  for (const auto& f : filters) {
    bool hit = false;
    for (std::size_t i = 0; i < all.size(); ++i) {
      const std::string& n = all[i].name;
      if (f == "all" || n == f || n.rfind(f + "_", 0) == 0) {
        hit = true;
        taken[i] = true;
      }
    }
    if (!hit) throw ConfigError("gradcheck: no check named '" + f + "'");
  }
  for (std::size_t i = 0; i < all.size(); ++i)
    if (taken[i]) out.push_back(all[i]);
  return out;
}

}  // namespace maf
