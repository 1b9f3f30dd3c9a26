#include "maf/acceptance.hpp"

#include <chrono>
#include <cstdarg>
#include <cstdio>

#include "maf/analysis.hpp"
#include "maf/gradcheck_suite.hpp"
#include "maf/toy.hpp"
#include "maf/weights.hpp"

namespace maf {

namespace {

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

AcceptanceResult result(bool passed, std::string detail) {
  AcceptanceResult r;
  r.passed = passed;
  r.detail = std::move(detail);
  return r;
}

template <typename Scalar>
double unit_fusion_deviation(Index channels, Index large, std::uint64_t seed) {
  Rng rng(seed);
  RepHDWConv<Scalar> unit("unit", channels, large, default_small_kernels(large), rng);
  unit.randomize_bn(rng);
  const Var<Scalar> x(Tensor<Scalar>::normal({2, channels, 16, 16}, rng));
  NoGradGuard guard;
  const Tensor<Scalar> a = unit.forward_train(x).value();
  unit.fuse();
  const Tensor<Scalar> b = unit.forward_fused(x).value();
  return max_abs_diff(a, b);
}

AcceptanceResult fusion_sweep(std::uint64_t seed) {
  double worst_f = 0.0, worst_d = 0.0;
  std::uint64_t s = seed;
  for (Index c : {1, 8, 32})
    for (Index k : {5, 7, 9})
      for (int t = 0; t < 100; ++t, ++s) {
        worst_f = std::max(worst_f, unit_fusion_deviation<float>(c, k, s));
        worst_d = std::max(worst_d, unit_fusion_deviation<double>(c, k, s));
      }
  return result(worst_f <= 1e-4 && worst_d <= 1e-10,
                fmt("900 trials, max |train - fused| float %.3e (<= 1e-4), double %.3e (<= 1e-10)", worst_f, worst_d));
}

template <typename Scalar>
double model_fusion_deviation(std::uint64_t seed, Index size) {
  Model<Scalar> model = build_model<Scalar>(ModelConfig{});
  model.randomize_bn(seed + 1);
  Rng rng(seed);
  const Var<Scalar> x(Tensor<Scalar>::normal({1, 3, size, size}, rng));
  model.calibrate_bn(x.value());
  NoGradGuard guard;
  const auto train = model.forward(x);
  model.fuse();
  const auto fused = model.forward(x);
  double dev = 0.0;
  for (int i = 0; i < 3; ++i) dev = std::max(dev, max_abs_diff(train[i].value(), fused[i].value()));
  return dev;
}

AcceptanceResult whole_model_fuse(std::uint64_t seed) {
  const double dev = model_fusion_deviation<float>(seed, 320);
  const double dev64 = model_fusion_deviation<double>(seed, 320);
  return result(dev <= 1e-3, fmt("nano at 320x320, max |train - fused| over 3 output maps %.3e (<= 1e-3); "
                                 "64-bit %.1e",
                                 dev, dev64));
}

AcceptanceResult bn_fold(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> chan(1, 64), kidx(0, 3);
  const Index kernels[] = {3, 5, 7, 9};
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Index c = chan(rng);
    const ConvSpec spec = depthwise_spec(c, kernels[kidx(rng)]);
    Conv<float> conv("fold.conv", spec, rng);
    BatchNorm<float> bn("fold.bn", c);
    bn.randomize(rng);
    const TensorF x = TensorF::normal({1, c, 8, 8}, rng);
    const TensorF ref = batchnorm_infer(conv2d(x, conv.weight().value(), spec), bn.params());
    auto [wf, bf] = fold_bn(conv.weight().value(), bn.params());
    ConvSpec biased = spec;
    biased.has_bias = true;
    const TensorF folded = conv2d(x, wf, &bf, biased);
    worst = std::max(worst, max_abs_diff(ref, folded));
  }
  return result(worst <= 1e-5, fmt("1000 random depthwise channel configs, max deviation %.3e (<= 1e-5)", worst));
}

AcceptanceResult gradients(std::uint64_t seed) {
  GradCheckOptions opt;
  opt.seed = seed;
  int failed = 0, total = 0;
  double worst = 0.0;
  std::string failures;
  for (const auto& c : gradcheck_cases()) {
    const GradCheckResult r = c.run(opt);
    ++total;
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) {
      ++failed;
      failures += " " + c.name;
    }
  }
  return result(failed == 0, fmt("%d/%d checks within rel 1e-4, worst %.3e", total - failed, total, worst) +
                                 (failures.empty() ? "" : "; failing:" + failures));
}

AcceptanceResult counting(std::uint64_t seed) {
  std::vector<std::string> bad;
  Rng rng(seed);
  const Conv<float> conv("conv", ConvSpec{16, 32, 3, 1, 1, 1, true}, rng);
  const CostReport c = trace_costs<float>([&](const VarF& x) { conv.forward(x); }, 16, 64, 64);
  if (c.total_params() != 4640) bad.push_back(fmt("conv params %lld != 4640", (long long)c.total_params()));
  if (c.total_macs() != 18874368) bad.push_back(fmt("conv MACs %lld != 18874368", (long long)c.total_macs()));

  RepHDWConv<float> unit("unit", 32, 7, default_small_kernels(7), rng);
  unit.fuse();
  const CostReport f = trace_costs<float>([&](const VarF& x) { unit.forward_fused(x); }, 32, 16, 16);
  if (f.total_params() != 1600) bad.push_back(fmt("fused k7 C32 params %lld != 1600", (long long)f.total_params()));

  BatchNorm<float> bn("bn", 24);
  const CostReport b = trace_costs<float>([&](const VarF& x) { bn.forward(x); }, 24, 8, 8);
  if (b.total_params() != 48 || b.total_buffers() != 48) bad.push_back("bn params/buffers != 2C/2C");

  Model<float> model = build_model<float>(ModelConfig{});
  const CostReport train = count_costs(model, 640, 640);
  const Index closed = fusion_param_delta(model);
  model.fuse();
  const CostReport fused = count_costs(model, 640, 640);
  const Index delta = train.total_params() - fused.total_params();
  if (delta != closed) bad.push_back(fmt("fusion delta %lld != closed form %lld", (long long)delta, (long long)closed));
  if (!(fused.total_macs() < train.total_macs())) bad.push_back("fused MACs not below train MACs");
  std::string detail = fmt("conv 4640/18874368, fused k7 1600, bn 2C; model delta %lld == closed form %lld",
                           (long long)delta, (long long)closed);
  for (const auto& s : bad) detail += "; " + s;
  return result(bad.empty(), detail);
}

AcceptanceResult calibration(std::uint64_t) {
  Model<float> model = build_model<float>(ModelConfig{});
  const CostReport train = count_costs(model, 640, 640);
  model.fuse();
  const CostReport fused = count_costs(model, 640, 640);
  auto within = [](double v, double target) { return std::abs(v - target) <= 0.2 * target; };
  const double tp = static_cast<double>(train.total_params()), tf = static_cast<double>(train.total_flops());
  const double fp = static_cast<double>(fused.total_params()), ff = static_cast<double>(fused.total_flops());
  const bool ok = within(tp, 3.76e6) && within(tf, 10.51e9) && within(fp, 3.76e6) && within(ff, 10.51e9);
  return result(ok, fmt("640x640 train %.3fM params / %.2fG FLOPs, fused %.3fM / %.2fG (targets 3.76M / 10.51G +-20%%)",
                        tp / 1e6, tf / 1e9, fp / 1e6, ff / 1e9));
}

std::string list(const std::vector<Index>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + "]";
}

AcceptanceResult ghks(std::uint64_t) {
  ModelConfig wide;
  wide.stem_width = 24;
  wide.widths = {48, 96, 192, 384};
  wide.neck.widths = {96, 192, 384};
  std::string detail;
  bool ok = true;
  for (const ModelConfig& cfg : {ModelConfig{}, wide}) {
    Model<float> model = build_model<float>(cfg);
    const KernelSchedule k = kernel_schedule(model.inventory());
    ok = ok && k.backbone == std::vector<Index>{3, 5, 7, 9} && k.neck == std::vector<Index>{5, 7, 9};
    detail += (detail.empty() ? "" : "; ") + std::string("widths ") + std::to_string(cfg.widths[0]) +
              "..: backbone " + list(k.backbone) + ", neck " + list(k.neck);
  }
  return result(ok, detail);
}

AcceptanceResult erf(std::uint64_t seed) {
  const TensorF ones = TensorF::ones({1, 4, 64, 64});
  DepthwiseStack<float> large(4, 4, 9, true, seed);
  large.randomize_bn(seed + 1);
  large.fuse();
  DepthwiseStack<float> small(4, 4, 3, true, seed);
  small.randomize_bn(seed + 1);
  small.fuse();
  const double r9 = erf_radius(erf_map<float>(large, "layer4", ones));
  const double r3 = erf_radius(erf_map<float>(small, "layer4", ones));
  return result(r9 > r3, fmt("depth-4 stacks, 95%%-mass radius: fused 9x9 %.0f vs 3x3 %.0f", r9, r3));
}

AcceptanceResult toy(std::uint64_t seed) {
  ToyClassifier net(toy_model_config(seed));
  const ToyDataset data = make_blob_dataset(64, 32, seed);
  const ToyResult r = train_toy(net, data, {500, 0.1, seed});
  if (r.diverged_at) return result(false, fmt("diverged at step %lld: ", (long long)*r.diverged_at) + r.divergence);
  const auto hit = r.first_step_reaching(0.95);
  const bool mono = non_increasing(moving_average(r.losses, 20));
  return result(hit.has_value() && mono,
                fmt("64 samples, 500 steps: final accuracy %.3f, >=95%% at step %lld, final loss %.4g, "
                    "20-step moving average %s",
                    r.final_accuracy(), hit ? (long long)*hit : -1LL, r.final_loss(),
                    mono ? "monotone" : "NOT monotone"));
}

template <typename Scalar>
std::vector<TensorF> outputs(Model<Scalar>& m, const TensorF& x) {
  NoGradGuard guard;
  auto y = m.forward(Var<Scalar>(x.template cast<Scalar>()));
  return {y[0].value().template cast<float>(), y[1].value().template cast<float>(), y[2].value().template cast<float>()};
}

bool bit_equal(const std::vector<TensorF>& a, const std::vector<TensorF>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i].shape() == b[i].shape()) || !(a[i].data() == b[i].data()).all()) return false;
  return true;
}

AcceptanceResult determinism(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.seed = seed;
  Rng rng(seed);
  const TensorF x = TensorF::normal({1, 3, 64, 64}, rng);
  Model<float> a = build_model<float>(cfg), b = build_model<float>(cfg);
  a.randomize_bn(seed + 1);
  b.randomize_bn(seed + 1);
  const bool same_weights = encode_weights(collect_weights(a)) == encode_weights(collect_weights(b));
  const bool same_out = bit_equal(outputs(a, x), outputs(b, x));

  bool round_trip = true;
  for (bool fused : {false, true}) {
    if (fused) a.fuse();
    const std::string bytes = encode_weights(collect_weights(a));
    ModelConfig other = cfg;
    other.seed = seed + 99;
    Model<float> c = build_model<float>(other);
    apply_weights(c, decode_weights(bytes));
    round_trip = round_trip && encode_weights(collect_weights(c)) == bytes && bit_equal(outputs(a, x), outputs(c, x));
  }
  return result(same_weights && same_out && round_trip,
                fmt("same seed: weights %s, outputs %s; save/load (train and fused): %s",
                    same_weights ? "bit-identical" : "DIFFER", same_out ? "bit-identical" : "DIFFER",
                    round_trip ? "byte- and forward-identical" : "MISMATCH"));
}

AcceptanceResult ablation(std::uint64_t) {
  const auto rows = run_ablation("table3", ModelConfig{}, 640);
  bool ok = rows.size() == 4;
  std::string detail;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && !(rows[i].train_params > rows[i - 1].train_params)) ok = false;
    detail += (i ? " < " : "") + std::string("(") + rows[i].label + ") " +
              fmt("%.3fM", static_cast<double>(rows[i].train_params) / 1e6);
  }
  return result(ok, "table3 params: " + detail);
}

}  // namespace

std::vector<AcceptanceCheck> acceptance_checks() {
  return {
      {1, "Fusion equivalence", 120, fusion_sweep},
      {2, "Whole-model fuse equivalence", 60, whole_model_fuse},
      {3, "BN-fold identity", 10, bn_fold},
      {4, "Gradient fidelity", 120, gradients},
      {5, "Counting oracle", 0, counting},
      {6, "Calibration to reference scale", 0, calibration},
      {7, "GHKS structural check", 0, ghks},
      {8, "ERF monotonicity", 30, erf},
      {9, "Toy overfit", 300, toy},
      {10, "Determinism & serialization", 0, determinism},
      {11, "Ablation-preset structure", 0, ablation},
  };
}

AcceptanceResult run_acceptance(const AcceptanceCheck& check, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  AcceptanceResult r;
  try {
    r = check.run(seed);
  } catch (const std::exception& e) {
    r = result(false, std::string("error: ") + e.what());
  }
  r.id = check.id;
  r.title = check.title;
  r.budget_seconds = check.budget_seconds;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (r.budget_seconds > 0 && r.seconds > r.budget_seconds) {
    r.passed = false;
    r.detail += fmt("; exceeded %.0f s budget", r.budget_seconds);
  }
  return r;
}

std::string format_acceptance(const AcceptanceResult& r) {
  return fmt("%s [%d] %s: ", r.passed ? "PASS" : "FAIL", r.id, r.title.c_str()) + r.detail +
         fmt(" (%.1f s)", r.seconds);
}

}  // namespace maf
