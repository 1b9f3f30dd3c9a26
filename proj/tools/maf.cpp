#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "maf/acceptance.hpp"
#include "maf/analysis.hpp"
#include "maf/config.hpp"
#include "maf/gradcheck_suite.hpp"
#include "maf/toy.hpp"
#include "maf/weights.hpp"

using namespace maf;
using Json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kNumeric = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string format = "text";

  bool json() const { return format == "json"; }
  std::uint64_t rng_seed() const { return seed.value_or(0); }
  ModelConfig model_config() const {
    ModelConfig cfg = config.empty() ? ModelConfig{} : load_model_config(config);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* app, Common& c, bool with_config = true) {
  if (with_config) app->add_option("--config", c.config, "Model config JSON (default: nano)");
  app->add_option("--seed", c.seed, "Root seed for weights and random inputs");
  app->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"text", "json"}));
}

std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

Json shape_json(const Shape& s) { return Json::array({s.n, s.c, s.h, s.w}); }

void print(const Common& c, const Json& j, const std::string& text) {
  if (c.json()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << text;
  }
}

Json kernels_json(const KernelSchedule& k) {
  return Json{{"backbone", k.backbone}, {"neck", k.neck}, {"head", k.head}};
}

std::string list(const std::vector<Index>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + "]";
}

// ---- summary ---------------------------------------------------------------

struct SummaryArgs {
  Common common;
  Index input_size = 640;
  bool fused = false;
  bool totals_only = false;
};

int cmd_summary(const SummaryArgs& a) {
  Model<float> model = build_model<float>(a.common.model_config());
  if (a.fused) model.fuse();
  const CostReport r = count_costs(model, a.input_size, a.input_size);
  const KernelSchedule ks = kernel_schedule(model.inventory());
  Json rows = Json::array();
  std::ostringstream t;
  t << "# " << CostReport::kConvention << "\n";
  t << "# input " << a.input_size << "x" << a.input_size << ", mode " << (a.fused ? "fused" : "train") << "\n";
  if (!a.totals_only) t << fmt("%-48s %-7s %10s %9s %15s  %s\n", "layer", "kind", "params", "buffers", "MACs", "output");
  for (const auto& row : r.rows) {
    rows.push_back({{"name", row.name}, {"kind", row.kind}, {"params", row.params}, {"buffers", row.buffers},
                    {"macs", row.macs}, {"output", shape_json(row.output)}});
    if (!a.totals_only) {
      t << fmt("%-48s %-7s %10lld %9lld %15lld  %s\n", row.name.c_str(), row.kind.c_str(), (long long)row.params,
               (long long)row.buffers, (long long)row.macs, row.output.str().c_str());
    }
  }
  t << fmt("TOTAL params %lld (%.3fM)  buffers %lld  MACs %lld  FLOPs %lld (%.2fG)\n", (long long)r.total_params(),
           r.total_params() / 1e6, (long long)r.total_buffers(), (long long)r.total_macs(),
           (long long)r.total_flops(), r.total_flops() / 1e9);
  t << "kernels backbone " << list(ks.backbone) << " neck " << list(ks.neck) << " head " << list(ks.head) << "\n";
  Json j{{"convention", CostReport::kConvention},
         {"input", {a.input_size, a.input_size}},
         {"mode", a.fused ? "fused" : "train"},
         {"rows", a.totals_only ? Json::array() : rows},
         {"totals",
          {{"params", r.total_params()}, {"buffers", r.total_buffers()}, {"macs", r.total_macs()},
           {"flops", r.total_flops()}}},
         {"kernels", kernels_json(ks)}};
  print(a.common, j, t.str());
  return kOk;
}

// ---- inventory / wiring ----------------------------------------------------

int cmd_inventory(const Common& c) {
  Model<float> model = build_model<float>(c.model_config());
  Json rows = Json::array();
  std::ostringstream t;
  t << fmt("%-48s %-7s %5s %5s %3s %3s %6s  %s\n", "layer", "kind", "in", "out", "k", "s", "groups", "small");
  for (const auto& l : model.inventory()) {
    rows.push_back({{"name", l.name}, {"kind", l.kind}, {"in", l.in_channels}, {"out", l.out_channels},
                    {"kernel", l.kernel}, {"stride", l.stride}, {"groups", l.groups},
                    {"small_kernels", l.small_kernels}});
    t << fmt("%-48s %-7s %5lld %5lld %3lld %3lld %6lld  %s\n", l.name.c_str(), l.kind.c_str(), (long long)l.in_channels,
             (long long)l.out_channels, (long long)l.kernel, (long long)l.stride, (long long)l.groups,
             l.kind == "rephdw" ? list(l.small_kernels).c_str() : "");
  }
  print(c, Json{{"layers", rows}}, t.str());
  return kOk;
}

int cmd_wiring(const Common& c) {
  Model<float> model = build_model<float>(c.model_config());
  Json edges = Json::array();
  for (const auto& e : model.neck_edges()) edges.push_back({{"src", e.src}, {"dst", e.dst}, {"kind", e.kind}});
  print(c, Json{{"edges", edges}}, format_edges(model.neck_edges()));
  return kOk;
}

// ---- verify-fuse -----------------------------------------------------------

struct VerifyArgs {
  Common common;
  std::string weights;
  int trials = 1;
  double tol = 1e-3;
  bool per_unit = false;
  Index input_size = 320;
  bool use_double = false;
  bool relative = false;
};

template <typename Scalar>
int verify_fuse(const VerifyArgs& a) {
  if (a.trials < 1) throw ConfigError("verify-fuse: --trials must be >= 1");
  const std::uint64_t seed = a.common.rng_seed();
  Model<Scalar> model = build_model<Scalar>(a.common.model_config());
  const bool loaded = !a.weights.empty();
  if (loaded) {
    Model<float> staging = build_model<float>(a.common.model_config());
    load_weights(staging, a.weights);
    apply_weights(model, collect_weights(staging));
  } else {
    model.randomize_bn(seed + 1);
  }
  Json j;
  std::ostringstream t;
  double worst = 0.0, worst_rel = 0.0;
  const auto record = [&](double dev, double scale) {
    worst = std::max(worst, dev);
    worst_rel = std::max(worst_rel, scale > 0 ? dev / scale : dev);
  };
  NoGradGuard guard;
  if (a.per_unit) {
    Json units = Json::array();
    Rng rng(seed);
    model.for_each_rep([&](RepHDWConv<Scalar>& r) {
      if (!(loaded && r.is_fused())) r.fuse();
      double dev = 0.0;
      for (int i = 0; i < a.trials; ++i) {
        const Var<Scalar> x(Tensor<Scalar>::normal({2, r.channels(), 16, 16}, rng));
        const auto y = r.forward_train(x);
        const double d = max_abs_diff(y.value(), r.forward_fused(x).value());
        record(d, static_cast<double>(y.value().data().abs().maxCoeff()));
        dev = std::max(dev, d);
      }
      units.push_back({{"unit", r.name()}, {"large", r.large_kernel()}, {"small", r.small_kernels()},
                       {"max_deviation", dev}, {"passed", dev <= a.tol}});
      t << fmt("%-4s %-44s k%lld %-10s max |train - fused| %.3e\n", dev <= a.tol ? "ok" : "FAIL", r.name().c_str(),
               (long long)r.large_kernel(), list(r.small_kernels()).c_str(), dev);
    });
    j["units"] = units;
  } else {
    Json trials = Json::array();
    for (int i = 0; i < a.trials; ++i) {
      Rng rng(seed + static_cast<std::uint64_t>(i));
      const Var<Scalar> x(Tensor<Scalar>::normal({1, model.in_channels(), a.input_size, a.input_size}, rng));
      model.set_deploy(false);
      if (!loaded) model.calibrate_bn(x.value());
      const auto train = model.forward(x);
      if (!loaded) {
        model.fuse();
      } else {
        model.for_each_rep([](RepHDWConv<Scalar>& r) {
          if (!r.is_fused()) r.fuse();
        });
      }
      model.set_deploy(true);
      const auto fused = model.forward(x);
      double dev = 0.0, scale = 0.0;
      for (int k = 0; k < 3; ++k) {
        dev = std::max(dev, max_abs_diff(train[k].value(), fused[k].value()));
        scale = std::max(scale, static_cast<double>(train[k].value().data().abs().maxCoeff()));
      }
      record(dev, scale);
      trials.push_back(dev);
      t << fmt("trial %d: max |train - fused| %.3e\n", i, dev);
    }
    j["input"] = {a.input_size, a.input_size};
    j["trials"] = trials;
  }
  const bool ok = (a.relative ? worst_rel : worst) <= a.tol;
  j["precision"] = sizeof(Scalar) == 8 ? "float64" : "float32";
  j["max_deviation"] = worst;
  j["max_relative_deviation"] = worst_rel;
  j["tolerance"] = a.tol;
  j["tolerance_kind"] = a.relative ? "relative" : "absolute";
  j["passed"] = ok;
  t << fmt("%s: max deviation %.3e (relative to max |output| %.3e), %s tolerance %.3e (%s)\n", ok ? "PASS" : "FAIL",
           worst, worst_rel, a.relative ? "relative" : "absolute", a.tol,
           sizeof(Scalar) == 8 ? "float64" : "float32");
  print(a.common, j, t.str());
  return ok ? kOk : kCheckFailed;
}

// ---- gradcheck -------------------------------------------------------------

struct GradArgs {
  Common common;
  std::vector<std::string> ops{"all"};
  std::string corrupt;
  double tol = 1e-4;
  double step = 1e-4;
};

int cmd_gradcheck(const GradArgs& a) {
  std::vector<std::string> ops;
  for (const auto& o : a.ops)
    if (!o.empty()) ops.push_back(o);
  const auto cases = select_gradcheck_cases(ops);
  set_corrupt_backward(a.corrupt);
  GradCheckOptions opt;
  opt.tolerance = a.tol;
  opt.step = a.step;
  opt.seed = a.common.rng_seed();
  Json results = Json::array();
  std::ostringstream t;
  if (!a.corrupt.empty()) t << "corrupted backward: " << a.corrupt << "\n";
  int failed = 0;
  for (const auto& c : cases) {
    const GradCheckResult r = c.run(opt);
    failed += r.passed ? 0 : 1;
    results.push_back({{"name", r.name}, {"passed", r.passed}, {"max_rel_error", r.max_rel_error},
                       {"elements", r.elements_checked}, {"worst", r.worst}});
    t << fmt("%-4s %-24s max rel error %.3e over %lld elements", r.passed ? "ok" : "FAIL", r.name.c_str(),
             r.max_rel_error, (long long)r.elements_checked);
    if (!r.passed) t << " (worst " << r.worst << ")";
    t << "\n";
  }
  set_corrupt_backward("");
  t << fmt("%zu checks, %d failed (relative tolerance %.1e, step %.1e, float64)\n", cases.size(), failed, a.tol,
           a.step);
  Json j{{"corrupt_op", a.corrupt}, {"tolerance", a.tol}, {"step", a.step}, {"results", results},
         {"failed", failed}};
  print(a.common, j, t.str());
  return failed == 0 ? kOk : kCheckFailed;
}

// ---- erf -------------------------------------------------------------------

struct ErfArgs {
  Common common;
  std::string tap;
  Index input_size = 128;
  std::string out;
  std::string pgm;
  int random_inputs = 0;
  double mass = 0.95;
  Index stack_kernel = 0;
  Index stack_depth = 4;
  Index stack_channels = 4;
  bool no_rep = false;
  bool unfused = false;
};

void write_csv(const Eigen::ArrayXXd& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out.precision(9);
  for (Index i = 0; i < map.rows(); ++i) {
    for (Index j = 0; j < map.cols(); ++j) out << (j ? "," : "") << map(i, j);
    out << "\n";
  }
}

void write_pgm(const Eigen::ArrayXXd& map, const std::string& path) {
  std::string bytes = "P5\n" + std::to_string(map.cols()) + " " + std::to_string(map.rows()) + "\n255\n";
  const double peak = map.maxCoeff();
  for (Index i = 0; i < map.rows(); ++i)
    for (Index j = 0; j < map.cols(); ++j)
      bytes.push_back(static_cast<char>(peak > 0 ? static_cast<int>(std::lround(255.0 * map(i, j) / peak)) : 0));
  write_file_bytes(path, bytes);
}

int cmd_erf(const ErfArgs& a) {
  const std::uint64_t seed = a.common.rng_seed();
  std::unique_ptr<TapModel<float>> model;
  std::string tap = a.tap;
  std::vector<std::string> taps;
  if (a.stack_kernel > 0) {
    auto stack = std::make_unique<DepthwiseStack<float>>(a.stack_channels, a.stack_depth, a.stack_kernel, !a.no_rep,
                                                         seed);
    stack->randomize_bn(seed + 1);
    if (!a.unfused) stack->fuse();
    for (Index i = 1; i <= a.stack_depth; ++i) taps.push_back("layer" + std::to_string(i));
    if (tap.empty()) tap = taps.back();
    model = std::move(stack);
  } else {
    model = std::make_unique<Model<float>>(build_model<float>(a.common.model_config()));
    taps = Model<float>::tap_names();
    if (tap.empty()) tap = "N3";
  }
  if (std::find(taps.begin(), taps.end(), tap) == taps.end()) {
    std::string known;
    for (const auto& n : taps) known += " " + n;
    throw ConfigError("erf: unknown tap '" + tap + "' (available:" + known + ")");
  }
  const Shape in{1, model->in_channels(), a.input_size, a.input_size};
  Eigen::ArrayXXd map;
  if (a.random_inputs <= 0) {
    map = erf_map<float>(*model, tap, TensorF::ones(in));
  } else {
    Rng rng(seed);
    map = Eigen::ArrayXXd::Zero(a.input_size, a.input_size);
    for (int i = 0; i < a.random_inputs; ++i) map += erf_map<float>(*model, tap, TensorF::normal(in, rng));
    map /= map.sum() > 0 ? map.sum() : 1.0;
  }
  const double radius = erf_radius(map, a.mass);
  const Index support = erf_support_radius(map);
  if (!a.out.empty()) write_csv(map, a.out);
  if (!a.pgm.empty()) write_pgm(map, a.pgm);
  Json j{{"tap", tap}, {"input", {a.input_size, a.input_size}}, {"mass", a.mass}, {"radius", radius},
         {"support_radius", support}};
  if (!a.out.empty()) j["csv"] = a.out;
  if (!a.pgm.empty()) j["pgm"] = a.pgm;
  print(a.common, j,
        fmt("tap %s: %.0f%%-mass radius %.0f, support radius %lld (input %lldx%lld)\n", tap.c_str(), a.mass * 100,
            radius, (long long)support, (long long)a.input_size, (long long)a.input_size));
  return kOk;
}

// ---- toy-train -------------------------------------------------------------

struct ToyArgs {
  Common common;
  Index steps = 500;
  double lr = 0.1;
  Index samples = 64;
  Index log_every = 50;
  std::string csv;
  bool check = false;
};

int cmd_toy(const ToyArgs& a) {
  const std::uint64_t seed = a.common.rng_seed();
  ModelConfig cfg = a.common.config.empty() ? toy_model_config(seed) : a.common.model_config();
  ToyClassifier net(cfg);
  const ToyDataset data = make_blob_dataset(a.samples, 32, seed);
  const auto t0 = std::chrono::steady_clock::now();
  const ToyResult r = train_toy(net, data, {a.steps, a.lr, seed});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw ConfigError("cannot write '" + a.csv + "'");
    out.precision(9);
    out << "step,loss,accuracy\n";
    for (std::size_t i = 0; i < r.losses.size(); ++i) out << i << "," << r.losses[i] << "," << r.accuracies[i] << "\n";
  }
  std::ostringstream t;
  if (a.log_every > 0)
    for (std::size_t i = 0; i < r.losses.size(); i += static_cast<std::size_t>(a.log_every))
      t << fmt("step %4zu  loss %.6f  accuracy %.3f\n", i, r.losses[i], r.accuracies[i]);
  const auto hit = r.first_step_reaching(0.95);
  const bool mono = non_increasing(moving_average(r.losses, 20));
  Json j{{"samples", a.samples}, {"steps", a.steps}, {"lr", a.lr}, {"final_loss", r.final_loss()},
         {"final_accuracy", r.final_accuracy()}, {"first_step_95", hit ? Json(*hit) : Json(nullptr)},
         {"moving_average_monotone", mono}, {"seconds", secs}, {"losses", r.losses}};
  if (r.diverged_at) {
    j["diverged_at"] = *r.diverged_at;
    t << fmt("diverged at step %lld: %s\n", (long long)*r.diverged_at, r.divergence.c_str());
    print(a.common, j, t.str());
    return kNumeric;
  }
  t << fmt("final loss %.6f  accuracy %.3f  first step >= 95%%: %s  20-step moving average %s  (%.1f s)\n",
           r.final_loss(), r.final_accuracy(), hit ? std::to_string(*hit).c_str() : "none",
           mono ? "monotone" : "not monotone", secs);
  print(a.common, j, t.str());
  if (a.check && !(hit && mono)) return kCheckFailed;
  return kOk;
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  Common common;
  std::string preset;
  Index input_size = 640;
};

int cmd_ablate(const AblateArgs& a) {
  const auto rows = run_ablation(a.preset, a.common.model_config(), a.input_size);
  Json jr = Json::array();
  std::ostringstream t;
  t << "# " << CostReport::kConvention << "; input " << a.input_size << "x" << a.input_size << "\n";
  t << fmt("%-22s %12s %10s %12s %10s\n", "config", "params", "GFLOPs", "fused", "GFLOPs");
  for (const auto& r : rows) {
    Json toggles = Json::object();
    for (const auto& [k, v] : r.toggles) toggles[k] = v;
    jr.push_back({{"label", r.label}, {"toggles", toggles}, {"train_params", r.train_params},
                  {"train_flops", 2 * r.train_macs}, {"fused_params", r.fused_params},
                  {"fused_flops", 2 * r.fused_macs}});
    t << fmt("%-22s %12lld %10.2f %12lld %10.2f\n", r.label.c_str(), (long long)r.train_params,
             2.0 * r.train_macs / 1e9, (long long)r.fused_params, 2.0 * r.fused_macs / 1e9);
  }
  Json j{{"preset", a.preset}, {"input", {a.input_size, a.input_size}}, {"rows", jr}};
  bool ok = true;
  if (a.preset == "table3") {
    for (std::size_t i = 1; i < rows.size(); ++i) ok = ok && rows[i].train_params > rows[i - 1].train_params;
    j["params_strictly_increasing"] = ok;
    t << "params strictly increasing down the grid: " << (ok ? "yes" : "NO") << "\n";
  } else if (a.preset == "table2") {
    // Rows 2 and 3 differ only in the Rep toggle.
    ok = rows[1].fused_params == rows[2].fused_params;
    j["rep_fused_params_unchanged"] = ok;
    t << "Rep toggle leaves fused params unchanged: " << (ok ? "yes" : "NO") << "\n";
  }
  print(a.common, j, t.str());
  return ok ? kOk : kCheckFailed;
}

// ---- build / forward / fuse ------------------------------------------------

struct BuildArgs {
  Common common;
  std::string out;
  bool randomize_bn = false;
};

int cmd_build(const BuildArgs& a) {
  const ModelConfig cfg = a.common.model_config();
  Model<float> model = build_model<float>(cfg);
  if (a.randomize_bn) model.randomize_bn(cfg.seed + 1);
  const auto entries = collect_weights(model);
  if (!a.out.empty()) write_file_bytes(a.out, encode_weights(entries));
  Index params = 0;
  model.visit([&](const std::string&, VarF& v, bool learnable) { params += learnable ? v.value().numel() : 0; });
  Json j{{"config", Json::parse(model_config_to_json(cfg))}, {"entries", entries.size()}, {"learnable", params}};
  if (!a.out.empty()) j["weights"] = a.out;
  std::ostringstream t;
  t << model_config_to_json(cfg) << "\n";
  t << entries.size() << " tensors, " << params << " learnable values";
  if (!a.out.empty()) t << ", written to " << a.out;
  t << "\n";
  print(a.common, j, t.str());
  return kOk;
}

struct ForwardArgs {
  Common common;
  std::string weights;
  Index input_size = 64;
  bool fuse = false;
};

int cmd_forward(const ForwardArgs& a) {
  Model<float> model = build_model<float>(a.common.model_config());
  if (!a.weights.empty()) load_weights(model, a.weights);
  if (a.fuse) model.fuse();
  Rng rng(a.common.rng_seed());
  const VarF x(TensorF::normal({1, model.in_channels(), a.input_size, a.input_size}, rng));
  NoGradGuard guard;
  const auto y = model.forward(x);
  Json outs = Json::array();
  std::ostringstream t;
  for (int i = 0; i < 3; ++i) {
    const TensorF& v = y[i].value();
    const double sum = v.data().template cast<double>().sum();
    const double max_abs = v.empty() ? 0.0 : static_cast<double>(v.data().abs().maxCoeff());
    outs.push_back({{"name", "out" + std::to_string(i + 3)}, {"shape", shape_json(v.shape())}, {"sum", sum},
                    {"max_abs", max_abs}});
    t << fmt("out%d %s sum %.9g max|.| %.9g\n", i + 3, v.shape().str().c_str(), sum, max_abs);
  }
  print(a.common, Json{{"input", {a.input_size, a.input_size}}, {"outputs", outs}}, t.str());
  return kOk;
}

struct FuseArgs {
  Common common;
  std::string weights;
  std::string out;
};

int cmd_fuse(const FuseArgs& a) {
  Model<float> model = build_model<float>(a.common.model_config());
  load_weights(model, a.weights);
  model.fuse();
  save_weights(model, a.out);
  Index units = 0;
  model.for_each_rep([&](RepHDWConv<float>&) { ++units; });
  print(a.common, Json{{"weights", a.out}, {"fused_units", units}},
        fmt("fused %lld RepHDW units, written to %s\n", (long long)units, a.out.c_str()));
  return kOk;
}

// ---- accept ----------------------------------------------------------------

struct AcceptArgs {
  Common common;
  std::vector<int> only;
};

int cmd_accept(const AcceptArgs& a) {
  Json results = Json::array();
  int failed = 0;
  for (const auto& check : acceptance_checks()) {
    if (!a.only.empty() && std::find(a.only.begin(), a.only.end(), check.id) == a.only.end()) continue;
    const AcceptanceResult r = run_acceptance(check, a.common.rng_seed());
    failed += r.passed ? 0 : 1;
    results.push_back({{"id", r.id}, {"title", r.title}, {"passed", r.passed}, {"detail", r.detail},
                       {"seconds", r.seconds}});
    if (!a.common.json()) std::cout << format_acceptance(r) << std::endl;
  }
  if (a.common.json()) std::cout << Json{{"results", results}, {"failed", failed}}.dump(2) << "\n";
  return failed == 0 ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reparameterized depthwise blocks, MAFPN neck and analysis tools"};
  app.require_subcommand(1);

  SummaryArgs summary;
  auto* s = app.add_subcommand("summary", "Parameter / MAC breakdown");
  add_common(s, summary.common);
  s->add_option("--input-size", summary.input_size, "Square input size (multiple of 32)");
  s->add_flag("--fused", summary.fused, "Count the fused (deploy) model");
  s->add_flag("--totals-only", summary.totals_only, "Omit per-layer rows");

  Common inventory;
  auto* inv = app.add_subcommand("inventory", "Layer inventory");
  add_common(inv, inventory);

  Common wiring;
  auto* w = app.add_subcommand("wiring", "Neck wiring edge list");
  add_common(w, wiring);

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify-fuse", "Compare branch and fused evaluation");
  add_common(v, verify.common);
  v->add_option("--weights", verify.weights, "Weight file (default: fresh model with random BN)");
  v->add_option("--trials", verify.trials, "Random inputs per check");
  v->add_option("--tol", verify.tol, "Absolute tolerance");
  v->add_flag("--per-unit", verify.per_unit, "Check every RepHDW unit separately");
  v->add_option("--input-size", verify.input_size, "Square input size for the whole-model check");
  v->add_flag("--double", verify.use_double, "Evaluate in 64-bit");
  v->add_flag("--relative", verify.relative, "Apply --tol to the deviation divided by max |output|");

  GradArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks (64-bit)");
  add_common(g, grad.common, false);
  g->add_option("--ops", grad.ops, "Comma-separated check names or prefixes, or 'all'")->delimiter(',');
  g->add_option("--corrupt-op", grad.corrupt, "Test hook: scale this op's backward by 1.5");
  g->add_option("--tol", grad.tol, "Relative tolerance");
  g->add_option("--step", grad.step, "Central-difference step");

  ErfArgs erf;
  auto* e = app.add_subcommand("erf", "Effective receptive field map");
  add_common(e, erf.common);
  e->add_option("--tap", erf.tap, "Activation tap (model: stem, P2..P5, P'5, P'4, P'3, N3..N5, out3..out5)");
  e->add_option("--input-size", erf.input_size, "Square input size");
  e->add_option("--out", erf.out, "CSV output path");
  e->add_option("--pgm", erf.pgm, "PGM heatmap output path");
  e->add_option("--random", erf.random_inputs, "Average over this many random inputs instead of all-ones");
  e->add_option("--mass", erf.mass, "Mass fraction for the radius")->check(CLI::Range(0.0, 1.0));
  e->add_option("--stack-kernel", erf.stack_kernel, "Use a depthwise RepHDW stack with this kernel");
  e->add_option("--stack-depth", erf.stack_depth, "Stack depth");
  e->add_option("--stack-channels", erf.stack_channels, "Stack channels");
  e->add_flag("--no-rep", erf.no_rep, "Stack units without small branches");
  e->add_flag("--unfused", erf.unfused, "Evaluate the stack on the branch path");

  ToyArgs toy;
  auto* t = app.add_subcommand("toy-train", "Train the reduced-width classifier on synthetic blobs");
  add_common(t, toy.common);
  t->add_option("--steps", toy.steps, "SGD steps");
  t->add_option("--lr", toy.lr, "Learning rate");
  t->add_option("--samples", toy.samples, "Dataset size");
  t->add_option("--log-every", toy.log_every, "Log interval (0 = off)");
  t->add_option("--csv", toy.csv, "Loss curve CSV path");
  t->add_flag("--check", toy.check, "Exit 1 unless >= 95% accuracy and a monotone 20-step moving average");

  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "Params / FLOPs across toggle combinations");
  add_common(ab, ablate.common);
  ab->add_option("--preset", ablate.preset, "table2 | table3 | table5")->required();
  ab->add_option("--input-size", ablate.input_size, "Square input size");

  BuildArgs build;
  auto* b = app.add_subcommand("build", "Build a model and optionally write its weights");
  add_common(b, build.common);
  b->add_option("--out", build.out, "Weight file to write");
  b->add_flag("--randomize-bn", build.randomize_bn, "Random BN affine parameters and statistics");

  ForwardArgs fwd;
  auto* f = app.add_subcommand("forward", "Run the model on a seeded random input");
  add_common(f, fwd.common);
  f->add_option("--weights", fwd.weights, "Weight file");
  f->add_option("--input-size", fwd.input_size, "Square input size (multiple of 32)");
  f->add_flag("--fuse", fwd.fuse, "Fuse RepHDW units first");

  FuseArgs fuse;
  auto* fu = app.add_subcommand("fuse", "Fuse a weight file's RepHDW units");
  add_common(fu, fuse.common);
  fu->add_option("--weights", fuse.weights, "Input weight file")->required();
  fu->add_option("--out", fuse.out, "Output weight file")->required();

  AcceptArgs accept;
  auto* ac = app.add_subcommand("accept", "Run the acceptance criteria");
  add_common(ac, accept.common, false);
  ac->add_option("--only", accept.only, "Criterion ids")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*s) return cmd_summary(summary);
    if (*inv) return cmd_inventory(inventory);
    if (*w) return cmd_wiring(wiring);
    if (*v) return verify.use_double ? verify_fuse<double>(verify) : verify_fuse<float>(verify);
    if (*g) return cmd_gradcheck(grad);
    if (*e) return cmd_erf(erf);
    if (*t) return cmd_toy(toy);
    if (*ab) return cmd_ablate(ablate);
    if (*b) return cmd_build(build);
    if (*f) return cmd_forward(fwd);
    if (*fu) return cmd_fuse(fuse);
    if (*ac) return cmd_accept(accept);
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return kNumeric;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
