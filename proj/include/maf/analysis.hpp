#pragma once

#include <Eigen/Core>

#include <string>
#include <utility>
#include <vector>

#include "maf/model.hpp"

namespace maf {

/// Runs `forward` on an empty batch of shape (0, channels, h, w) with a cost
/// recorder installed. Only shapes propagate, so this is cheap at any resolution.
template <typename Scalar, typename Forward>
CostReport trace_costs(Forward&& forward, Index channels, Index h, Index w) {
  CostReport report;
  report.input_h = h;
  report.input_w = w;
  CostRecorder recorder;
  {
    NoGradGuard guard;
    forward(Var<Scalar>(Tensor<Scalar>({0, channels, h, w})));
  }
  report.rows = recorder.take();
  return report;
}

/// Parameter / MAC breakdown of the model in its current (train or fused) mode.
/// Input dims must be multiples of 32.
template <typename Scalar>
CostReport count_costs(Model<Scalar>& model, Index h, Index w) {
  return trace_costs<Scalar>([&](const Var<Scalar>& x) { model.forward(x); }, model.in_channels(), h, w);
}

/// Closed-form parameter saving of fusing every RepHDW unit:
/// sum over units of (small-branch conv weights + every branch BN's gamma/beta - fused bias).
template <typename Scalar>
Index fusion_param_delta(Model<Scalar>& model) {
  Index delta = 0;
  model.for_each_rep([&](RepHDWConv<Scalar>& r) {
    const Index c = r.channels();
    for (Index k : r.small_kernels()) delta += c * k * k;
    delta += 2 * c * static_cast<Index>(1 + r.small_kernels().size());
    delta -= c;
  });
  return delta;
}

/// Sorted distinct large depthwise kernels of the RepHDW units in each section.
struct KernelSchedule {
  std::vector<Index> backbone;
  std::vector<Index> neck;
  std::vector<Index> head;
};
KernelSchedule kernel_schedule(const std::vector<LayerInfo>& inventory);

/// Normalized |d(center activation)/d(input)| map, summed over input channels.
/// The center activation is the tap's value at (h/2, w/2), summed over channels.
template <typename Scalar>
Eigen::ArrayXXd erf_map(TapModel<Scalar>& model, const std::string& tap, const Tensor<Scalar>& input) {
  Var<Scalar> x(input, true);
  auto taps = model.forward_taps(x);
  const Var<Scalar>* target = nullptr;
  for (const auto& [name, v] : taps)
    if (name == tap) target = &v;
  if (!target) throw ConfigError("erf: unknown tap '" + tap + "'");
  const Shape ts = target->shape();
  backward(pick_sum(*target, ts.h / 2, ts.w / 2));
  const Shape s = input.shape();
  Eigen::ArrayXXd map = Eigen::ArrayXXd::Zero(s.h, s.w);
  if (x.has_grad()) {
    for (Index n = 0; n < s.n; ++n)
      for (Index c = 0; c < s.c; ++c)
        for (Index i = 0; i < s.h; ++i)
          for (Index j = 0; j < s.w; ++j) map(i, j) += std::abs(static_cast<double>(x.grad()(n, c, i, j)));
  }
  const double total = map.sum();
  if (total > 0.0) map /= total;
  return map;
}

/// Smallest Chebyshev radius around (rows/2, cols/2) enclosing at least `mass`
/// of the map's total.
double erf_radius(const Eigen::ArrayXXd& map, double mass = 0.95);

/// Chebyshev radius of the nonzero support around the center.
Index erf_support_radius(const Eigen::ArrayXXd& map);

/// One configuration of an ablation preset with its costs in both modes.
struct AblationRow {
  std::string label;
  std::vector<std::pair<std::string, bool>> toggles;
  Index train_params = 0;
  Index train_macs = 0;
  Index fused_params = 0;
  Index fused_macs = 0;
};

/// Presets: "table2" (ELAN / large kernel / Rep), "table3" (SAF / AAF),
/// "table5" (MAFPN / RepHELAN / GHKS). Unknown names raise ConfigError.
std::vector<AblationRow> run_ablation(const std::string& preset, const ModelConfig& base, Index input_size);
std::vector<std::string> ablation_presets();

}  // namespace maf
