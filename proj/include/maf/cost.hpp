#pragma once

#include <string>
#include <vector>

#include "maf/tensor.hpp"

namespace maf {

/// One row of a parameter / multiply-accumulate breakdown.
struct CostRow {
  std::string name;
  std::string kind;
  Index params = 0;       // learnable
  Index buffers = 0;      // non-learnable (BN running statistics)
  Index macs = 0;         // per image
  Shape output{};
};

/// Parameter and MAC totals at a given input resolution. FLOPs = 2 * MACs.
struct CostReport {
  Index input_h = 0;
  Index input_w = 0;
  std::vector<CostRow> rows;

  Index total_params() const {
    Index t = 0;
    for (const auto& r : rows) t += r.params;
    return t;
  }
  Index total_buffers() const {
    Index t = 0;
    for (const auto& r : rows) t += r.buffers;
    return t;
  }
  Index total_macs() const {
    Index t = 0;
    for (const auto& r : rows) t += r.macs;
    return t;
  }
  Index total_flops() const { return 2 * total_macs(); }

  static constexpr const char* kConvention = "FLOPs = 2 x MACs; MACs counted per image for conv layers only";
};

/// Learnable parameters of a conv: (in/groups) * out * k^2 (+ out with bias).
inline Index conv_params(Index in, Index out, Index kernel, Index groups, bool bias) {
  return (in / groups) * out * kernel * kernel + (bias ? out : 0);
}

/// Multiply-accumulates of a conv: weight count times output pixels.
inline Index conv_macs(Index in, Index out, Index kernel, Index groups, Index out_h, Index out_w) {
  return (in / groups) * out * kernel * kernel * out_h * out_w;
}

/// Collects cost rows emitted by layers while it is active on this thread.
class CostRecorder {
 public:
  CostRecorder();
  ~CostRecorder();
  CostRecorder(const CostRecorder&) = delete;
  CostRecorder& operator=(const CostRecorder&) = delete;

  void add(CostRow row) { rows_.push_back(std::move(row)); }
  std::vector<CostRow> take() { return std::move(rows_); }

  /// Recorder installed on this thread, or nullptr.
  static CostRecorder* active() noexcept;

 private:
  CostRecorder* prev_;
  std::vector<CostRow> rows_;
};

inline void record_cost(CostRow row) {
  if (CostRecorder* r = CostRecorder::active()) r->add(std::move(row));
}

/// Static description of a layer, used for structural introspection.
struct LayerInfo {
  std::string name;
  std::string kind;  // conv | dwconv | bn | rephdw
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 0;
  Index stride = 1;
  Index groups = 1;
  std::vector<Index> small_kernels;  // rephdw only
  bool fused = false;                // rephdw only

  /// "backbone", "neck", "head", ... taken from the first name component.
  std::string stage() const { return name.substr(0, name.find('.')); }
};

}  // namespace maf
