#pragma once

// Binary weight container, all integers little-endian:
//
//   "MAFW" | u32 version | u32 entry count
//   per entry: u32 name length | UTF-8 name | u32 dtype | u32 rank | rank x u64 dims | payload
//
// dtype 0 is 32-bit IEEE float. Entries appear in model visit order, so a
// save -> load -> save cycle reproduces the file byte for byte.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "maf/model.hpp"

namespace maf {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct WeightEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::string encode_weights(const std::vector<WeightEntry>& entries);
/// Throws ParseError (with byte offset) on truncation, bad magic, unsupported
/// version or dtype.
std::vector<WeightEntry> decode_weights(const std::string& bytes);

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

/// Every named tensor of the model, including running statistics and any fused kernels.
template <typename Scalar>
std::vector<WeightEntry> collect_weights(Model<Scalar>& model) {
  std::vector<WeightEntry> out;
  model.visit([&](const std::string& name, Var<Scalar>& v, bool) {
    const Tensor<float> t = v.value().template cast<float>();
    out.push_back({name, t.shape(), std::vector<float>(t.ptr(), t.ptr() + t.numel())});
  });
  return out;
}

/// Installs entries into the model. Fused kernels present in the file are
/// installed and switched on; every other model tensor must be present with
/// a matching shape, and unknown names are rejected.
template <typename Scalar>
void apply_weights(Model<Scalar>& model, const std::vector<WeightEntry>& entries) {
  std::map<std::string, const WeightEntry*> by_name;
  for (const auto& e : entries) {
    if (!by_name.emplace(e.name, &e).second) throw ConfigError("weights: duplicate entry '" + e.name + "'");
  }
  auto to_tensor = [](const WeightEntry& e) {
    Tensor<float> t(e.shape);
    std::copy(e.values.begin(), e.values.end(), t.ptr());
    return t.template cast<Scalar>();
  };
  model.for_each_rep([&](RepHDWConv<Scalar>& r) {
    auto w = by_name.find(r.name() + ".fused.weight");
    auto b = by_name.find(r.name() + ".fused.bias");
    if (w == by_name.end() && b == by_name.end()) {
      r.clear_fused();
      r.set_deploy(false);
      return;
    }
    if (w == by_name.end() || b == by_name.end()) {
      throw ConfigError("weights: " + r.name() + " has an incomplete fused kernel");
    }
    r.set_fused(to_tensor(*w->second), to_tensor(*b->second));
    r.set_deploy(true);
  });
  std::size_t used = 0;
  model.visit([&](const std::string& name, Var<Scalar>& v, bool) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("weights: missing entry '" + name + "'");
    if (!(it->second->shape == v.shape())) {
      throw ShapeError("weights", name + " has shape " + it->second->shape.str() + ", model expects " +
                                      v.shape().str());
    }
    v.mutable_value() = to_tensor(*it->second);
    ++used;
  });
  if (used != by_name.size()) {
    for (const auto& [name, e] : by_name) {
      bool known = false;
      model.visit([&](const std::string& n, Var<Scalar>&, bool) { known = known || n == name; });
      if (!known) throw ConfigError("weights: unknown entry '" + name + "'");
    }
  }
}

template <typename Scalar>
void save_weights(Model<Scalar>& model, const std::string& path) {
  write_file_bytes(path, encode_weights(collect_weights(model)));
}

template <typename Scalar>
void load_weights(Model<Scalar>& model, const std::string& path) {
  apply_weights(model, decode_weights(read_file_bytes(path)));
}

}  // namespace maf
