#include "maf/mafpn.hpp"

#include <map>
#include <sstream>

namespace maf {

const char* lane_kind_name(LaneKind kind) noexcept {
  switch (kind) {
    case LaneKind::BackboneAssist: return "backbone-assist";
    case LaneKind::Same: return "same";
    case LaneKind::Upsample: return "upsample";
    case LaneKind::CrossDown: return "cross-down";
    case LaneKind::BottomUp: return "bottom-up";
    case LaneKind::CrossUp: return "cross-up";
    case LaneKind::Projection: return "projection";
  }
  return "unknown";
}

void NeckConfig::validate() const {
  for (Index w : widths)
    if (w <= 0) throw ConfigError("neck.widths must be positive");
  if (!(assist_ratio > 0.0 && assist_ratio <= 1.0)) {
    throw ConfigError("neck.assist_ratio must be in (0, 1]");
  }
  for (Index k : kernels)
    if (k <= 0 || k % 2 == 0) throw ConfigError("neck.kernels must be odd and positive");
  if (n_bottlenecks < 1) throw ConfigError("neck.n_bottlenecks must be >= 1");
  if (!(expansion > 0.0)) throw ConfigError("neck.expansion must be positive");
}

std::set<std::string> backbone_lineage(const std::vector<WiringEdge>& edges, const std::string& node) {
  std::multimap<std::string, std::string> parents;
  for (const auto& e : edges) parents.emplace(e.dst, e.src);
  std::set<std::string> seen{node}, lineage;
  std::vector<std::string> stack{node};
  while (!stack.empty()) {
    const std::string cur = stack.back();
    stack.pop_back();
    const auto [lo, hi] = parents.equal_range(cur);
    if (lo == hi && cur.find('\'') == std::string::npos) lineage.insert(cur);
    for (auto it = lo; it != hi; ++it)
      if (seen.insert(it->second).second) stack.push_back(it->second);
  }
  return lineage;
}

std::string format_edges(const std::vector<WiringEdge>& edges) {
  std::ostringstream os;
  for (const auto& e : edges) os << e.src << " -> " << e.dst << " [" << e.kind << "]\n";
  return os.str();
}

}  // namespace maf
