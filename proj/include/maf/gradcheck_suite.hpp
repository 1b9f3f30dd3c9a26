#pragma once

#include <functional>
#include <string>
#include <vector>

#include "maf/gradcheck.hpp"

namespace maf {

struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(const GradCheckOptions&)> run;
};

/// Every registered check: conv2d over k {1,3,7} x {dense, depthwise} x stride {1,2},
/// the element-wise and layout ops, batch norm in both modes, and whole
/// RepHDW / bottleneck / HELAN / SAF / AAF modules (inputs and parameters).
std::vector<GradCheckCase> gradcheck_cases();

/// Cases whose name equals a filter or starts with "<filter>_". "all" selects
/// everything. Empty filters or filters that match nothing raise ConfigError.
std::vector<GradCheckCase> select_gradcheck_cases(const std::vector<std::string>& filters);

}  // namespace maf
