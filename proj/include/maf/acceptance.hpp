#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace maf {

struct AcceptanceResult {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;  // 0 = no runtime bound
};

struct AcceptanceCheck {
  int id;
  std::string title;
  double budget_seconds;
  std::function<AcceptanceResult(std::uint64_t seed)> run;
};

/// Criteria 1..11, in order.
std::vector<AcceptanceCheck> acceptance_checks();

/// Runs one check, timing it and turning exceptions into failures.
AcceptanceResult run_acceptance(const AcceptanceCheck& check, std::uint64_t seed);

/// "PASS [3] BN-fold identity: ... (0.4 s)".
std::string format_acceptance(const AcceptanceResult& r);

}  // namespace maf
