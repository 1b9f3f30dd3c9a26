#include <cstdio>
#include <cstdlib>
#include <string>

#include "maf/acceptance.hpp"

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 0;
  int failed = 0;
  for (const auto& check : maf::acceptance_checks()) {
    const maf::AcceptanceResult r = maf::run_acceptance(check, seed);
    std::printf("%s\n", maf::format_acceptance(r).c_str());
    std::fflush(stdout);
    failed += r.passed ? 0 : 1;
  }
  std::printf("%d/11 criteria passed\n", 11 - failed);
  return failed == 0 ? 0 : 1;
}
