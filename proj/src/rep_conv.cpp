#include "maf/rep_conv.hpp"

namespace maf {

std::vector<Index> default_small_kernels(Index large) {
  if (large < 5 || large % 2 == 0) {
    throw ConfigError("default_small_kernels: large kernel must be odd and >= 5, got " +
                      std::to_string(large));
  }
  std::vector<Index> ks;
  for (Index k = large - 2; k >= 3; k -= 2) ks.push_back(k);
  return ks;
}

void validate_kernel_set(Index large, std::span<const Index> small) {
  if (large < 1 || large % 2 == 0) {
    throw ConfigError("rephdw: large kernel must be odd and positive, got " + std::to_string(large));
  }
  Index prev = large;
  for (Index k : small) {
    if (k % 2 == 0) throw ConfigError("rephdw: small kernel " + std::to_string(k) + " is not odd");
    if (k < 3) throw ConfigError("rephdw: small kernel " + std::to_string(k) + " is below 3");
    if (k >= prev) {
      throw ConfigError("rephdw: small kernels must be strictly decreasing and below the large kernel " +
                        std::to_string(large));
    }
    prev = k;
  }
}

}  // namespace maf
