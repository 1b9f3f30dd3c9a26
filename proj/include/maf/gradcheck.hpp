#pragma once

// Central finite-difference validation of recorded gradients, run in double
// precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "maf/autograd.hpp"

namespace maf {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so entries whose true gradient
  // is ~0 are compared on an absolute scale.
  double floor = 1e-3;
  // Upper bound on perturbed elements per input (0 = all).
  Index max_elements = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  Index elements_checked = 0;
  std::string worst;  // "input[i] element j"
  bool passed = false;
};

/// Loss builder: maps the differentiable inputs to a scalar Var.
using LossFn = std::function<VarD(const std::vector<VarD>&)>;

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h.
inline GradCheckResult gradcheck(const std::string& name, const LossFn& fn,
                                 const std::vector<TensorD>& inputs,
                                 const GradCheckOptions& opt = {}) {
  GradCheckResult res;
  res.name = name;
  std::vector<VarD> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  backward(fn(vars));

  std::mt19937_64 rng(opt.seed);
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Index n = inputs[i].numel();
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) idx[static_cast<std::size_t>(j)] = j;
    if (opt.max_elements > 0 && n > opt.max_elements) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(opt.max_elements));
    }
    const TensorD analytic = vars[i].has_grad() ? vars[i].grad() : TensorD(inputs[i].shape());
    for (Index j : idx) {
      std::vector<VarD> probe;
      for (const auto& t : inputs) probe.emplace_back(t, false);
      const double orig = inputs[i][j];
      double f[2];
      for (int side = 0; side < 2; ++side) {
        probe[i].mutable_value()[j] = orig + (side == 0 ? opt.step : -opt.step);
        NoGradGuard guard;
        f[side] = fn(probe).value()[0];
      }
      const double numeric = (f[0] - f[1]) / (2.0 * opt.step);
      const double err = relative_error(analytic[j], numeric, opt.floor);
      ++res.elements_checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = "input[" + std::to_string(i) + "] element " + std::to_string(j);
      }
    }
  }
  res.passed = res.max_rel_error <= opt.tolerance;
  return res;
}

}  // namespace maf
