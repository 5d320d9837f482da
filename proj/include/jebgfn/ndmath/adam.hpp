#pragma once

#include <cstdint>
#include <vector>

#include "jebgfn/ndmath/nn.hpp"

namespace jebgfn::nd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied outside the moment estimates
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;  // one per parameter, in ParamSet order
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

AdamState make_adam(const ParamSet& params, AdamConfig config);

/// One bias-corrected Adam update of every parameter, then zeroes the grads.
/// `lr_scale` holds optional per-parameter learning-rate multipliers in
/// ParamSet order; empty means 1 everywhere.
void adam_step(ParamSet& params, AdamState& state, const std::vector<double>& lr_scale = {});

}  // namespace jebgfn::nd
