#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deepred/tensor.hpp"

namespace deepred {

// First/second-moment state for a fixed parameter list, in the parameters'
// canonical order.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState init(std::span<Parameter* const> params, double beta1 = 0.9,
                        double beta2 = 0.999, double epsilon = 1e-8);
};

// One bias-corrected update from the accumulated gradients. Deterministic;
// parameters with zero gradient and zero moments stay exactly unchanged.
void adam_step(std::span<Parameter* const> params, AdamState& state, double lr);

// Scales all gradients so their global L2 norm does not exceed max_norm.
// Returns the pre-clip norm. Summation order is the parameter order.
double clip_global_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace deepred
