#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "icgm/tensor.hpp"

namespace icgm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter moment buffers, keyed by parameter name.
struct AdamState {
  AdamConfig config;
  int64_t step_count = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// One Adam update with bias correction, in place on the parameter values.
/// Gradients are read from each tensor's grad buffer and must be populated
/// and finite; a NaN/Inf gradient aborts the update before any parameter is
/// touched, naming the offending parameter.
void adam_step(std::vector<NamedTensor>& params, AdamState& state);

}  // namespace icgm
