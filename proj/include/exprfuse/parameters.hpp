#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "exprfuse/rng.hpp"
#include "exprfuse/tensor.hpp"

namespace exprfuse {

struct NamedTensor {
    std::string name;
    Tensor* tensor = nullptr;
};

// Ordered view of a model's learnable tensors. The order is stable and is
// the order used for checkpoints and optimizer state.
using ParameterList = std::vector<NamedTensor>;

std::size_t count_parameters(const ParameterList& params);

// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

Tensor zeros_parameter(Shape shape);
Tensor ones_parameter(Shape shape);

// Deep copy of parameter values, used for best-model tracking and
// learning-rate-finder restores.
using ParameterSnapshot = std::vector<std::vector<double>>;
ParameterSnapshot snapshot(const ParameterList& params);
void restore(const ParameterList& params, const ParameterSnapshot& saved);

}  // namespace exprfuse
