#include "exprfuse/parameters.hpp"

#include <algorithm>
#include <cmath>

#include "exprfuse/errors.hpp"

namespace exprfuse {

std::size_t count_parameters(const ParameterList& params) {
    std::size_t total = 0;
    for (const auto& p : params) total += p.tensor->size();
    return total;
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor t({fan_in, fan_out}, true);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.mutable_values()) v = rng.uniform(-limit, limit);
    return t;
}

Tensor zeros_parameter(Shape shape) { return Tensor(std::move(shape), true); }

Tensor ones_parameter(Shape shape) { return Tensor::filled(std::move(shape), 1.0, true); }

ParameterSnapshot snapshot(const ParameterList& params) {
    ParameterSnapshot out;
    out.reserve(params.size());
    for (const auto& p : params) out.emplace_back(p.tensor->values().begin(), p.tensor->values().end());
    return out;
}

void restore(const ParameterList& params, const ParameterSnapshot& saved) {
    if (saved.size() != params.size()) throw ContractError("snapshot does not match the parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor->mutable_values();
        if (dst.size() != saved[i].size()) throw ContractError("snapshot size mismatch for " + params[i].name);
        std::copy(saved[i].begin(), saved[i].end(), dst.begin());
    }
}

}  // namespace exprfuse
