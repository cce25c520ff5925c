#include "exprfuse/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "exprfuse/errors.hpp"

namespace exprfuse {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

namespace {
void check_dims(const Shape& shape) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
    }
}
}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)), values_(numel(shape_), 0.0), requires_grad_(requires_grad) {
    check_dims(shape_);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
    check_dims(shape_);
    if (values_.size() != numel(shape_)) {
        throw DimensionError("tensor of shape " + to_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                             " values, got " + std::to_string(values_.size()));
    }
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.values_.begin(), t.values_.end(), value);
    return t;
}

void Tensor::ensure_grad() {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> delta) {
    if (delta.size() != values_.size()) {
        throw DimensionError("gradient of size " + std::to_string(delta.size()) + " does not match tensor " +
                             to_string(shape_));
    }
    ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) grad_[i] += delta[i];
}

void Tensor::clear_grad() {
    grad_.clear();
    grad_.shrink_to_fit();
}

bool all_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace exprfuse
