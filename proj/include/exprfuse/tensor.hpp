#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace exprfuse {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array of doubles. Values are fixed after construction
// except through `mutable_values()`, which only optimizers and loaders use.
// The gradient buffer is absent until something accumulates into it.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor filled(Shape shape, double value, bool requires_grad = false);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return values_.size(); }

    std::span<const double> values() const { return values_; }
    std::span<double> mutable_values() { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) { requires_grad_ = on; }

    bool has_grad() const { return !values_.empty() && grad_.size() == values_.size(); }
    std::span<const double> grad() const { return grad_; }
    std::span<double> mutable_grad() { return grad_; }
    // Adds `delta` into the gradient, allocating a zero buffer on first use.
    void accumulate_grad(std::span<const double> delta);
    void ensure_grad();
    // Drops the gradient buffer entirely (has_grad() becomes false).
    void clear_grad();

   private:
    Shape shape_;
    std::vector<double> values_;
    bool requires_grad_ = false;
    std::vector<double> grad_;
};

bool all_finite(std::span<const double> values);

}  // namespace exprfuse
