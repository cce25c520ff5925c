#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "exprfuse/tensor.hpp"

namespace exprfuse {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// is alive and has not been cleared.
class Var {
   public:
    Var() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }

    const Shape& shape() const;
    std::size_t size() const;
    std::span<const double> value() const;
    // Gradient of the most recent backward pass; empty if none reached here.
    std::span<const double> grad() const;

    Tensor to_tensor() const;

   private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Records operations in execution order (which is a topological order) and
// replays their backward rules in reverse.
//
// Leaves created with `bind` refer to caller-owned tensors; those tensors
// must outlive the tape and stay unmodified until backward has run.
// Calling backward twice accumulates into bound tensors twice.
class Tape {
   public:
    // Pullback receives the gradient flowing into the node's output and the
    // output value itself. It adds contributions into its inputs through
    // `Tape::grad_of`.
    using Pullback =
        std::function<void(Tape&, std::span<const double> out_grad, std::span<const double> out_value)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var constant(Shape shape, std::vector<double> values);
    Var bind(Tensor& tensor);

    // Appends an operation. Non-finite output values raise NumericError
    // naming `op`. The pullback is dropped when no input needs a gradient.
    Var record(std::string op, Shape shape, std::vector<double> value, std::initializer_list<Var> inputs,
               Pullback pullback);
    Var record(std::string op, Shape shape, std::vector<double> value, std::span<const Var> inputs,
               Pullback pullback);

    // Runs reverse mode from a scalar loss. Every bound tensor that requires
    // a gradient receives an (possibly zero) accumulated gradient.
    void backward(Var loss);

    bool needs_grad(Var v) const { return node(v).needs_grad; }
    // Mutable gradient buffer of `v`, zero-allocated on first access.
    std::span<double> grad_of(Var v);

    const Shape& shape(std::size_t id) const { return nodes_.at(id).shape; }
    std::span<const double> value(std::size_t id) const;
    std::span<const double> grad(std::size_t id) const { return nodes_.at(id).grad; }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

   private:
    struct Node {
        std::string op;
        Shape shape;
        std::vector<double> owned;
        Tensor* bound = nullptr;
        std::vector<double> grad;
        bool needs_grad = false;
        Pullback pullback;
    };

    const Node& node(Var v) const;
    Node& node(Var v);
    Var push(Node n);

    std::deque<Node> nodes_;
};

}  // namespace exprfuse
