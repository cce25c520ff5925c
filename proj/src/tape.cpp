#include "exprfuse/tape.hpp"

#include "exprfuse/errors.hpp"

namespace exprfuse {

const Shape& Var::shape() const { return tape_->shape(id_); }
std::size_t Var::size() const { return value().size(); }
std::span<const double> Var::value() const { return tape_->value(id_); }
std::span<const double> Var::grad() const { return tape_->grad(id_); }

Tensor Var::to_tensor() const {
    auto v = value();
    return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape_ != this) throw ContractError("variable belongs to a different tape");
    return nodes_.at(v.id_);
}

Tape::Node& Tape::node(Var v) {
    if (v.tape_ != this) throw ContractError("variable belongs to a different tape");
    return nodes_.at(v.id_);
}

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

std::span<const double> Tape::value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.bound) return n.bound->values();
    return n.owned;
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.shape = value.shape();
    auto v = value.values();
    n.owned.assign(v.begin(), v.end());
    return push(std::move(n));
}

Var Tape::constant(Shape shape, std::vector<double> values) { return constant(Tensor(std::move(shape), std::move(values))); }

Var Tape::bind(Tensor& tensor) {
    Node n;
    n.op = "leaf";
    n.shape = tensor.shape();
    n.bound = &tensor;
    n.needs_grad = tensor.requires_grad();
    return push(std::move(n));
}

Var Tape::record(std::string op, Shape shape, std::vector<double> value, std::initializer_list<Var> inputs,
                 Pullback pullback) {
    return record(std::move(op), std::move(shape), std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(pullback));
}

Var Tape::record(std::string op, Shape shape, std::vector<double> value, std::span<const Var> inputs,
                 Pullback pullback) {
    if (value.size() != numel(shape)) {
        throw DimensionError(op + ": produced " + std::to_string(value.size()) + " values for shape " + to_string(shape));
    }
    if (!all_finite(value)) throw NumericError(op + ": non-finite value in forward pass");
    Node n;
    n.op = std::move(op);
    n.shape = std::move(shape);
    n.owned = std::move(value);
    for (const Var& in : inputs) n.needs_grad = n.needs_grad || node(in).needs_grad;
    if (n.needs_grad) n.pullback = std::move(pullback);
    return push(std::move(n));
}

std::span<double> Tape::grad_of(Var v) {
    Node& n = node(v);
    const std::size_t count = numel(n.shape);
    if (n.grad.size() != count) n.grad.assign(count, 0.0);
    return n.grad;
}

void Tape::backward(Var loss) {
    const Node& root = node(loss);
    if (numel(root.shape) != 1) {
        throw ContractError("backward needs a scalar loss, got shape " + to_string(root.shape));
    }
    for (Node& n : nodes_) n.grad.clear();
    grad_of(loss)[0] = 1.0;

    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.empty() || !n.pullback) continue;
        n.pullback(*this, n.grad, n.bound ? n.bound->values() : std::span<const double>(n.owned));
    }

    for (Node& n : nodes_) {
        if (!n.bound || !n.needs_grad) continue;
        if (n.grad.empty()) {
            n.bound->ensure_grad();
            continue;
        }
        if (!all_finite(n.grad)) throw NumericError("non-finite gradient for a " + to_string(n.shape) + " parameter");
        n.bound->accumulate_grad(n.grad);
    }
}

}  // namespace exprfuse
