#include "projnet/autodiff.hpp"

#include <fmt/format.h>

#include "projnet/kernels.hpp"

namespace projnet {

const Tensor& Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

Var Tape::leaf(Tensor value) {
    Node n;
    n.requires_grad = value.requires_grad();
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    value.set_requires_grad(false);
    return leaf(std::move(value));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.value.set_requires_grad(false);
    for (const auto& in : inputs) {
        check(in);
        n.inputs.push_back(in.id);
        n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
    check(v);
    return nodes_[v.id].value;
}

bool Tape::requires_grad(Var v) const {
    check(v);
    return nodes_[v.id].requires_grad;
}

const Tensor& Tape::grad(Var v) const {
    check(v);
    return nodes_[v.id].grad;
}

void Tape::accumulate_grad(Var v, const Tensor& g) {
    check(v);
    auto& node = nodes_[v.id];
    if (!node.requires_grad) return;
    if (!node.grad.defined()) {
        node.grad = g;
        node.grad.set_requires_grad(false);
    } else {
        kernels::accumulate(node.grad, g);
    }
}

void Tape::accumulate_grad(Var v, Tensor&& g) {
    check(v);
    auto& node = nodes_[v.id];
    if (!node.requires_grad) return;
    if (!node.grad.defined()) {
        node.grad = std::move(g);
        node.grad.set_requires_grad(false);
    } else {
        kernels::accumulate(node.grad, g);
    }
}

void Tape::backward(Var loss) {
    check(loss);
    const auto& lv = nodes_[loss.id].value;
    if (lv.numel() != 1) {
        throw InvalidArgument(fmt::format("backward: loss must be scalar, got shape {}", shape_str(lv.shape())));
    }
    if (!nodes_[loss.id].requires_grad) return;
    accumulate_grad(loss, Tensor::full(lv.shape(), 1.0, lv.dtype()));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (!node.backward || !node.grad.defined()) continue;
        // Rules only touch earlier nodes, so the reference stays valid.
        node.backward(*this, node.grad);
        // Interior gradients are not needed once propagated.
        node.grad = Tensor();
    }
}

void Tape::check(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) {
        throw InvalidArgument("variable does not belong to this tape");
    }
}

}  // namespace projnet
