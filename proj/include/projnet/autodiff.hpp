#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "projnet/tensor.hpp"

namespace projnet {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    bool requires_grad() const;
};

/// Reverse-mode record. Nodes are appended in evaluation order, so every
/// node's inputs precede it and a single reverse sweep is a valid
/// topological traversal. One tape serves one forward/backward pass.
class Tape {
public:
    /// Receives the node's output gradient; adds into input gradients via
    /// Tape::accumulate_grad.
    using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf node. Gradients are tracked when `value.requires_grad()` is set.
    Var leaf(Tensor value);
    Var constant(Tensor value);

    /// Records an op output. The backward rule is dropped when no input
    /// requires a gradient.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    /// Gradient accumulated at `v`. After backward() only leaf gradients are
    /// kept; interior ones are released once propagated. Undefined when no
    /// gradient reached the node.
    const Tensor& grad(Var v) const;

    void accumulate_grad(Var v, const Tensor& g);
    void accumulate_grad(Var v, Tensor&& g);

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }
    /// Input node ids of a recorded node.
    const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };

    void check(Var v) const;

    std::vector<Node> nodes_;
};

}  // namespace projnet
