#pragma once

#include <map>
#include <string>

#include "projnet/tensor.hpp"

namespace projnet {

/// Classical (non-Nesterov) momentum SGD without weight decay:
///   v <- momentum * v + g
///   p <- p - lr * v
class SgdState {
public:
    SgdState(double learning_rate, double momentum);

    double learning_rate() const { return lr_; }
    double momentum() const { return momentum_; }

    /// Momentum buffer for `name`; undefined before the first step on it.
    const Tensor& buffer(const std::string& name) const;

    /// Applies one update to `param` in place. The buffer is created on first
    /// use and must keep the parameter's shape afterwards.
    void step(const std::string& name, Tensor& param, const Tensor& grad);

private:
    double lr_;
    double momentum_;
    std::map<std::string, Tensor> buffers_;
};

}  // namespace projnet
