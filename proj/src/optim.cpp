#include "projnet/optim.hpp"

#include <fmt/format.h>

namespace projnet {

SgdState::SgdState(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {
    if (!(learning_rate >= 0.0)) throw ConfigError("sgd: learning rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd: momentum must lie in [0, 1)");
}

const Tensor& SgdState::buffer(const std::string& name) const {
    static const Tensor empty;
    auto it = buffers_.find(name);
    return it == buffers_.end() ? empty : it->second;
}

void SgdState::step(const std::string& name, Tensor& param, const Tensor& grad) {
    if (grad.shape() != param.shape()) {
        throw InvalidArgument(fmt::format("sgd: gradient shape {} does not match parameter {} of shape {}",
                                          shape_str(grad.shape()), name, shape_str(param.shape())));
    }
    require_same_dtype(param, grad, "sgd");
    auto [it, inserted] = buffers_.try_emplace(name, Tensor(param.shape(), param.dtype()));
    Tensor& v = it->second;
    if (v.shape() != param.shape()) {
        throw InvalidArgument(fmt::format("sgd: momentum buffer for {} has stale shape", name));
    }
    dispatch(param.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto p = param.data<T>();
        auto g = grad.data<T>();
        auto m = v.data<T>();
        const T mu = static_cast<T>(momentum_);
        const T lr = static_cast<T>(lr_);
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = mu * m[i] + g[i];
            p[i] -= lr * m[i];
        }
    });
}

}  // namespace projnet
