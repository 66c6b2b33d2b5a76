#include "projnet/ops.hpp"

#include <fmt/format.h>

namespace projnet::ops {

Var conv3d(Var x, Var weight, Var bias, const Conv3dGeometry& geom) {
    Tape& tape = *x.tape;
    Tensor y = kernels::conv3d(x.value(), weight.value(), bias.value(), geom);
    return tape.record(std::move(y), {x, weight, bias}, [x, weight, bias, geom](Tape& t, const Tensor& g) {
        auto grads = kernels::conv3d_backward(g, t.value(x), t.value(weight), geom, t.requires_grad(x),
                                              t.requires_grad(weight), t.requires_grad(bias));
        if (grads.input.defined()) t.accumulate_grad(x, std::move(grads.input));
        if (grads.weight.defined()) t.accumulate_grad(weight, std::move(grads.weight));
        if (grads.bias.defined()) t.accumulate_grad(bias, std::move(grads.bias));
    });
}

Var conv2d(Var x, Var weight, Var bias, const Conv2dGeometry& geom) {
    Tape& tape = *x.tape;
    Tensor y = kernels::conv2d(x.value(), weight.value(), bias.value(), geom);
    return tape.record(std::move(y), {x, weight, bias}, [x, weight, bias, geom](Tape& t, const Tensor& g) {
        auto grads = kernels::conv2d_backward(g, t.value(x), t.value(weight), geom, t.requires_grad(x),
                                              t.requires_grad(weight), t.requires_grad(bias));
        if (grads.input.defined()) t.accumulate_grad(x, std::move(grads.input));
        if (grads.weight.defined()) t.accumulate_grad(weight, std::move(grads.weight));
        if (grads.bias.defined()) t.accumulate_grad(bias, std::move(grads.bias));
    });
}

Var adaptive_avgpool_depth1(Var x) {
    const std::size_t depth = x.value().rank() == 5 ? x.value().dim(4) : 0;
    Tensor y = kernels::avgpool_depth(x.value());
    return x.tape->record(std::move(y), {x}, [x, depth](Tape& t, const Tensor& g) {
        t.accumulate_grad(x, kernels::avgpool_depth_backward(g, depth));
    });
}

Var maxpool3d(Var x, const Triple& kernel, const Triple& stride) {
    auto r = kernels::maxpool3d(x.value(), kernel, stride);
    const Shape in_shape = x.value().shape();
    return x.tape->record(std::move(r.output), {x},
                          [x, argmax = std::move(r.argmax), in_shape](Tape& t, const Tensor& g) {
                              t.accumulate_grad(x, kernels::maxpool3d_backward(g, argmax, in_shape));
                          });
}

Var upsample2d_nearest(Var x, std::size_t factor) {
    Tensor y = kernels::upsample2d_nearest(x.value(), factor);
    return x.tape->record(std::move(y), {x}, [x, factor](Tape& t, const Tensor& g) {
        t.accumulate_grad(x, kernels::upsample2d_nearest_backward(g, factor));
    });
}

Var batchnorm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
              NormMode mode, const BatchNormOptions& opts) {
    if (mode == NormMode::eval) return batchnorm_eval(x, gamma, beta, running_mean, running_var, opts.eps);
    Tape& tape = *x.tape;
    kernels::BatchNormStats stats;
    Tensor y = kernels::batchnorm_train(x.value(), gamma.value(), beta.value(), opts.eps, stats);
    const double n = static_cast<double>(x.value().numel() / x.value().dim(1));
    const double unbias = n > 1 ? n / (n - 1) : 1.0;
    for (std::size_t c = 0; c < stats.mean.size(); ++c) {
        running_mean.set(c, (1 - opts.momentum) * running_mean.at(c) + opts.momentum * stats.mean[c]);
        running_var.set(c, (1 - opts.momentum) * running_var.at(c) + opts.momentum * stats.var[c] * unbias);
    }
    return tape.record(std::move(y), {x, gamma, beta},
                       [x, gamma, beta, stats = std::move(stats)](Tape& t, const Tensor& g) {
                           auto grads = kernels::batchnorm_train_backward(g, t.value(x), t.value(gamma), stats);
                           t.accumulate_grad(x, std::move(grads.input));
                           t.accumulate_grad(gamma, std::move(grads.gamma));
                           t.accumulate_grad(beta, std::move(grads.beta));
                       });
}

Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps) {
    Tensor y = kernels::batchnorm_eval(x.value(), gamma.value(), beta.value(), running_mean, running_var, eps);
    return x.tape->record(std::move(y), {x, gamma, beta},
                          [x, gamma, beta, mean = running_mean, var = running_var, eps](Tape& t, const Tensor& g) {
                              auto grads =
                                  kernels::batchnorm_eval_backward(g, t.value(x), t.value(gamma), mean, var, eps);
                              t.accumulate_grad(x, std::move(grads.input));
                              t.accumulate_grad(gamma, std::move(grads.gamma));
                              t.accumulate_grad(beta, std::move(grads.beta));
                          });
}

Var relu(Var x) { return leaky_relu(x, 0.0); }

Var leaky_relu(Var x, double slope) {
    Tensor y = kernels::leaky_relu(x.value(), slope);
    return x.tape->record(std::move(y), {x}, [x, slope](Tape& t, const Tensor& g) {
        t.accumulate_grad(x, kernels::leaky_relu_backward(g, t.value(x), slope));
    });
}

Var sigmoid(Var x) {
    Tape& tape = *x.tape;
    // The rule reads the output value, which lands at the next tape slot.
    const Var out{&tape, tape.size()};
    return tape.record(kernels::sigmoid(x.value()), {x}, [x, out](Tape& t, const Tensor& g) {
        t.accumulate_grad(x, kernels::sigmoid_backward(g, t.value(out)));
    });
}

Var add(Var a, Var b) {
    Tensor y = kernels::add(a.value(), b.value());
    return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate_grad(a, g);
        t.accumulate_grad(b, g);
    });
}

Var mul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) {
        throw InvalidArgument(
            fmt::format("mul: shape mismatch {} vs {}", shape_str(av.shape()), shape_str(bv.shape())));
    }
    require_same_dtype(av, bv, "mul");
    auto product = [](const Tensor& p, const Tensor& q) {
        Tensor r(p.shape(), p.dtype());
        dispatch(p.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto pp = p.data<T>();
            auto qq = q.data<T>();
            auto rr = r.data<T>();
            for (std::size_t i = 0; i < rr.size(); ++i) rr[i] = pp[i] * qq[i];
        });
        return r;
    };
    return a.tape->record(product(av, bv), {a, b}, [a, b, product](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate_grad(a, product(g, t.value(b)));
        if (t.requires_grad(b)) t.accumulate_grad(b, product(g, t.value(a)));
    });
}

Var scale(Var x, double factor) {
    return x.tape->record(kernels::scale(x.value(), factor), {x}, [x, factor](Tape& t, const Tensor& g) {
        t.accumulate_grad(x, kernels::scale(g, factor));
    });
}

Var concat_channels(Var a, Var b) {
    Tensor y = kernels::concat_channels(a.value(), b.value());
    const std::size_t split = a.value().dim(1);
    return a.tape->record(std::move(y), {a, b}, [a, b, split](Tape& t, const Tensor& g) {
        auto [ga, gb] = kernels::split_channels(g, split);
        t.accumulate_grad(a, std::move(ga));
        t.accumulate_grad(b, std::move(gb));
    });
}

Var sum(Var x) {
    const Tensor& v = x.value();
    return x.tape->record(Tensor::scalar(kernels::sum(v), v.dtype()), {x}, [x](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        t.accumulate_grad(x, Tensor::full(xv.shape(), g.item(), xv.dtype()));
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

}  // namespace projnet::ops
