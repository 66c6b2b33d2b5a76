#pragma once

// Differentiable operations recorded on a Tape.

#include "projnet/autodiff.hpp"
#include "projnet/kernels.hpp"

namespace projnet::ops {

using kernels::Conv2dGeometry;
using kernels::Conv3dGeometry;
using kernels::Triple;

/// Cross-correlation; differentiable w.r.t. input, weight and bias.
Var conv3d(Var x, Var weight, Var bias, const Conv3dGeometry& geom = {});
Var conv2d(Var x, Var weight, Var bias, const Conv2dGeometry& geom = {});

/// (B,C,H,W,D) -> (B,C,H,W); each depth slot receives 1/D of the gradient.
Var adaptive_avgpool_depth1(Var x);

Var maxpool3d(Var x, const Triple& kernel = {2, 2, 2}, const Triple& stride = {2, 2, 2});
Var upsample2d_nearest(Var x, std::size_t factor = 2);

enum class NormMode { train, eval };

struct BatchNormOptions {
    double eps = 1e-5;
    /// Weight of the new batch statistic in the running average.
    double momentum = 0.1;
};

/// Train mode normalizes with batch statistics and updates the running
/// estimates in place (running variance is the unbiased estimate). Eval mode
/// normalizes with the running estimates and leaves them untouched.
Var batchnorm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
              NormMode mode, const BatchNormOptions& opts = {});
/// Eval-mode normalization against fixed statistics.
Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps);

Var relu(Var x);
Var leaky_relu(Var x, double slope);
Var sigmoid(Var x);
Var add(Var a, Var b);
/// Elementwise product of equal-shape tensors.
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var concat_channels(Var a, Var b);
/// Sum of all elements as a rank-0 tensor.
Var sum(Var x);
Var mean(Var x);

}  // namespace projnet::ops
