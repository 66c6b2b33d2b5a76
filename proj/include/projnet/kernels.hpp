#pragma once

// Forward and backward numeric kernels on plain tensors. The autodiff layer in
// ops.hpp wires these into the tape; nothing here records gradients.

#include <array>
#include <cstdint>
#include <vector>

#include "projnet/tensor.hpp"

namespace projnet::kernels {

using Triple = std::array<std::size_t, 3>;
using Pair = std::array<std::size_t, 2>;

struct Conv3dGeometry {
    Triple stride{1, 1, 1};
    Triple padding{0, 0, 0};
};

struct Conv2dGeometry {
    Pair stride{1, 1};
    Pair padding{0, 0};
};

/// Validates x (B,Cin,H,W,D) against w (Cout,Cin,kH,kW,kD) and returns the
/// output shape; throws InvalidArgument naming the offending axis.
Shape conv3d_output_shape(const Shape& x, const Shape& w, const Conv3dGeometry& geom);

/// Cross-correlation. `bias` may be undefined.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv3dGeometry& geom);

struct ConvGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

/// Gradients of conv3d; each output is only computed when requested.
ConvGrads conv3d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w,
                          const Conv3dGeometry& geom, bool need_input, bool need_weight,
                          bool need_bias);

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv2dGeometry& geom);
ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w,
                          const Conv2dGeometry& geom, bool need_input, bool need_weight,
                          bool need_bias);

/// Mean over the depth axis: (B,C,H,W,D) -> (B,C,H,W).
Tensor avgpool_depth(const Tensor& x);
Tensor avgpool_depth_backward(const Tensor& grad_out, std::size_t depth);

struct MaxPoolResult {
    Tensor output;
    /// Flat input index of the selected element for every output element.
    std::vector<std::uint32_t> argmax;
};

/// Max over windows; ties resolve to the first element in (h, w, d) scan order.
/// Trailing elements that do not fill a window are dropped.
MaxPoolResult maxpool3d(const Tensor& x, const Triple& kernel, const Triple& stride);
Tensor maxpool3d_backward(const Tensor& grad_out, const std::vector<std::uint32_t>& argmax,
                          const Shape& input_shape);

/// Nearest-neighbour upsampling of H and W by an integer factor.
Tensor upsample2d_nearest(const Tensor& x, std::size_t factor);
Tensor upsample2d_nearest_backward(const Tensor& grad_out, std::size_t factor);

struct BatchNormStats {
    std::vector<double> mean;
    /// Biased variance (used for normalization).
    std::vector<double> var;
    std::vector<double> invstd;
};

/// Normalizes every channel over batch and spatial axes using batch statistics.
Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       BatchNormStats& stats);
/// Normalizes with fixed statistics (running mean/var in eval mode).
Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Tensor& mean, const Tensor& var, double eps);

struct BatchNormGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};

BatchNormGrads batchnorm_train_backward(const Tensor& grad_out, const Tensor& x,
                                        const Tensor& gamma, const BatchNormStats& stats);
BatchNormGrads batchnorm_eval_backward(const Tensor& grad_out, const Tensor& x,
                                       const Tensor& gamma, const Tensor& mean,
                                       const Tensor& var, double eps);

Tensor leaky_relu(const Tensor& x, double slope);
Tensor leaky_relu_backward(const Tensor& grad_out, const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
/// Uses the forward output y: dy/dx = y (1 - y).
Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// In-place a += b.
void accumulate(Tensor& a, const Tensor& b);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits axis 1 at `first_channels`.
std::pair<Tensor, Tensor> split_channels(const Tensor& x, std::size_t first_channels);

double sum(const Tensor& x);

}  // namespace projnet::kernels
