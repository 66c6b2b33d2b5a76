#pragma once

#include <vector>

#include "projnet/autodiff.hpp"

namespace projnet {

/// Gaussian-window SSIM constants. C1 = (K1 L)^2, C2 = (K2 L)^2.
struct SsimConfig {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;

    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
    /// Normalized 1D Gaussian taps; the 2D window is their outer product.
    std::vector<double> taps() const;
};

/// Index of `i` mirrored into [0, n) without repeating the edge sample
/// (..., 2, 1, | 0, 1, ..., n-1 |, n-2, ...).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

/// Per-pixel SSIM of two (B,1,H,W) images using Gaussian-weighted local
/// statistics with reflection padding at the borders.
Tensor ssim_map(const Tensor& x, const Tensor& y, const SsimConfig& cfg = {});

/// Negative mean SSIM over every pixel (and batch item). Range [-1, 1].
Var nmssim_loss(Var x, Var y, const SsimConfig& cfg = {});

struct SegLossConfig {
    double dice_smooth = 1.0;
    double bce_clamp = 1e-7;
};

/// 1 - (2 sum(p t) + s) / (sum p + sum t + s) per batch item, averaged.
Var dice_loss(Var pred, Var target, double smooth = 1.0);
/// Mean binary cross-entropy with p clamped to [clamp, 1 - clamp].
Var bce_loss(Var pred, Var target, double clamp = 1e-7);
/// dice_loss + bce_loss.
Var seg_loss(Var pred, Var target, const SegLossConfig& cfg = {});

}  // namespace projnet
