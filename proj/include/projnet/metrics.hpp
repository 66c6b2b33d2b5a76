#pragma once

#include <array>
#include <span>

#include "projnet/tensor.hpp"

namespace projnet {

constexpr double kMaskThreshold = 0.5;

/// The single binarization path for probability maps: 1 where p >= threshold.
Tensor binarize(const Tensor& prob, double threshold = kMaskThreshold);

/// 2|A n B| / (|A| + |B|); both empty gives 1. Inputs must be binary.
double dice_score(const Tensor& pred_mask, const Tensor& target_mask);

/// |count(pred) - count(target)| * mm_h * mm_w.
double area_diff_mm2(const Tensor& pred_mask, const Tensor& target_mask, std::array<double, 2> spacing_mm);

struct WilcoxonResult {
    /// min(W+, W-).
    double statistic = 0;
    double p_value = 1;
    double w_plus = 0;
    double w_minus = 0;
    double z = 0;
    /// Number of nonzero differences used.
    std::size_t n = 0;
};

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped, tied |d| get average ranks, and p comes from the normal
/// approximation with tie and continuity corrections. Throws
/// InsufficientData with fewer than 6 nonzero differences.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// "***" for p < 0.001, "**" for p < 0.01, "*" for p < 0.05, else "".
const char* significance_stars(double p);

}  // namespace projnet
