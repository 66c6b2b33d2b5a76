#include "projnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <fmt/format.h>

namespace projnet {

namespace {

std::size_t count_binary(const Tensor& m, const char* op) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.numel(); ++i) {
        const double v = m.at(i);
        if (v != 0.0 && v != 1.0) throw InvalidArgument(fmt::format("{}: mask is not binary (value {})", op, v));
        n += v == 1.0;
    }
    return n;
}

void check_masks(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw InvalidArgument(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
    }
}

}  // namespace

Tensor binarize(const Tensor& prob, double threshold) {
    Tensor out(prob.shape(), prob.dtype());
    for (std::size_t i = 0; i < prob.numel(); ++i) out.set(i, prob.at(i) >= threshold ? 1.0 : 0.0);
    return out;
}

double dice_score(const Tensor& pred_mask, const Tensor& target_mask) {
    check_masks(pred_mask, target_mask, "dice_score");
    const std::size_t a = count_binary(pred_mask, "dice_score");
    const std::size_t b = count_binary(target_mask, "dice_score");
    if (a + b == 0) return 1.0;
    std::size_t inter = 0;
    for (std::size_t i = 0; i < pred_mask.numel(); ++i) inter += pred_mask.at(i) == 1.0 && target_mask.at(i) == 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double area_diff_mm2(const Tensor& pred_mask, const Tensor& target_mask, std::array<double, 2> spacing_mm) {
    check_masks(pred_mask, target_mask, "area_diff_mm2");
    const auto a = static_cast<double>(count_binary(pred_mask, "area_diff_mm2"));
    const auto b = static_cast<double>(count_binary(target_mask, "area_diff_mm2"));
    return std::abs(a - b) * spacing_mm[0] * spacing_mm[1];
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidArgument(fmt::format("wilcoxon: paired lists differ in length ({} vs {})", a.size(), b.size()));
    }
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        if (diff != 0.0) d.push_back(diff);
    }
    const std::size_t n = d.size();
    if (n < 6) {
        throw InsufficientData(fmt::format("wilcoxon: {} nonzero differences (need at least 6)", n));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
    std::vector<double> rank(n);
    double tie_term = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        const auto t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    WilcoxonResult r;
    r.n = n;
    for (std::size_t i = 0; i < n; ++i) (d[i] > 0 ? r.w_plus : r.w_minus) += rank[i];
    r.statistic = std::min(r.w_plus, r.w_minus);
    const auto nn = static_cast<double>(n);
    const double mean = nn * (nn + 1) / 4.0;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
    // Continuity correction shrinks |T - mean| by 0.5, never past zero.
    const double dev = std::max(std::abs(r.statistic - mean) - 0.5, 0.0);
    r.z = (r.statistic < mean ? -dev : dev) / std::sqrt(var);
    r.p_value = std::min(1.0, std::erfc(std::abs(r.z) / std::sqrt(2.0)));
    return r;
}

const char* significance_stars(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

}  // namespace projnet
