#include <doctest.h>

#include "projnet/metrics.hpp"
#include "support.hpp"
#include "wilcoxon_cases.hpp"

using namespace projnet;

TEST_CASE("binarize uses p >= 0.5") {
    const Tensor p = Tensor::from({4}, {0.49999, 0.5, 0.7, 0.0}, DType::f64);
    CHECK(binarize(p).to_vector() == std::vector<double>{0, 1, 1, 0});
}

TEST_CASE("dice score and area difference") {
    const Tensor a = Tensor::from({1, 2, 3}, {1, 1, 0, 0, 1, 0}, DType::f64);
    const Tensor b = Tensor::from({1, 2, 3}, {1, 0, 0, 1, 1, 1}, DType::f64);
    // |A n B| = 2, |A| = 3, |B| = 4
    CHECK(dice_score(a, b) == doctest::Approx(4.0 / 7.0));
    CHECK(dice_score(a, a) == 1.0);
    const Tensor empty = Tensor::zeros({1, 2, 3}, DType::f64);
    CHECK(dice_score(empty, empty) == 1.0);
    CHECK(dice_score(empty, a) == 0.0);
    CHECK(area_diff_mm2(a, b, {0.5, 0.25}) == doctest::Approx(0.125));
    CHECK(area_diff_mm2(b, a, {0.5, 0.25}) == doctest::Approx(0.125));
    CHECK_THROWS_AS(dice_score(Tensor::full({2}, 0.5, DType::f64), Tensor::zeros({2}, DType::f64)), InvalidArgument);
    CHECK_THROWS_AS(dice_score(a, Tensor::zeros({6}, DType::f64)), InvalidArgument);
}

TEST_CASE("wilcoxon signed-rank agrees with the counting oracle and scipy") {
    for (const auto& c : testing::wilcoxon_cases()) {
        INFO(c.name);
        const auto r = wilcoxon_signed_rank(c.a, c.b);
        const auto o = testing::wilcoxon_oracle(c.a, c.b);
        CHECK(r.n == o.n);
        CHECK(r.w_plus == doctest::Approx(o.w_plus).epsilon(1e-12));
        CHECK(r.w_minus == doctest::Approx(o.w_minus).epsilon(1e-12));
        CHECK(std::abs(r.statistic - o.statistic) < 1e-6);
        CHECK(std::abs(r.p_value - o.p) < 1e-6);
        CHECK(std::abs(r.statistic - c.scipy_statistic) < 1e-6);
        CHECK(std::abs(r.p_value - c.scipy_p) < 1e-6);
        // W+ + W- = n(n+1)/2
        CHECK(r.w_plus + r.w_minus == doctest::Approx(r.n * (r.n + 1) / 2.0));
    }
}

TEST_CASE("wilcoxon edge cases") {
    const std::vector<double> a{0.8, 0.7, 0.9, 0.6, 0.75, 0.85, 0.95};
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, a), InsufficientData);
    std::vector<double> shifted = a;
    for (auto& v : shifted) v -= 0.05;
    shifted[0] = a[0];
    shifted[1] = a[1];
    // only 5 nonzero differences left
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, shifted), InsufficientData);
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, std::vector<double>{1, 2}), InvalidArgument);
    // a uniformly better: every rank positive, minimal statistic
    std::vector<double> worse;
    for (std::size_t i = 0; i < a.size(); ++i) worse.push_back(a[i] - 0.01 * static_cast<double>(i + 1));
    const auto r = wilcoxon_signed_rank(a, worse);
    CHECK(r.statistic == 0.0);
    CHECK(r.w_minus == 0.0);
    CHECK(r.w_plus == 28.0);
}

TEST_CASE("significance stars") {
    CHECK(std::string(significance_stars(0.0005)) == "***");
    CHECK(std::string(significance_stars(0.001)) == "**");
    CHECK(std::string(significance_stars(0.009)) == "**");
    CHECK(std::string(significance_stars(0.01)) == "*");
    CHECK(std::string(significance_stars(0.049)) == "*");
    CHECK(std::string(significance_stars(0.05)) == "");
    CHECK(std::string(significance_stars(0.7)) == "");
}
