#include <doctest.h>

#include "projnet/losses.hpp"
#include "projnet/ops.hpp"
#include "support.hpp"

using namespace projnet;
using testing::random_tensor;

namespace {

std::size_t reflect(long i, long n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return static_cast<std::size_t>(i);
}

// Direct (non-separable) Gaussian-window SSIM.
Tensor ssim_oracle(const Tensor& x, const Tensor& y) {
    const std::size_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int r = 5;
    std::vector<double> g(2 * r + 1);
    double total = 0;
    for (int i = -r; i <= r; ++i) total += g[i + r] = std::exp(-(i * i) / (2 * 1.5 * 1.5));
    for (auto& v : g) v /= total;
    const double c1 = 1e-4, c2 = 9e-4;
    Tensor out(x.shape(), DType::f64);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (int i = -r; i <= r; ++i)
                    for (int j = -r; j <= r; ++j) {
                        const std::size_t hh = reflect(static_cast<long>(h) + i, static_cast<long>(H));
                        const std::size_t ww = reflect(static_cast<long>(w) + j, static_cast<long>(W));
                        const double k = g[i + r] * g[j + r];
                        const double xv = x.at((b * H + hh) * W + ww), yv = y.at((b * H + hh) * W + ww);
                        mx += k * xv;
                        my += k * yv;
                        xx += k * xv * xv;
                        yy += k * yv * yv;
                        xy += k * xv * yv;
                    }
                const double sx = xx - mx * mx, sy = yy - my * my, sxy = xy - mx * my;
                out.set((b * H + h) * W + w,
                        ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2)));
            }
    return out;
}

double loss_value(Var (*fn)(Var, Var), const Tensor& p, const Tensor& t) {
    Tape tape;
    return fn(tape.constant(p), tape.constant(t)).value().item();
}

Var dice_default(Var p, Var t) { return dice_loss(p, t); }
Var bce_default(Var p, Var t) { return bce_loss(p, t); }
Var nmssim_default(Var p, Var t) { return nmssim_loss(p, t); }
Var seg_default(Var p, Var t) { return seg_loss(p, t); }

}  // namespace

TEST_CASE("reflect padding does not repeat the edge") {
    CHECK(reflect_index(-1, 5) == 1);
    CHECK(reflect_index(-2, 5) == 2);
    CHECK(reflect_index(5, 5) == 3);
    CHECK(reflect_index(6, 5) == 2);
    CHECK(reflect_index(2, 5) == 2);
    const auto taps = SsimConfig{}.taps();
    CHECK(taps.size() == 11);
    double s = 0;
    for (double t : taps) s += t;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("SSIM map matches the direct windowed oracle") {
    ScopedDType f64(DType::f64);
    for (auto shape : std::vector<Shape>{{1, 1, 16, 16}, {2, 1, 12, 20}, {1, 1, 7, 9}}) {
        const Tensor x = random_tensor(shape, 1, DType::f64, 0, 1), y = random_tensor(shape, 2, DType::f64, 0, 1);
        CHECK(testing::max_abs_diff(ssim_map(x, y), ssim_oracle(x, y)) < 1e-12);
    }
}

TEST_CASE("SSIM identities") {
    ScopedDType f64(DType::f64);
    const Tensor x = random_tensor({2, 1, 16, 16}, 3, DType::f64, 0, 1);
    CHECK(loss_value(nmssim_default, x, x) == doctest::Approx(-1.0).epsilon(1e-12));
    // constant images: sigma terms vanish, leaving the luminance term
    const Tensor a = Tensor::full({1, 1, 12, 12}, 0.2), b = Tensor::full({1, 1, 12, 12}, 0.6);
    CHECK(loss_value(nmssim_default, a, b) == doctest::Approx(-(0.24 + 1e-4) / (0.4 + 1e-4)).epsilon(1e-12));
    // symmetric in its arguments
    const Tensor y = random_tensor({2, 1, 16, 16}, 4, DType::f64, 0, 1);
    CHECK(loss_value(nmssim_default, x, y) == doctest::Approx(loss_value(nmssim_default, y, x)).epsilon(1e-12));
    CHECK_THROWS_AS(ssim_map(Tensor({1, 2, 4, 4}), Tensor({1, 2, 4, 4})), InvalidArgument);
}

TEST_CASE("segmentation loss values") {
    ScopedDType f64(DType::f64);
    Tensor t = Tensor::zeros({2, 1, 4, 4});
    for (std::size_t i = 0; i < t.numel(); i += 3) t.set(i, 1.0);
    CHECK(loss_value(dice_default, t, t) == doctest::Approx(0.0).epsilon(1e-15));
    const Tensor half = Tensor::full({1, 1, 4, 4}, 0.5);
    CHECK(loss_value(bce_default, half, half) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // p = 0.5 everywhere, 6 of 16 positives in one item:
    // 1 - (2 * 3 + 1) / (8 + 6 + 1)
    Tensor m = Tensor::zeros({1, 1, 4, 4});
    for (std::size_t i = 0; i < 6; ++i) m.set(i, 1.0);
    CHECK(loss_value(dice_default, half, m) == doctest::Approx(1.0 - 7.0 / 15.0).epsilon(1e-12));
    CHECK(loss_value(seg_default, half, m) ==
          doctest::Approx(1.0 - 7.0 / 15.0 + std::log(2.0)).epsilon(1e-12));

    // batch items are averaged, not pooled
    Tensor two = Tensor::zeros({2, 1, 1, 2});
    two.set(0, 1.0);
    Tensor pred = Tensor::zeros({2, 1, 1, 2});
    pred.set(0, 1.0);
    pred.set(2, 1.0);
    // item 0: perfect -> 0; item 1: 1 - 1 / (1 + 0 + 1) = 0.5
    CHECK(loss_value(dice_default, pred, two) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("bce clamps probabilities and zeroes gradients outside the clamp") {
    ScopedDType f64(DType::f64);
    const Tensor p = Tensor::from({1, 1, 1, 2}, {0.0, 1.0});
    const Tensor t = Tensor::from({1, 1, 1, 2}, {1.0, 1.0});
    CHECK(loss_value(bce_default, p, t) == doctest::Approx((-std::log(1e-7) - std::log1p(-1e-7)) / 2).epsilon(1e-12));
    Tape tape;
    Tensor pl = p;
    pl.set_requires_grad(true);
    const Var pv = tape.leaf(pl);
    tape.backward(bce_loss(pv, tape.constant(t)));
    CHECK(tape.grad(pv).at(0) == 0.0);
    CHECK(tape.grad(pv).at(1) == 0.0);
    CHECK_THROWS_AS(loss_value(bce_default, p, Tensor::zeros({1, 1, 2, 1})), InvalidArgument);
}
