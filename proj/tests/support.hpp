#pragma once

// Shared test helpers: seeded random tensors, naive nested-loop reference
// kernels, and central finite differences.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "projnet/autodiff.hpp"
#include "projnet/kernels.hpp"

namespace testing {

using projnet::DType;
using projnet::Shape;
using projnet::Tensor;

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, DType dtype = DType::f64, double lo = -1.0,
                            double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape, dtype);
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, u(rng));
    return t;
}

/// Random values whose magnitude is at least `gap`, so kinks (ReLU at 0) stay
/// out of reach of a finite-difference step.
inline Tensor random_away_from_zero(const Shape& shape, std::uint64_t seed, double gap = 0.05) {
    Tensor t = random_tensor(shape, seed);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const double v = t.at(i);
        t.set(i, v >= 0 ? v + gap : v - gap);
    }
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

/// max_i |a_i - b_i| / max_i max(|a_i|, |b_i|): relative error in the
/// infinity norm, insensitive to individual near-zero entries.
inline double rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return scale == 0 ? diff : diff / scale;
}

/// Central differences of f with respect to every element of `x`.
inline std::vector<double> numeric_grad(Tensor& x, const std::function<double()>& f, double h = 1e-6) {
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x.at(i);
        x.set(i, v + h);
        const double fp = f();
        x.set(i, v - h);
        const double fm = f();
        x.set(i, v);
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

// ------------------------------------------------------- reference kernels

/// Direct 3D cross-correlation: x (B,Ci,H,W,D), w (Co,Ci,kh,kw,kd).
inline Tensor naive_conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::array<std::size_t, 3> stride,
                           std::array<std::size_t, 3> pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const std::size_t B = xs[0], Ci = xs[1], Co = ws[0];
    std::array<std::size_t, 3> in{xs[2], xs[3], xs[4]}, k{ws[2], ws[3], ws[4]}, out{};
    for (int a = 0; a < 3; ++a) out[a] = (in[a] + 2 * pad[a] - k[a]) / stride[a] + 1;
    Tensor y({B, Co, out[0], out[1], out[2]}, x.dtype());
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t oh = 0; oh < out[0]; ++oh)
                for (std::size_t ow = 0; ow < out[1]; ++ow)
                    for (std::size_t od = 0; od < out[2]; ++od) {
                        double acc = b.defined() ? b.at(co) : 0.0;
                        for (std::size_t ci = 0; ci < Ci; ++ci)
                            for (std::size_t i = 0; i < k[0]; ++i)
                                for (std::size_t j = 0; j < k[1]; ++j)
                                    for (std::size_t l = 0; l < k[2]; ++l) {
                                        const long ih = static_cast<long>(oh * stride[0] + i) - static_cast<long>(pad[0]);
                                        const long iw = static_cast<long>(ow * stride[1] + j) - static_cast<long>(pad[1]);
                                        const long id = static_cast<long>(od * stride[2] + l) - static_cast<long>(pad[2]);
                                        if (ih < 0 || iw < 0 || id < 0 || ih >= static_cast<long>(in[0]) ||
                                            iw >= static_cast<long>(in[1]) || id >= static_cast<long>(in[2]))
                                            continue;
                                        const std::size_t xi =
                                            (((n * Ci + ci) * in[0] + ih) * in[1] + iw) * in[2] + id;
                                        const std::size_t wi = (((co * Ci + ci) * k[0] + i) * k[1] + j) * k[2] + l;
                                        acc += x.at(xi) * w.at(wi);
                                    }
                        y.set((((n * Co + co) * out[0] + oh) * out[1] + ow) * out[2] + od, acc);
                    }
    return y;
}

/// Direct 2D cross-correlation: x (B,Ci,H,W), w (Co,Ci,kh,kw).
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::array<std::size_t, 2> stride,
                           std::array<std::size_t, 2> pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const std::size_t B = xs[0], Ci = xs[1], H = xs[2], W = xs[3], Co = ws[0], kh = ws[2], kw = ws[3];
    const std::size_t OH = (H + 2 * pad[0] - kh) / stride[0] + 1, OW = (W + 2 * pad[1] - kw) / stride[1] + 1;
    Tensor y({B, Co, OH, OW}, x.dtype());
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    double acc = b.defined() ? b.at(co) : 0.0;
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t i = 0; i < kh; ++i)
                            for (std::size_t j = 0; j < kw; ++j) {
                                const long ih = static_cast<long>(oh * stride[0] + i) - static_cast<long>(pad[0]);
                                const long iw = static_cast<long>(ow * stride[1] + j) - static_cast<long>(pad[1]);
                                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                                acc += x.at(((n * Ci + ci) * H + ih) * W + iw) * w.at(((co * Ci + ci) * kh + i) * kw + j);
                            }
                    y.set(((n * Co + co) * OH + oh) * OW + ow, acc);
                }
    return y;
}

inline Tensor naive_maxpool3d(const Tensor& x, std::array<std::size_t, 3> k, std::array<std::size_t, 3> s) {
    const auto& xs = x.shape();
    const std::size_t B = xs[0], C = xs[1];
    std::array<std::size_t, 3> in{xs[2], xs[3], xs[4]}, out{};
    for (int a = 0; a < 3; ++a) out[a] = (in[a] - k[a]) / s[a] + 1;
    Tensor y({B, C, out[0], out[1], out[2]}, x.dtype());
    for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t oh = 0; oh < out[0]; ++oh)
            for (std::size_t ow = 0; ow < out[1]; ++ow)
                for (std::size_t od = 0; od < out[2]; ++od) {
                    double m = -std::numeric_limits<double>::infinity();
                    for (std::size_t i = 0; i < k[0]; ++i)
                        for (std::size_t j = 0; j < k[1]; ++j)
                            for (std::size_t l = 0; l < k[2]; ++l) {
                                const std::size_t xi =
                                    ((bc * in[0] + oh * s[0] + i) * in[1] + ow * s[1] + j) * in[2] + od * s[2] + l;
                                m = std::max(m, x.at(xi));
                            }
                    y.set(((bc * out[0] + oh) * out[1] + ow) * out[2] + od, m);
                }
    return y;
}

inline Tensor naive_upsample2d(const Tensor& x, std::size_t f) {
    const auto& xs = x.shape();
    const std::size_t BC = xs[0] * xs[1], H = xs[2], W = xs[3];
    Tensor y({xs[0], xs[1], H * f, W * f}, x.dtype());
    for (std::size_t bc = 0; bc < BC; ++bc)
        for (std::size_t h = 0; h < H * f; ++h)
            for (std::size_t w = 0; w < W * f; ++w) y.set((bc * H * f + h) * W * f + w, x.at((bc * H + h / f) * W + w / f));
    return y;
}

inline Tensor naive_avgpool_depth(const Tensor& x) {
    const auto& xs = x.shape();
    const std::size_t D = xs[4], n = x.numel() / D;
    Tensor y({xs[0], xs[1], xs[2], xs[3]}, x.dtype());
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0;
        for (std::size_t d = 0; d < D; ++d) acc += x.at(i * D + d);
        y.set(i, acc / static_cast<double>(D));
    }
    return y;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("projnet_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
