#include "projnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <cblas.h>
#include <fmt/format.h>

#include "projnet/parallel.hpp"

namespace projnet::kernels {

namespace {

constexpr const char* kAxisNames[3] = {"H", "W", "D"};

struct ConvDims {
    std::size_t batch = 0, cin = 0, cout = 0;
    Triple in{}, k{}, out{}, stride{}, pad{};

    std::size_t in_spatial() const { return in[0] * in[1] * in[2]; }
    std::size_t out_spatial() const { return out[0] * out[1] * out[2]; }
    std::size_t kernel_volume() const { return k[0] * k[1] * k[2]; }
    std::size_t cols_rows() const { return cin * kernel_volume(); }
    bool pointwise() const {
        return kernel_volume() == 1 && stride == Triple{1, 1, 1} && pad == Triple{0, 0, 0};
    }
};

ConvDims make_dims(const char* op, std::size_t batch, std::size_t cin, const Triple& in,
                   std::size_t wcout, std::size_t wcin, const Triple& k, const Triple& stride,
                   const Triple& pad, std::size_t spatial_axes) {
    if (cin != wcin) {
        throw InvalidArgument(
            fmt::format("{}: input channel axis has {} channels but weight expects {}", op, cin, wcin));
    }
    ConvDims d;
    d.batch = batch;
    d.cin = cin;
    d.cout = wcout;
    d.in = in;
    d.k = k;
    d.stride = stride;
    d.pad = pad;
    for (std::size_t a = 0; a < 3; ++a) {
        if (stride[a] == 0) {
            throw InvalidArgument(fmt::format("{}: stride on axis {} must be positive", op, kAxisNames[a]));
        }
        const std::size_t padded = in[a] + 2 * pad[a];
        if (padded < k[a]) {
            throw InvalidArgument(fmt::format(
                "{}: kernel extent {} exceeds padded input extent {} on axis {}", op, k[a], padded,
                a < spatial_axes ? kAxisNames[a] : "D"));
        }
        d.out[a] = (padded - k[a]) / stride[a] + 1;
    }
    return d;
}

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
    const auto ta = trans_a ? CblasTrans : CblasNoTrans;
    const auto tb = trans_b ? CblasTrans : CblasNoTrans;
    if constexpr (std::is_same_v<T, float>) {
        cblas_sgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n),
                    static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                    beta, c, static_cast<int>(ldc));
    } else {
        cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n),
                    static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                    beta, c, static_cast<int>(ldc));
    }
}

void configure_blas() {
    static std::size_t configured = 0;
    const std::size_t want = thread_count();
    if (configured != want) {
        openblas_set_num_threads(static_cast<int>(want));
        configured = want;
    }
}

// Valid output range [lo, hi) along one axis for kernel offset `kk`.
inline void valid_range(std::size_t kk, std::size_t pad, std::size_t stride, std::size_t in,
                        std::size_t out, std::size_t& lo, std::size_t& hi) {
    // need 0 <= o*stride + kk - pad < in
    lo = kk >= pad ? 0 : (pad - kk + stride - 1) / stride;
    const std::ptrdiff_t limit = static_cast<std::ptrdiff_t>(in) + static_cast<std::ptrdiff_t>(pad) -
                                 static_cast<std::ptrdiff_t>(kk);
    if (limit <= 0) {
        hi = lo;
        return;
    }
    hi = std::min(out, (static_cast<std::size_t>(limit) - 1) / stride + 1);
    if (hi < lo) hi = lo;
}

template <class T>
void im2col(const T* x, const ConvDims& d, T* cols) {
    const std::size_t P = d.out_spatial();
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        const T* xc = x + ci * d.in_spatial();
        for (std::size_t kh = 0; kh < d.k[0]; ++kh) {
            std::size_t h_lo, h_hi;
            valid_range(kh, d.pad[0], d.stride[0], d.in[0], d.out[0], h_lo, h_hi);
            for (std::size_t kw = 0; kw < d.k[1]; ++kw) {
                std::size_t w_lo, w_hi;
                valid_range(kw, d.pad[1], d.stride[1], d.in[1], d.out[1], w_lo, w_hi);
                for (std::size_t kd = 0; kd < d.k[2]; ++kd, ++row) {
                    std::size_t d_lo, d_hi;
                    valid_range(kd, d.pad[2], d.stride[2], d.in[2], d.out[2], d_lo, d_hi);
                    T* dst = cols + row * P;
                    std::fill(dst, dst + P, T(0));
                    for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
                        const std::size_t ih = oh * d.stride[0] + kh - d.pad[0];
                        for (std::size_t ow = w_lo; ow < w_hi; ++ow) {
                            const std::size_t iw = ow * d.stride[1] + kw - d.pad[1];
                            const T* src = xc + (ih * d.in[1] + iw) * d.in[2];
                            T* out = dst + (oh * d.out[1] + ow) * d.out[2];
                            if (d.stride[2] == 1) {
                                const std::size_t off = kd - d.pad[2];
                                std::memcpy(out + d_lo, src + d_lo + off, (d_hi - d_lo) * sizeof(T));
                            } else {
                                for (std::size_t od = d_lo; od < d_hi; ++od) {
                                    out[od] = src[od * d.stride[2] + kd - d.pad[2]];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void col2im(const T* cols, const ConvDims& d, T* gx) {
    const std::size_t P = d.out_spatial();
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        T* gc = gx + ci * d.in_spatial();
        for (std::size_t kh = 0; kh < d.k[0]; ++kh) {
            std::size_t h_lo, h_hi;
            valid_range(kh, d.pad[0], d.stride[0], d.in[0], d.out[0], h_lo, h_hi);
            for (std::size_t kw = 0; kw < d.k[1]; ++kw) {
                std::size_t w_lo, w_hi;
                valid_range(kw, d.pad[1], d.stride[1], d.in[1], d.out[1], w_lo, w_hi);
                for (std::size_t kd = 0; kd < d.k[2]; ++kd, ++row) {
                    std::size_t d_lo, d_hi;
                    valid_range(kd, d.pad[2], d.stride[2], d.in[2], d.out[2], d_lo, d_hi);
                    const T* src = cols + row * P;
                    for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
                        const std::size_t ih = oh * d.stride[0] + kh - d.pad[0];
                        for (std::size_t ow = w_lo; ow < w_hi; ++ow) {
                            const std::size_t iw = ow * d.stride[1] + kw - d.pad[1];
                            T* dst = gc + (ih * d.in[1] + iw) * d.in[2];
                            const T* in = src + (oh * d.out[1] + ow) * d.out[2];
                            for (std::size_t od = d_lo; od < d_hi; ++od) {
                                dst[od * d.stride[2] + kd - d.pad[2]] += in[od];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void conv_forward(const T* x, const T* w, const T* bias, const ConvDims& d, T* y) {
    configure_blas();
    const std::size_t P = d.out_spatial();
    const std::size_t K = d.cols_rows();
    std::vector<T> cols(d.pointwise() ? 0 : K * P);
    for (std::size_t b = 0; b < d.batch; ++b) {
        const T* xb = x + b * d.cin * d.in_spatial();
        T* yb = y + b * d.cout * P;
        const T* src = xb;
        if (!d.pointwise()) {
            im2col(xb, d, cols.data());
            src = cols.data();
        }
        for (std::size_t co = 0; co < d.cout; ++co) {
            std::fill(yb + co * P, yb + (co + 1) * P, bias ? bias[co] : T(0));
        }
        gemm<T>(false, false, d.cout, P, K, T(1), w, K, src, P, T(1), yb, P);
    }
}

template <class T>
void conv_backward(const T* gy, const T* x, const T* w, const ConvDims& d, T* gx, T* gw, T* gb) {
    configure_blas();
    const std::size_t P = d.out_spatial();
    const std::size_t K = d.cols_rows();
    std::vector<T> cols((!d.pointwise() && (gw || gx)) ? K * P : 0);
    for (std::size_t b = 0; b < d.batch; ++b) {
        const T* gyb = gy + b * d.cout * P;
        const T* xb = x + b * d.cin * d.in_spatial();
        if (gw) {
            const T* src = xb;
            if (!d.pointwise()) {
                im2col(xb, d, cols.data());
                src = cols.data();
            }
            // gw[Cout x K] += gy[Cout x P] * cols^T
            gemm<T>(false, true, d.cout, K, P, T(1), gyb, P, src, P, T(1), gw, K);
        }
        if (gx) {
            T* gxb = gx + b * d.cin * d.in_spatial();
            if (d.pointwise()) {
                gemm<T>(true, false, K, P, d.cout, T(1), w, K, gyb, P, T(0), gxb, P);
            } else {
                gemm<T>(true, false, K, P, d.cout, T(1), w, K, gyb, P, T(0), cols.data(), P);
                col2im(cols.data(), d, gxb);
            }
        }
        if (gb) {
            for (std::size_t co = 0; co < d.cout; ++co) {
                const T* row = gyb + co * P;
                T acc = 0;
                for (std::size_t p = 0; p < P; ++p) acc += row[p];
                gb[co] += acc;
            }
        }
    }
}

ConvDims dims3(const char* op, const Shape& x, const Shape& w, const Conv3dGeometry& g) {
    if (x.size() != 5) throw InvalidArgument(fmt::format("{}: expected rank-5 input, got {}", op, shape_str(x)));
    if (w.size() != 5) throw InvalidArgument(fmt::format("{}: expected rank-5 weight, got {}", op, shape_str(w)));
    return make_dims(op, x[0], x[1], {x[2], x[3], x[4]}, w[0], w[1], {w[2], w[3], w[4]}, g.stride,
                     g.padding, 3);
}

ConvDims dims2(const char* op, const Shape& x, const Shape& w, const Conv2dGeometry& g) {
    if (x.size() != 4) throw InvalidArgument(fmt::format("{}: expected rank-4 input, got {}", op, shape_str(x)));
    if (w.size() != 4) throw InvalidArgument(fmt::format("{}: expected rank-4 weight, got {}", op, shape_str(w)));
    return make_dims(op, x[0], x[1], {x[2], x[3], 1}, w[0], w[1], {w[2], w[3], 1},
                     {g.stride[0], g.stride[1], 1}, {g.padding[0], g.padding[1], 0}, 2);
}

void check_bias(const char* op, const Tensor& x, const Tensor& bias, std::size_t cout) {
    if (!bias.defined()) return;
    require_same_dtype(x, bias, op);
    if (bias.rank() != 1 || bias.dim(0) != cout) {
        throw InvalidArgument(fmt::format("{}: bias shape {} does not match {} output channels", op,
                                          shape_str(bias.shape()), cout));
    }
}

Tensor conv_run(const char* op, const Tensor& x, const Tensor& w, const Tensor& bias,
                const ConvDims& d, Shape out_shape) {
    require_same_dtype(x, w, op);
    check_bias(op, x, bias, d.cout);
    Tensor y(std::move(out_shape), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        conv_forward<T>(x.data<T>().data(), w.data<T>().data(),
                        bias.defined() ? bias.data<T>().data() : nullptr, d, y.data<T>().data());
    });
    return y;
}

ConvGrads conv_grads(const Tensor& gy, const Tensor& x, const Tensor& w, const ConvDims& d,
                     bool need_input, bool need_weight, bool need_bias) {
    ConvGrads g;
    if (need_input) g.input = Tensor(x.shape(), x.dtype());
    if (need_weight) g.weight = Tensor(w.shape(), w.dtype());
    if (need_bias) g.bias = Tensor({d.cout}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        conv_backward<T>(gy.data<T>().data(), x.data<T>().data(), w.data<T>().data(), d,
                         need_input ? g.input.data<T>().data() : nullptr,
                         need_weight ? g.weight.data<T>().data() : nullptr,
                         need_bias ? g.bias.data<T>().data() : nullptr);
    });
    return g;
}

// (outer, channels, inner) factorisation around axis 1.
struct ChannelView {
    std::size_t batch, channels, inner;
};

ChannelView channel_view(const Tensor& x, const char* op) {
    if (x.rank() < 2) throw InvalidArgument(fmt::format("{}: expected rank >= 2, got {}", op, shape_str(x.shape())));
    return {x.dim(0), x.dim(1), x.numel() / (x.dim(0) * x.dim(1))};
}

void check_channel_param(const Tensor& p, std::size_t channels, const char* op, const char* what) {
    if (p.rank() != 1 || p.dim(0) != channels) {
        throw InvalidArgument(fmt::format("{}: {} shape {} does not match {} channels", op, what,
                                          shape_str(p.shape()), channels));
    }
}

template <class T, class Fn>
Tensor map_unary(const Tensor& x, Fn fn) {
    Tensor y(x.shape(), x.dtype());
    auto src = x.data<T>();
    auto dst = y.data<T>();
    parallel_for(src.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) dst[i] = fn(src[i]);
    });
    return y;
}

}  // namespace

Shape conv3d_output_shape(const Shape& x, const Shape& w, const Conv3dGeometry& geom) {
    const auto d = dims3("conv3d", x, w, geom);
    return {d.batch, d.cout, d.out[0], d.out[1], d.out[2]};
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv3dGeometry& geom) {
    const auto d = dims3("conv3d", x.shape(), w.shape(), geom);
    return conv_run("conv3d", x, w, bias, d, {d.batch, d.cout, d.out[0], d.out[1], d.out[2]});
}

ConvGrads conv3d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w,
                          const Conv3dGeometry& geom, bool need_input, bool need_weight,
                          bool need_bias) {
    const auto d = dims3("conv3d", x.shape(), w.shape(), geom);
    return conv_grads(grad_out, x, w, d, need_input, need_weight, need_bias);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv2dGeometry& geom) {
    const auto d = dims2("conv2d", x.shape(), w.shape(), geom);
    return conv_run("conv2d", x, w, bias, d, {d.batch, d.cout, d.out[0], d.out[1]});
}

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w,
                          const Conv2dGeometry& geom, bool need_input, bool need_weight,
                          bool need_bias) {
    const auto d = dims2("conv2d", x.shape(), w.shape(), geom);
    return conv_grads(grad_out, x, w, d, need_input, need_weight, need_bias);
}

Tensor avgpool_depth(const Tensor& x) {
    require_rank(x, 5, "adaptive_avgpool_depth1");
    const auto& s = x.shape();
    const std::size_t depth = s[4];
    Tensor y({s[0], s[1], s[2], s[3]}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = y.data<T>();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            T acc = 0;
            for (std::size_t k = 0; k < depth; ++k) acc += src[i * depth + k];
            dst[i] = acc / static_cast<T>(depth);
        }
    });
    return y;
}

Tensor avgpool_depth_backward(const Tensor& grad_out, std::size_t depth) {
    require_rank(grad_out, 4, "adaptive_avgpool_depth1 backward");
    Shape s = grad_out.shape();
    s.push_back(depth);
    Tensor gx(s, grad_out.dtype());
    dispatch(grad_out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto g = grad_out.data<T>();
        auto dst = gx.data<T>();
        const T inv = T(1) / static_cast<T>(depth);
        for (std::size_t i = 0; i < g.size(); ++i) {
            for (std::size_t k = 0; k < depth; ++k) dst[i * depth + k] = g[i] * inv;
        }
    });
    return gx;
}

MaxPoolResult maxpool3d(const Tensor& x, const Triple& kernel, const Triple& stride) {
    require_rank(x, 5, "maxpool3d");
    const auto& s = x.shape();
    Triple out{};
    for (std::size_t a = 0; a < 3; ++a) {
        if (kernel[a] == 0 || stride[a] == 0) throw InvalidArgument("maxpool3d: kernel and stride must be positive");
        if (s[2 + a] < kernel[a]) {
            throw InvalidArgument(fmt::format("maxpool3d: window {} exceeds input extent {} on axis {}",
                                              kernel[a], s[2 + a], kAxisNames[a]));
        }
        out[a] = (s[2 + a] - kernel[a]) / stride[a] + 1;
    }
    MaxPoolResult r;
    r.output = Tensor({s[0], s[1], out[0], out[1], out[2]}, x.dtype());
    r.argmax.resize(r.output.numel());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = r.output.data<T>();
        const std::size_t planes = s[0] * s[1];
        const std::size_t in_plane = s[2] * s[3] * s[4];
        std::size_t o = 0;
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t oh = 0; oh < out[0]; ++oh) {
                for (std::size_t ow = 0; ow < out[1]; ++ow) {
                    for (std::size_t od = 0; od < out[2]; ++od, ++o) {
                        std::size_t best = 0;
                        bool first = true;
                        T best_v = 0;
                        for (std::size_t kh = 0; kh < kernel[0]; ++kh) {
                            for (std::size_t kw = 0; kw < kernel[1]; ++kw) {
                                for (std::size_t kd = 0; kd < kernel[2]; ++kd) {
                                    const std::size_t idx =
                                        p * in_plane +
                                        ((oh * stride[0] + kh) * s[3] + ow * stride[1] + kw) * s[4] +
                                        od * stride[2] + kd;
                                    if (first || src[idx] > best_v) {
                                        best_v = src[idx];
                                        best = idx;
                                        first = false;
                                    }
                                }
                            }
                        }
                        dst[o] = best_v;
                        r.argmax[o] = static_cast<std::uint32_t>(best);
                    }
                }
            }
        }
    });
    return r;
}

Tensor maxpool3d_backward(const Tensor& grad_out, const std::vector<std::uint32_t>& argmax,
                          const Shape& input_shape) {
    Tensor gx(input_shape, grad_out.dtype());
    dispatch(grad_out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto g = grad_out.data<T>();
        auto dst = gx.data<T>();
        for (std::size_t i = 0; i < g.size(); ++i) dst[argmax[i]] += g[i];
    });
    return gx;
}

Tensor upsample2d_nearest(const Tensor& x, std::size_t factor) {
    require_rank(x, 4, "upsample2d_nearest");
    if (factor == 0) throw InvalidArgument("upsample2d_nearest: factor must be positive");
    const auto& s = x.shape();
    const std::size_t H = s[2], W = s[3];
    Tensor y({s[0], s[1], H * factor, W * factor}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = y.data<T>();
        const std::size_t planes = s[0] * s[1];
        const std::size_t Wo = W * factor;
        for (std::size_t p = 0; p < planes; ++p) {
            const T* in = src.data() + p * H * W;
            T* out = dst.data() + p * H * W * factor * factor;
            for (std::size_t oh = 0; oh < H * factor; ++oh) {
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    out[oh * Wo + ow] = in[(oh / factor) * W + ow / factor];
                }
            }
        }
    });
    return y;
}

Tensor upsample2d_nearest_backward(const Tensor& grad_out, std::size_t factor) {
    require_rank(grad_out, 4, "upsample2d_nearest backward");
    const auto& s = grad_out.shape();
    if (s[2] % factor != 0 || s[3] % factor != 0) {
        throw InvalidArgument("upsample2d_nearest backward: gradient extent not divisible by factor");
    }
    const std::size_t H = s[2] / factor, W = s[3] / factor;
    Tensor gx({s[0], s[1], H, W}, grad_out.dtype());
    dispatch(grad_out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto g = grad_out.data<T>();
        auto dst = gx.data<T>();
        const std::size_t planes = s[0] * s[1];
        const std::size_t Wo = s[3];
        for (std::size_t p = 0; p < planes; ++p) {
            const T* in = g.data() + p * s[2] * s[3];
            T* out = dst.data() + p * H * W;
            for (std::size_t oh = 0; oh < s[2]; ++oh) {
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    out[(oh / factor) * W + ow / factor] += in[oh * Wo + ow];
                }
            }
        }
    });
    return gx;
}

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       BatchNormStats& stats) {
    const auto v = channel_view(x, "batchnorm");
    check_channel_param(gamma, v.channels, "batchnorm", "gamma");
    check_channel_param(beta, v.channels, "batchnorm", "beta");
    require_same_dtype(x, gamma, "batchnorm");
    require_same_dtype(x, beta, "batchnorm");
    const double n = static_cast<double>(v.batch * v.inner);
    stats.mean.assign(v.channels, 0.0);
    stats.var.assign(v.channels, 0.0);
    stats.invstd.assign(v.channels, 0.0);
    Tensor y(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = y.data<T>();
        auto g = gamma.data<T>();
        auto bt = beta.data<T>();
        parallel_for(v.channels, [&](std::size_t c_begin, std::size_t c_end) {
            for (std::size_t c = c_begin; c < c_end; ++c) {
                double acc = 0;
                for (std::size_t b = 0; b < v.batch; ++b) {
                    const T* row = src.data() + (b * v.channels + c) * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) acc += row[i];
                }
                const double mean = acc / n;
                double sq = 0;
                for (std::size_t b = 0; b < v.batch; ++b) {
                    const T* row = src.data() + (b * v.channels + c) * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) {
                        const double dv = row[i] - mean;
                        sq += dv * dv;
                    }
                }
                const double var = sq / n;
                const double invstd = 1.0 / std::sqrt(var + eps);
                stats.mean[c] = mean;
                stats.var[c] = var;
                stats.invstd[c] = invstd;
                const T scale_v = static_cast<T>(g[c] * invstd);
                const T shift_v = static_cast<T>(bt[c] - g[c] * mean * invstd);
                for (std::size_t b = 0; b < v.batch; ++b) {
                    const T* row = src.data() + (b * v.channels + c) * v.inner;
                    T* out = dst.data() + (b * v.channels + c) * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) out[i] = row[i] * scale_v + shift_v;
                }
            }
        });
    });
    return y;
}

Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Tensor& mean, const Tensor& var, double eps) {
    const auto v = channel_view(x, "batchnorm");
    check_channel_param(gamma, v.channels, "batchnorm", "gamma");
    check_channel_param(beta, v.channels, "batchnorm", "beta");
    check_channel_param(mean, v.channels, "batchnorm", "running_mean");
    check_channel_param(var, v.channels, "batchnorm", "running_var");
    Tensor y(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = y.data<T>();
        parallel_for(v.channels, [&](std::size_t c_begin, std::size_t c_end) {
            for (std::size_t c = c_begin; c < c_end; ++c) {
                const double invstd = 1.0 / std::sqrt(var.at(c) + eps);
                const T scale_v = static_cast<T>(gamma.at(c) * invstd);
                const T shift_v = static_cast<T>(beta.at(c) - gamma.at(c) * mean.at(c) * invstd);
                for (std::size_t b = 0; b < v.batch; ++b) {
                    const T* row = src.data() + (b * v.channels + c) * v.inner;
                    T* out = dst.data() + (b * v.channels + c) * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) out[i] = row[i] * scale_v + shift_v;
                }
            }
        });
    });
    return y;
}

BatchNormGrads batchnorm_train_backward(const Tensor& grad_out, const Tensor& x,
                                        const Tensor& gamma, const BatchNormStats& stats) {
    const auto v = channel_view(x, "batchnorm");
    const double n = static_cast<double>(v.batch * v.inner);
    BatchNormGrads g{Tensor(x.shape(), x.dtype()), Tensor({v.channels}, x.dtype()),
                     Tensor({v.channels}, x.dtype())};
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto gy = grad_out.data<T>();
        auto gx = g.input.data<T>();
        parallel_for(v.channels, [&](std::size_t c_begin, std::size_t c_end) {
            for (std::size_t c = c_begin; c < c_end; ++c) {
                const double mean = stats.mean[c];
                const double invstd = stats.invstd[c];
                double sum_dy = 0, sum_dy_xhat = 0;
                for (std::size_t b = 0; b < v.batch; ++b) {
                    const std::size_t off = (b * v.channels + c) * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) {
                        const double xhat = (src[off + i] - mean) * invstd;
                        sum_dy += gy[off + i];
                        sum_dy_xhat += gy[off + i] * xhat;
                    }
                }
                g.gamma.set(c, sum_dy_xhat);
                g.beta.set(c, sum_dy);
                const double gm = gamma.at(c);
                const double k = gm * invstd / n;
                for (std::size_t b = 0; b < v.batch; ++b) {
                    const std::size_t off = (b * v.channels + c) * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) {
                        const double xhat = (src[off + i] - mean) * invstd;
                        gx[off + i] = static_cast<T>(k * (n * gy[off + i] - sum_dy - xhat * sum_dy_xhat));
                    }
                }
            }
        });
    });
    return g;
}

BatchNormGrads batchnorm_eval_backward(const Tensor& grad_out, const Tensor& x,
                                       const Tensor& gamma, const Tensor& mean,
                                       const Tensor& var, double eps) {
    const auto v = channel_view(x, "batchnorm");
    BatchNormGrads g{Tensor(x.shape(), x.dtype()), Tensor({v.channels}, x.dtype()),
                     Tensor({v.channels}, x.dtype())};
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto gy = grad_out.data<T>();
        auto gx = g.input.data<T>();
        parallel_for(v.channels, [&](std::size_t c_begin, std::size_t c_end) {
            for (std::size_t c = c_begin; c < c_end; ++c) {
                const double invstd = 1.0 / std::sqrt(var.at(c) + eps);
                const double mu = mean.at(c);
                double sum_dy = 0, sum_dy_xhat = 0;
                const T k = static_cast<T>(gamma.at(c) * invstd);
                for (std::size_t b = 0; b < v.batch; ++b) {
                    const std::size_t off = (b * v.channels + c) * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) {
                        sum_dy += gy[off + i];
                        sum_dy_xhat += gy[off + i] * (src[off + i] - mu) * invstd;
                        gx[off + i] = gy[off + i] * k;
                    }
                }
                g.gamma.set(c, sum_dy_xhat);
                g.beta.set(c, sum_dy);
            }
        });
    });
    return g;
}

Tensor leaky_relu(const Tensor& x, double slope) {
    return dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T s = static_cast<T>(slope);
        return map_unary<T>(x, [s](T v) { return v > T(0) ? v : v * s; });
    });
}

Tensor leaky_relu_backward(const Tensor& grad_out, const Tensor& x, double slope) {
    Tensor gx(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto g = grad_out.data<T>();
        auto dst = gx.data<T>();
        const T s = static_cast<T>(slope);
        parallel_for(src.size(), [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) dst[i] = src[i] > T(0) ? g[i] : g[i] * s;
        });
    });
    return gx;
}

Tensor sigmoid(const Tensor& x) {
    return dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        return map_unary<T>(x, [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        });
    });
}

Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y) {
    Tensor gx(y.shape(), y.dtype());
    dispatch(y.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto s = y.data<T>();
        auto g = grad_out.data<T>();
        auto dst = gx.data<T>();
        for (std::size_t i = 0; i < s.size(); ++i) dst[i] = g[i] * s[i] * (T(1) - s[i]);
    });
    return gx;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw InvalidArgument(
            fmt::format("add: shape mismatch {} vs {}", shape_str(a.shape()), shape_str(b.shape())));
    }
    require_same_dtype(a, b, "add");
    Tensor y = a;
    accumulate(y, b);
    y.set_requires_grad(false);
    return y;
}

Tensor scale(const Tensor& x, double factor) {
    return dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T f = static_cast<T>(factor);
        return map_unary<T>(x, [f](T v) { return v * f; });
    });
}

void accumulate(Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw InvalidArgument(
            fmt::format("accumulate: shape mismatch {} vs {}", shape_str(a.shape()), shape_str(b.shape())));
    }
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dst = a.data<T>();
        auto src = b.data<T>();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() < 2) {
        throw InvalidArgument(fmt::format("concat_channels: rank mismatch {} vs {}", shape_str(a.shape()),
                                          shape_str(b.shape())));
    }
    for (std::size_t i = 0; i < a.rank(); ++i) {
        if (i != 1 && a.dim(i) != b.dim(i)) {
            throw InvalidArgument(fmt::format("concat_channels: axis {} differs ({} vs {})", i, a.dim(i), b.dim(i)));
        }
    }
    require_same_dtype(a, b, "concat_channels");
    Shape s = a.shape();
    s[1] = a.dim(1) + b.dim(1);
    Tensor y(s, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const std::size_t inner = a.numel() / (a.dim(0) * a.dim(1));
        const std::size_t na = a.dim(1) * inner, nb = b.dim(1) * inner;
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        auto out = y.data<T>();
        for (std::size_t n = 0; n < a.dim(0); ++n) {
            std::copy_n(pa.data() + n * na, na, out.data() + n * (na + nb));
            std::copy_n(pb.data() + n * nb, nb, out.data() + n * (na + nb) + na);
        }
    });
    return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, std::size_t first_channels) {
    if (x.rank() < 2 || first_channels == 0 || first_channels >= x.dim(1)) {
        throw InvalidArgument("split_channels: split point out of range");
    }
    Shape sa = x.shape(), sb = x.shape();
    sa[1] = first_channels;
    sb[1] = x.dim(1) - first_channels;
    Tensor a(sa, x.dtype()), b(sb, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const std::size_t inner = x.numel() / (x.dim(0) * x.dim(1));
        const std::size_t na = sa[1] * inner, nb = sb[1] * inner;
        auto src = x.data<T>();
        for (std::size_t n = 0; n < x.dim(0); ++n) {
            std::copy_n(src.data() + n * (na + nb), na, a.data<T>().data() + n * na);
            std::copy_n(src.data() + n * (na + nb) + na, nb, b.data<T>().data() + n * nb);
        }
    });
    return {std::move(a), std::move(b)};
}

double sum(const Tensor& x) {
    return dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        double acc = 0;
        for (T v : x.data<T>()) acc += v;
        return acc;
    });
}

}  // namespace projnet::kernels
