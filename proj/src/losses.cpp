#include "projnet/losses.hpp"

#include <cmath>

#include <fmt/format.h>

#include "projnet/ops.hpp"

namespace projnet {

std::vector<double> SsimConfig::taps() const {
    if (window == 0 || window % 2 == 0) throw ConfigError("ssim: window must be odd and positive");
    if (!(sigma > 0.0)) throw ConfigError("ssim: sigma must be positive");
    std::vector<double> g(window);
    const double r = static_cast<double>(window / 2);
    double total = 0;
    for (std::size_t i = 0; i < window; ++i) {
        const double d = static_cast<double>(i) - r;
        g[i] = std::exp(-d * d / (2 * sigma * sigma));
        total += g[i];
    }
    for (auto& v : g) v /= total;
    return g;
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

namespace {

// Plane stack of `planes` images of size h x w, in double.
struct Planes {
    std::size_t planes, h, w;
    std::vector<double> v;

    Planes(std::size_t p, std::size_t hh, std::size_t ww) : planes(p), h(hh), w(ww), v(p * hh * ww, 0.0) {}
};

Planes to_planes(const Tensor& t) {
    Planes p(t.dim(0) * t.dim(1), t.dim(2), t.dim(3));
    p.v = t.to_vector();
    return p;
}

// Separable Gaussian filter with reflection padding.
Planes filter(const Planes& in, const std::vector<double>& taps) {
    const auto r = static_cast<std::ptrdiff_t>(taps.size() / 2);
    Planes tmp(in.planes, in.h, in.w), out(in.planes, in.h, in.w);
    for (std::size_t p = 0; p < in.planes; ++p) {
        const double* src = in.v.data() + p * in.h * in.w;
        double* t = tmp.v.data() + p * in.h * in.w;
        double* o = out.v.data() + p * in.h * in.w;
        for (std::size_t i = 0; i < in.h; ++i) {
            for (std::size_t j = 0; j < in.w; ++j) {
                double acc = 0;
                for (std::size_t k = 0; k < taps.size(); ++k) {
                    const auto jj = reflect_index(static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(k) - r, in.w);
                    acc += taps[k] * src[i * in.w + jj];
                }
                t[i * in.w + j] = acc;
            }
        }
        for (std::size_t i = 0; i < in.h; ++i) {
            for (std::size_t j = 0; j < in.w; ++j) {
                double acc = 0;
                for (std::size_t k = 0; k < taps.size(); ++k) {
                    const auto ii = reflect_index(static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(k) - r, in.h);
                    acc += taps[k] * t[ii * in.w + j];
                }
                o[i * in.w + j] = acc;
            }
        }
    }
    return out;
}

// Adjoint of filter().
Planes filter_adjoint(const Planes& g, const std::vector<double>& taps) {
    const auto r = static_cast<std::ptrdiff_t>(taps.size() / 2);
    Planes tmp(g.planes, g.h, g.w), out(g.planes, g.h, g.w);
    for (std::size_t p = 0; p < g.planes; ++p) {
        const double* src = g.v.data() + p * g.h * g.w;
        double* t = tmp.v.data() + p * g.h * g.w;
        double* o = out.v.data() + p * g.h * g.w;
        for (std::size_t i = 0; i < g.h; ++i) {
            for (std::size_t j = 0; j < g.w; ++j) {
                for (std::size_t k = 0; k < taps.size(); ++k) {
                    const auto ii = reflect_index(static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(k) - r, g.h);
                    t[ii * g.w + j] += taps[k] * src[i * g.w + j];
                }
            }
        }
        for (std::size_t i = 0; i < g.h; ++i) {
            for (std::size_t j = 0; j < g.w; ++j) {
                for (std::size_t k = 0; k < taps.size(); ++k) {
                    const auto jj = reflect_index(static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(k) - r, g.w);
                    o[i * g.w + jj] += taps[k] * t[i * g.w + j];
                }
            }
        }
    }
    return out;
}

struct SsimTerms {
    Planes mx, my, exx, eyy, exy, s;
};

void check_pair(const Tensor& x, const Tensor& y, const char* op) {
    require_rank(x, 4, op);
    if (x.shape() != y.shape()) {
        throw InvalidArgument(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(x.shape()), shape_str(y.shape())));
    }
    require_same_dtype(x, y, op);
    if (x.dim(1) != 1) throw InvalidArgument(fmt::format("{}: expected a single channel, got {}", op, x.dim(1)));
}

SsimTerms ssim_terms(const Planes& x, const Planes& y, const SsimConfig& cfg) {
    const auto taps = cfg.taps();
    Planes xx = x, yy = y, xy = x;
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        xx.v[i] = x.v[i] * x.v[i];
        yy.v[i] = y.v[i] * y.v[i];
        xy.v[i] = x.v[i] * y.v[i];
    }
    SsimTerms t{filter(x, taps), filter(y, taps), filter(xx, taps), filter(yy, taps), filter(xy, taps), x};
    const double c1 = cfg.c1(), c2 = cfg.c2();
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const double mx = t.mx.v[i], my = t.my.v[i];
        const double a1 = 2 * mx * my + c1;
        const double a2 = 2 * (t.exy.v[i] - mx * my) + c2;
        const double b1 = mx * mx + my * my + c1;
        const double b2 = (t.exx.v[i] - mx * mx) + (t.eyy.v[i] - my * my) + c2;
        t.s.v[i] = (a1 * a2) / (b1 * b2);
    }
    return t;
}

Tensor from_planes(const Planes& p, const Shape& shape, DType dtype) {
    return Tensor::from(shape, std::span<const double>(p.v), dtype);
}

}  // namespace

Tensor ssim_map(const Tensor& x, const Tensor& y, const SsimConfig& cfg) {
    check_pair(x, y, "ssim_map");
    const auto terms = ssim_terms(to_planes(x), to_planes(y), cfg);
    return from_planes(terms.s, x.shape(), x.dtype());
}

Var nmssim_loss(Var x, Var y, const SsimConfig& cfg) {
    const Tensor& xv = x.value();
    const Tensor& yv = y.value();
    check_pair(xv, yv, "nmssim_loss");
    const auto terms = ssim_terms(to_planes(xv), to_planes(yv), cfg);
    double total = 0;
    for (double v : terms.s.v) total += v;
    const double n = static_cast<double>(terms.s.v.size());
    return x.tape->record(Tensor::scalar(-total / n, xv.dtype()), {x, y}, [x, y, cfg](Tape& t, const Tensor& g) {
        const Tensor& xt = t.value(x);
        const Tensor& yt = t.value(y);
        const Planes px = to_planes(xt), py = to_planes(yt);
        const auto st = ssim_terms(px, py, cfg);
        const auto taps = cfg.taps();
        const double c1 = cfg.c1(), c2 = cfg.c2();
        const double scale = -g.item() / static_cast<double>(px.v.size());
        // Per-pixel partials of S w.r.t. the local statistics, scaled by dL/dS.
        Planes d_mx = px, d_my = px, d_exx = px, d_eyy = px, d_exy = px;
        for (std::size_t i = 0; i < px.v.size(); ++i) {
            const double mx = st.mx.v[i], my = st.my.v[i], s = st.s.v[i];
            const double a1 = 2 * mx * my + c1;
            const double a2 = 2 * (st.exy.v[i] - mx * my) + c2;
            const double b1 = mx * mx + my * my + c1;
            const double b2 = (st.exx.v[i] - mx * mx) + (st.eyy.v[i] - my * my) + c2;
            const double b12 = b1 * b2;
            d_mx.v[i] = scale * ((2 * my * a2 - 2 * my * a1) / b12 - s * (2 * mx / b1 - 2 * mx / b2));
            d_my.v[i] = scale * ((2 * mx * a2 - 2 * mx * a1) / b12 - s * (2 * my / b1 - 2 * my / b2));
            d_exx.v[i] = scale * (-s / b2);
            d_eyy.v[i] = d_exx.v[i];
            d_exy.v[i] = scale * (2 * a1 / b12);
        }
        const Planes f_exy = filter_adjoint(d_exy, taps);
        if (t.requires_grad(x)) {
            const Planes f_mx = filter_adjoint(d_mx, taps);
            const Planes f_exx = filter_adjoint(d_exx, taps);
            Planes gx = px;
            for (std::size_t i = 0; i < gx.v.size(); ++i) {
                gx.v[i] = f_mx.v[i] + 2 * px.v[i] * f_exx.v[i] + py.v[i] * f_exy.v[i];
            }
            t.accumulate_grad(x, from_planes(gx, xt.shape(), xt.dtype()));
        }
        if (t.requires_grad(y)) {
            const Planes f_my = filter_adjoint(d_my, taps);
            const Planes f_eyy = filter_adjoint(d_eyy, taps);
            Planes gy = py;
            for (std::size_t i = 0; i < gy.v.size(); ++i) {
                gy.v[i] = f_my.v[i] + 2 * py.v[i] * f_eyy.v[i] + px.v[i] * f_exy.v[i];
            }
            t.accumulate_grad(y, from_planes(gy, yt.shape(), yt.dtype()));
        }
    });
}

namespace {

void check_seg_pair(const Tensor& p, const Tensor& t, const char* op) {
    if (p.shape() != t.shape()) {
        throw InvalidArgument(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(p.shape()), shape_str(t.shape())));
    }
    require_same_dtype(p, t, op);
    if (p.rank() < 1) throw InvalidArgument(fmt::format("{}: expected a batched tensor", op));
}

}  // namespace

Var dice_loss(Var pred, Var target, double smooth) {
    const Tensor& p = pred.value();
    const Tensor& t = target.value();
    check_seg_pair(p, t, "dice_loss");
    const std::size_t batch = p.dim(0);
    const std::size_t per = p.numel() / batch;
    struct Sums {
        std::vector<double> inter, sp, st;
    };
    auto sums = [batch, per](const Tensor& pp, const Tensor& tt) {
        Sums s{std::vector<double>(batch), std::vector<double>(batch), std::vector<double>(batch)};
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
                const double pv = pp.at(i), tv = tt.at(i);
                s.inter[b] += pv * tv;
                s.sp[b] += pv;
                s.st[b] += tv;
            }
        }
        return s;
    };
    const Sums s = sums(p, t);
    double loss = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        loss += 1.0 - (2 * s.inter[b] + smooth) / (s.sp[b] + s.st[b] + smooth);
    }
    loss /= static_cast<double>(batch);
    return pred.tape->record(
        Tensor::scalar(loss, p.dtype()), {pred, target}, [pred, target, smooth, batch, per, sums](Tape& tp, const Tensor& g) {
            const Tensor& pv = tp.value(pred);
            const Tensor& tv = tp.value(target);
            const Sums s = sums(pv, tv);
            const double go = g.item() / static_cast<double>(batch);
            Tensor gp(pv.shape(), pv.dtype()), gt(tv.shape(), tv.dtype());
            for (std::size_t b = 0; b < batch; ++b) {
                const double num = 2 * s.inter[b] + smooth;
                const double den = s.sp[b] + s.st[b] + smooth;
                for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
                    gp.set(i, -go * (2 * tv.at(i) * den - num) / (den * den));
                    gt.set(i, -go * (2 * pv.at(i) * den - num) / (den * den));
                }
            }
            if (tp.requires_grad(pred)) tp.accumulate_grad(pred, std::move(gp));
            if (tp.requires_grad(target)) tp.accumulate_grad(target, std::move(gt));
        });
}

Var bce_loss(Var pred, Var target, double clamp) {
    const Tensor& p = pred.value();
    const Tensor& t = target.value();
    check_seg_pair(p, t, "bce_loss");
    const double n = static_cast<double>(p.numel());
    double total = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const double pc = std::clamp(p.at(i), clamp, 1.0 - clamp);
        const double tv = t.at(i);
        total -= tv * std::log(pc) + (1 - tv) * std::log(1 - pc);
    }
    return pred.tape->record(Tensor::scalar(total / n, p.dtype()), {pred, target},
                             [pred, target, clamp, n](Tape& tp, const Tensor& g) {
                                 const Tensor& pv = tp.value(pred);
                                 const Tensor& tv = tp.value(target);
                                 const double go = g.item() / n;
                                 Tensor gp(pv.shape(), pv.dtype()), gt(tv.shape(), tv.dtype());
                                 for (std::size_t i = 0; i < pv.numel(); ++i) {
                                     const double raw = pv.at(i);
                                     const double pc = std::clamp(raw, clamp, 1.0 - clamp);
                                     const double t = tv.at(i);
                                     const bool inside = raw > clamp && raw < 1.0 - clamp;
                                     gp.set(i, inside ? go * (-t / pc + (1 - t) / (1 - pc)) : 0.0);
                                     gt.set(i, -go * (std::log(pc) - std::log(1 - pc)));
                                 }
                                 if (tp.requires_grad(pred)) tp.accumulate_grad(pred, std::move(gp));
                                 if (tp.requires_grad(target)) tp.accumulate_grad(target, std::move(gt));
                             });
}

Var seg_loss(Var pred, Var target, const SegLossConfig& cfg) {
    return ops::add(dice_loss(pred, target, cfg.dice_smooth), bce_loss(pred, target, cfg.bce_clamp));
}

}  // namespace projnet
