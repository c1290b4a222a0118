#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "vxls/tensor.hpp"

// 3D convolution family. Forward conv3d accumulates per output element in
// strictly ascending (ci, kd, kh, kw) order with std::fma, skipping padded
// positions — the same sequence a naive bounds-checked loop produces, so the
// two agree bit for bit at equal precision. Gradient kernels are free to
// vectorize with lane-split accumulators (checked against finite
// differences, not against an exact oracle).

namespace vxls {

struct Stride3 {
    std::int64_t d = 1, h = 1, w = 1;
};
struct Pad3 {
    std::int64_t d = 0, h = 0, w = 0;
};

namespace detail {

// deterministic 8-lane dot product, a[i]*b[i] summed with fixed lane order
template <typename T, std::int64_t SB>
inline T lane_dot(const T* a, const T* b, std::int64_t n) {
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) acc[j] = std::fma(a[i + j], b[(i + j) * SB], acc[j]);
    T tail(0);
    for (; i < n; ++i) tail = std::fma(a[i], b[i * SB], tail);
    return (((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))) +
           tail;
}

// od range with od*s - p + k in [0, limit)
inline void out_range(std::int64_t limit, std::int64_t s, std::int64_t p, std::int64_t k,
                      std::int64_t omax, std::int64_t& lo, std::int64_t& hi) {
    std::int64_t num = p - k;
    lo = num <= 0 ? 0 : (num + s - 1) / s;
    hi = (limit - 1 + p - k) / s;  // inclusive
    if (hi > omax - 1) hi = omax - 1;
}

}  // namespace detail

template <typename T>
TensorT<T> conv3d(TapeT<T>& tp, const TensorT<T>& x, const TensorT<T>& w, Stride3 stride,
                  Pad3 pad) {
    if (x.rank() != 5 || w.rank() != 5) throw ShapeMismatch("conv3d: need rank-5 input and kernel");
    if (x.shape[1] != w.shape[1]) throw ShapeMismatch("conv3d: channel mismatch");
    if ((w.shape[2] % 2) == 0 || (w.shape[3] % 2) == 0 || (w.shape[4] % 2) == 0)
        throw ShapeMismatch("conv3d: kernel dims must be odd");
    auto stride_ok = [](std::int64_t s) { return s == 1 || s == 2; };
    if (!stride_ok(stride.d) || !stride_ok(stride.h) || !stride_ok(stride.w))
        throw InvalidStride("conv3d: stride must be 1 or 2 per axis");

    const std::int64_t N = x.shape[0], Ci = x.shape[1], D = x.shape[2], H = x.shape[3],
                       W = x.shape[4];
    const std::int64_t Co = w.shape[0], KD = w.shape[2], KH = w.shape[3], KW = w.shape[4];
    const std::int64_t OD = (D + 2 * pad.d - KD) / stride.d + 1;
    const std::int64_t OH = (H + 2 * pad.h - KH) / stride.h + 1;
    const std::int64_t OW = (W + 2 * pad.w - KW) / stride.w + 1;
    if (OD < 1 || OH < 1 || OW < 1) throw ShapeMismatch("conv3d: kernel larger than padded input");

    TensorT<T> out(Shape{N, Co, OD, OH, OW});
    {
        const T* xv = x.ptr();
        const T* wv = w.ptr();
        T* ov = out.mptr();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t co = 0; co < Co; ++co) {
                T* oplane = ov + (n * Co + co) * OD * OH * OW;
                for (std::int64_t ci = 0; ci < Ci; ++ci) {
                    const T* xplane = xv + (n * Ci + ci) * D * H * W;
                    const T* wbase = wv + (co * Ci + ci) * KD * KH * KW;
                    for (std::int64_t kd = 0; kd < KD; ++kd) {
                        std::int64_t odlo, odhi;
                        detail::out_range(D, stride.d, pad.d, kd, OD, odlo, odhi);
                        for (std::int64_t kh = 0; kh < KH; ++kh) {
                            std::int64_t ohlo, ohhi;
                            detail::out_range(H, stride.h, pad.h, kh, OH, ohlo, ohhi);
                            for (std::int64_t kw = 0; kw < KW; ++kw) {
                                std::int64_t owlo, owhi;
                                detail::out_range(W, stride.w, pad.w, kw, OW, owlo, owhi);
                                if (odlo > odhi || ohlo > ohhi || owlo > owhi) continue;
                                const T wk = wbase[(kd * KH + kh) * KW + kw];
                                const std::int64_t count = owhi - owlo + 1;
                                for (std::int64_t od = odlo; od <= odhi; ++od) {
                                    const std::int64_t id = od * stride.d - pad.d + kd;
                                    for (std::int64_t oh = ohlo; oh <= ohhi; ++oh) {
                                        const std::int64_t ih = oh * stride.h - pad.h + kh;
                                        T* dst = oplane + (od * OH + oh) * OW + owlo;
                                        const T* src = xplane + (id * H + ih) * W +
                                                       (owlo * stride.w - pad.w + kw);
                                        if (stride.w == 1) {
                                            for (std::int64_t i = 0; i < count; ++i)
                                                dst[i] = std::fma(wk, src[i], dst[i]);
                                        } else {
                                            for (std::int64_t i = 0; i < count; ++i)
                                                dst[i] = std::fma(wk, src[2 * i], dst[i]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
    }

    if (x.tracked() || w.tracked()) {
        auto xs = x.store, ws = w.store;
        const std::int32_t xn = x.node, wn = w.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            if (xn >= 0) {
                auto& gx = t.grad_buf(xn);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t co = 0; co < Co; ++co) {
                        const T* gplane = gy.data() + (n * Co + co) * OD * OH * OW;
                        for (std::int64_t ci = 0; ci < Ci; ++ci) {
                            T* gxplane = gx.data() + (n * Ci + ci) * D * H * W;
                            const T* wbase = ws->data() + (co * Ci + ci) * KD * KH * KW;
                            for (std::int64_t kd = 0; kd < KD; ++kd) {
                                std::int64_t odlo, odhi;
                                detail::out_range(D, stride.d, pad.d, kd, OD, odlo, odhi);
                                for (std::int64_t kh = 0; kh < KH; ++kh) {
                                    std::int64_t ohlo, ohhi;
                                    detail::out_range(H, stride.h, pad.h, kh, OH, ohlo, ohhi);
                                    for (std::int64_t kw = 0; kw < KW; ++kw) {
                                        std::int64_t owlo, owhi;
                                        detail::out_range(W, stride.w, pad.w, kw, OW, owlo, owhi);
                                        if (odlo > odhi || ohlo > ohhi || owlo > owhi) continue;
                                        const T wk = wbase[(kd * KH + kh) * KW + kw];
                                        const std::int64_t count = owhi - owlo + 1;
                                        for (std::int64_t od = odlo; od <= odhi; ++od) {
                                            const std::int64_t id = od * stride.d - pad.d + kd;
                                            for (std::int64_t oh = ohlo; oh <= ohhi; ++oh) {
                                                const std::int64_t ih = oh * stride.h - pad.h + kh;
                                                const T* src = gplane + (od * OH + oh) * OW + owlo;
                                                T* dst = gxplane + (id * H + ih) * W +
                                                         (owlo * stride.w - pad.w + kw);
                                                if (stride.w == 1) {
                                                    for (std::int64_t i = 0; i < count; ++i)
                                                        dst[i] = std::fma(wk, src[i], dst[i]);
                                                } else {
                                                    for (std::int64_t i = 0; i < count; ++i)
                                                        dst[2 * i] = std::fma(wk, src[i], dst[2 * i]);
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
            }
            if (wn >= 0) {
                auto& gw = t.grad_buf(wn);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t co = 0; co < Co; ++co) {
                        const T* gplane = gy.data() + (n * Co + co) * OD * OH * OW;
                        for (std::int64_t ci = 0; ci < Ci; ++ci) {
                            const T* xplane = xs->data() + (n * Ci + ci) * D * H * W;
                            T* gwbase = gw.data() + (co * Ci + ci) * KD * KH * KW;
                            for (std::int64_t kd = 0; kd < KD; ++kd) {
                                std::int64_t odlo, odhi;
                                detail::out_range(D, stride.d, pad.d, kd, OD, odlo, odhi);
                                for (std::int64_t kh = 0; kh < KH; ++kh) {
                                    std::int64_t ohlo, ohhi;
                                    detail::out_range(H, stride.h, pad.h, kh, OH, ohlo, ohhi);
                                    for (std::int64_t kw = 0; kw < KW; ++kw) {
                                        std::int64_t owlo, owhi;
                                        detail::out_range(W, stride.w, pad.w, kw, OW, owlo, owhi);
                                        if (odlo > odhi || ohlo > ohhi || owlo > owhi) continue;
                                        const std::int64_t count = owhi - owlo + 1;
                                        T acc(0);
                                        for (std::int64_t od = odlo; od <= odhi; ++od) {
                                            const std::int64_t id = od * stride.d - pad.d + kd;
                                            for (std::int64_t oh = ohlo; oh <= ohhi; ++oh) {
                                                const std::int64_t ih = oh * stride.h - pad.h + kh;
                                                const T* g = gplane + (od * OH + oh) * OW + owlo;
                                                const T* src = xplane + (id * H + ih) * W +
                                                               (owlo * stride.w - pad.w + kw);
                                                acc += stride.w == 1
                                                           ? detail::lane_dot<T, 1>(g, src, count)
                                                           : detail::lane_dot<T, 2>(g, src, count);
                                            }
                                        }
                                        gwbase[(kd * KH + kh) * KW + kw] += acc;
                                    }
                                }
                            }
                        }
                    }
            }
        });
    }
    return out;
}

// Transposed conv, kernel 2, stride 2: exact 2x upsampling path of the
// decoder. Kernel layout [Ci, Co, 2, 2, 2]; every output voxel has exactly
// one source voxel per input channel.
template <typename T>
TensorT<T> transposed_conv3d_x2(TapeT<T>& tp, const TensorT<T>& x, const TensorT<T>& w) {
    if (x.rank() != 5 || w.rank() != 5) throw ShapeMismatch("transposed_conv3d: rank-5 only");
    if (x.shape[1] != w.shape[0] || w.shape[2] != 2 || w.shape[3] != 2 || w.shape[4] != 2)
        throw ShapeMismatch("transposed_conv3d: kernel must be [Ci,Co,2,2,2]");
    const std::int64_t N = x.shape[0], Ci = x.shape[1], D = x.shape[2], H = x.shape[3],
                       W = x.shape[4];
    const std::int64_t Co = w.shape[1];
    const std::int64_t OD = 2 * D, OH = 2 * H, OW = 2 * W;
    TensorT<T> out(Shape{N, Co, OD, OH, OW});
    {
        const T* xv = x.ptr();
        const T* wv = w.ptr();
        T* ov = out.mptr();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t co = 0; co < Co; ++co) {
                T* oplane = ov + (n * Co + co) * OD * OH * OW;
                for (std::int64_t od = 0; od < OD; ++od)
                    for (std::int64_t oh = 0; oh < OH; ++oh)
                        for (std::int64_t ow = 0; ow < OW; ++ow) {
                            const std::int64_t kidx = ((od & 1) * 2 + (oh & 1)) * 2 + (ow & 1);
                            T acc(0);
                            for (std::int64_t ci = 0; ci < Ci; ++ci)
                                acc = std::fma(
                                    wv[((ci * Co + co) * 8) + kidx],
                                    xv[((n * Ci + ci) * D + (od >> 1)) * H * W + (oh >> 1) * W +
                                       (ow >> 1)],
                                    acc);
                            oplane[(od * OH + oh) * OW + ow] = acc;
                        }
            }
    }
    if (x.tracked() || w.tracked()) {
        auto xs = x.store, ws = w.store;
        const std::int32_t xn = x.node, wn = w.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            if (xn >= 0) {
                auto& gx = t.grad_buf(xn);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t d = 0; d < D; ++d)
                            for (std::int64_t h = 0; h < H; ++h)
                                for (std::int64_t wx = 0; wx < W; ++wx) {
                                    T acc(0);
                                    for (std::int64_t co = 0; co < Co; ++co)
                                        for (std::int64_t k = 0; k < 8; ++k) {
                                            const std::int64_t od = 2 * d + (k >> 2);
                                            const std::int64_t oh = 2 * h + ((k >> 1) & 1);
                                            const std::int64_t ow = 2 * wx + (k & 1);
                                            acc += (*ws)[((ci * Co + co) * 8) + k] *
                                                   gy[((n * Co + co) * OD + od) * OH * OW +
                                                      oh * OW + ow];
                                        }
                                    gx[((n * Ci + ci) * D + d) * H * W + h * W + wx] += acc;
                                }
            }
            if (wn >= 0) {
                auto& gw = t.grad_buf(wn);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t co = 0; co < Co; ++co)
                            for (std::int64_t k = 0; k < 8; ++k) {
                                T acc(0);
                                for (std::int64_t d = 0; d < D; ++d)
                                    for (std::int64_t h = 0; h < H; ++h) {
                                        const std::int64_t od = 2 * d + (k >> 2);
                                        const std::int64_t oh = 2 * h + ((k >> 1) & 1);
                                        const T* xrow =
                                            xs->data() + ((n * Ci + ci) * D + d) * H * W + h * W;
                                        const T* grow = gy.data() +
                                                        ((n * Co + co) * OD + od) * OH * OW +
                                                        oh * OW + (k & 1);
                                        for (std::int64_t wx = 0; wx < W; ++wx)
                                            acc += xrow[wx] * grow[2 * wx];
                                    }
                                gw[((ci * Co + co) * 8) + k] += acc;
                            }
            }
        });
    }
    return out;
}

// Trilinear 2x upsampling, half-voxel aligned with edge clamping. Computed
// as nested lerps so constant volumes reproduce exactly.
template <typename T>
TensorT<T> trilinear_upsample_x2(TapeT<T>& tp, const TensorT<T>& x) {
    if (x.rank() != 5) throw ShapeMismatch("trilinear_upsample: rank-5 only");
    const std::int64_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3],
                       W = x.shape[4];
    const std::int64_t OD = 2 * D, OH = 2 * H, OW = 2 * W;

    // per-axis source index pair + interpolation weight toward hi
    auto make_axis = [](std::int64_t n, std::vector<std::int64_t>& lo, std::vector<std::int64_t>& hi,
                        std::vector<T>& f) {
        lo.resize(static_cast<std::size_t>(2 * n));
        hi.resize(static_cast<std::size_t>(2 * n));
        f.resize(static_cast<std::size_t>(2 * n));
        for (std::int64_t o = 0; o < 2 * n; ++o) {
            const double src = 0.5 * static_cast<double>(o) - 0.25;
            if (src <= 0.0) {
                lo[o] = hi[o] = 0;
                f[o] = T(0);
            } else if (src >= static_cast<double>(n - 1)) {
                lo[o] = hi[o] = n - 1;
                f[o] = T(0);
            } else {
                const std::int64_t l = static_cast<std::int64_t>(src);
                lo[o] = l;
                hi[o] = l + 1;
                f[o] = static_cast<T>(src - static_cast<double>(l));
            }
        }
    };
    std::vector<std::int64_t> dlo, dhi, hlo, hhi, wlo, whi;
    std::vector<T> df, hf, wf;
    make_axis(D, dlo, dhi, df);
    make_axis(H, hlo, hhi, hf);
    make_axis(W, wlo, whi, wf);

    TensorT<T> out(Shape{N, C, OD, OH, OW});
    auto lerp = [](T a, T b, T f) { return a + f * (b - a); };
    {
        const T* xv = x.ptr();
        T* ov = out.mptr();
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            const T* xplane = xv + nc * D * H * W;
            T* oplane = ov + nc * OD * OH * OW;
            for (std::int64_t od = 0; od < OD; ++od)
                for (std::int64_t oh = 0; oh < OH; ++oh)
                    for (std::int64_t ow = 0; ow < OW; ++ow) {
                        auto at = [&](std::int64_t d, std::int64_t h, std::int64_t w) {
                            return xplane[(d * H + h) * W + w];
                        };
                        const T c00 = lerp(at(dlo[od], hlo[oh], wlo[ow]),
                                           at(dlo[od], hlo[oh], whi[ow]), wf[ow]);
                        const T c01 = lerp(at(dlo[od], hhi[oh], wlo[ow]),
                                           at(dlo[od], hhi[oh], whi[ow]), wf[ow]);
                        const T c10 = lerp(at(dhi[od], hlo[oh], wlo[ow]),
                                           at(dhi[od], hlo[oh], whi[ow]), wf[ow]);
                        const T c11 = lerp(at(dhi[od], hhi[oh], wlo[ow]),
                                           at(dhi[od], hhi[oh], whi[ow]), wf[ow]);
                        oplane[(od * OH + oh) * OW + ow] =
                            lerp(lerp(c00, c01, hf[oh]), lerp(c10, c11, hf[oh]), df[od]);
                    }
        }
    }
    if (x.tracked()) {
        const std::int32_t xn = x.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            auto& gx = t.grad_buf(xn);
            for (std::int64_t nc = 0; nc < N * C; ++nc) {
                T* gxplane = gx.data() + nc * D * H * W;
                const T* gplane = gy.data() + nc * OD * OH * OW;
                for (std::int64_t od = 0; od < OD; ++od)
                    for (std::int64_t oh = 0; oh < OH; ++oh)
                        for (std::int64_t ow = 0; ow < OW; ++ow) {
                            const T g = gplane[(od * OH + oh) * OW + ow];
                            const T wd1 = df[od], wd0 = T(1) - wd1;
                            const T wh1 = hf[oh], wh0 = T(1) - wh1;
                            const T ww1 = wf[ow], ww0 = T(1) - ww1;
                            auto acc = [&](std::int64_t d, std::int64_t h, std::int64_t w, T wt) {
                                gxplane[(d * H + h) * W + w] += g * wt;
                            };
                            acc(dlo[od], hlo[oh], wlo[ow], wd0 * wh0 * ww0);
                            acc(dlo[od], hlo[oh], whi[ow], wd0 * wh0 * ww1);
                            acc(dlo[od], hhi[oh], wlo[ow], wd0 * wh1 * ww0);
                            acc(dlo[od], hhi[oh], whi[ow], wd0 * wh1 * ww1);
                            acc(dhi[od], hlo[oh], wlo[ow], wd1 * wh0 * ww0);
                            acc(dhi[od], hlo[oh], whi[ow], wd1 * wh0 * ww1);
                            acc(dhi[od], hhi[oh], wlo[ow], wd1 * wh1 * ww0);
                            acc(dhi[od], hhi[oh], whi[ow], wd1 * wh1 * ww1);
                        }
            }
        });
    }
    return out;
}

}  // namespace vxls
