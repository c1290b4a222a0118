#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "vxls/rng.hpp"
#include "vxls/tensor.hpp"

// Differentiable tensor operations. Every op takes the tape explicitly and
// records a node only when some input is tracked; all tensors in one
// forward pass must share one tape. Outputs own fresh storage (reshape
// aliases, but storage is never mutated after creation).

namespace vxls {

// ---------------------------------------------------------------- broadcast

// Binary ops accept equal shapes, a scalar (numel 1) operand, or a 1-D
// per-channel vector matching shape[1] of a rank>=2 operand.
struct BcastPlan {
    int a_role = 0, b_role = 0;  // 0 full, 1 scalar, 2 channel vector
    std::int64_t C = 1, inner = 1;
    std::int64_t n = 0;
};

inline BcastPlan plan_binary(const Shape& a, const Shape& b) {
    BcastPlan p;
    if (a == b) {
        p.n = numel_of(a);
        return p;
    }
    auto chan_ok = [](const Shape& small, const Shape& big) {
        return small.size() == 1 && big.size() >= 2 && small[0] == big[1];
    };
    const std::int64_t na = numel_of(a), nb = numel_of(b);
    if (nb == 1) {
        p.b_role = 1;
        p.n = na;
    } else if (na == 1) {
        p.a_role = 1;
        p.n = nb;
    } else if (chan_ok(b, a)) {
        p.b_role = 2;
        p.C = a[1];
        p.inner = numel_of(a) / (a[0] * a[1]);
        p.n = na;
    } else if (chan_ok(a, b)) {
        p.a_role = 2;
        p.C = b[1];
        p.inner = numel_of(b) / (b[0] * b[1]);
        p.n = nb;
    } else {
        throw ShapeMismatch("binary op: shapes neither equal nor channel-broadcastable");
    }
    return p;
}

namespace detail {

template <typename T>
inline T bval(const std::vector<T>& v, int role, std::int64_t i, const BcastPlan& p) {
    if (role == 0) return v[static_cast<std::size_t>(i)];
    if (role == 1) return v[0];
    return v[static_cast<std::size_t>((i / p.inner) % p.C)];
}

template <typename T>
inline void baccum(std::vector<T>& g, int role, std::int64_t i, const BcastPlan& p, T c) {
    if (role == 0)
        g[static_cast<std::size_t>(i)] += c;
    else if (role == 1)
        g[0] += c;
    else
        g[static_cast<std::size_t>((i / p.inner) % p.C)] += c;
}

// F: (a_i, b_i) -> y_i.  DA/DB: (a_i, b_i, y_i) -> local derivative.
template <typename T, class F, class DA, class DB>
TensorT<T> binary_op(TapeT<T>& tp, const TensorT<T>& a, const TensorT<T>& b, F f, DA da, DB db) {
    BcastPlan p = plan_binary(a.shape, b.shape);
    const Shape& oshape = (p.a_role == 0) ? a.shape : b.shape;
    TensorT<T> out(oshape);
    {
        const auto& av = a.data();
        const auto& bv = b.data();
        auto& ov = out.mut();
        for (std::int64_t i = 0; i < p.n; ++i)
            ov[static_cast<std::size_t>(i)] = f(bval(av, p.a_role, i, p), bval(bv, p.b_role, i, p));
    }
    if (a.tracked() || b.tracked()) {
        auto as = a.store, bs = b.store, os = out.store;
        const std::int32_t an = a.node, bn = b.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            if (an >= 0) {
                auto& ga = t.grad_buf(an);
                for (std::int64_t i = 0; i < p.n; ++i) {
                    const std::size_t ui = static_cast<std::size_t>(i);
                    baccum(ga, p.a_role, i, p,
                           gy[ui] * da(bval(*as, p.a_role, i, p), bval(*bs, p.b_role, i, p), (*os)[ui]));
                }
            }
            if (bn >= 0) {
                auto& gb = t.grad_buf(bn);
                for (std::int64_t i = 0; i < p.n; ++i) {
                    const std::size_t ui = static_cast<std::size_t>(i);
                    baccum(gb, p.b_role, i, p,
                           gy[ui] * db(bval(*as, p.a_role, i, p), bval(*bs, p.b_role, i, p), (*os)[ui]));
                }
            }
        });
    }
    return out;
}

// F: x_i -> y_i.  DF: (x_i, y_i) -> dy/dx.
template <typename T, class F, class DF>
TensorT<T> unary_op(TapeT<T>& tp, const TensorT<T>& x, F f, DF df) {
    TensorT<T> out(x.shape);
    const auto& xv = x.data();
    auto& ov = out.mut();
    const std::size_t n = xv.size();
    for (std::size_t i = 0; i < n; ++i) ov[i] = f(xv[i]);
    if (x.tracked()) {
        auto xs = x.store, os = out.store;
        const std::int32_t xn = x.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            auto& gx = t.grad_buf(xn);
            for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * df((*xs)[i], (*os)[i]);
        });
    }
    return out;
}

template <typename T>
inline T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace detail

// ------------------------------------------------------------- elementwise

template <typename T>
TensorT<T> add(TapeT<T>& tp, const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        tp, a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(1); });
}

template <typename T>
TensorT<T> sub(TapeT<T>& tp, const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        tp, a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(-1); });
}

template <typename T>
TensorT<T> mul(TapeT<T>& tp, const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        tp, a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
        [](T x, T, T) { return x; });
}

template <typename T>
TensorT<T> div(TapeT<T>& tp, const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        tp, a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T, T y, T o) { return -o / y; });
}

// ties resolve to the first operand (subgradient choice)
template <typename T>
TensorT<T> maximum(TapeT<T>& tp, const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        tp, a, b, [](T x, T y) { return x >= y ? x : y; },
        [](T x, T y, T) { return x >= y ? T(1) : T(0); },
        [](T x, T y, T) { return x >= y ? T(0) : T(1); });
}

template <typename T>
TensorT<T> neg(TapeT<T>& tp, const TensorT<T>& x) {
    return detail::unary_op(
        tp, x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> exp(TapeT<T>& tp, const TensorT<T>& x) {
    return detail::unary_op(
        tp, x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
TensorT<T> log(TapeT<T>& tp, const TensorT<T>& x) {
    return detail::unary_op(
        tp, x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
TensorT<T> sigmoid(TapeT<T>& tp, const TensorT<T>& x) {
    return detail::unary_op(
        tp, x, [](T v) { return detail::stable_sigmoid(v); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TensorT<T> tanh(TapeT<T>& tp, const TensorT<T>& x) {
    return detail::unary_op(
        tp, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
TensorT<T> relu(TapeT<T>& tp, const TensorT<T>& x) {
    return detail::unary_op(
        tp, x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
TensorT<T> leaky_relu(TapeT<T>& tp, const TensorT<T>& x, T alpha) {
    return detail::unary_op(
        tp, x, [alpha](T v) { return v > T(0) ? v : alpha * v; },
        [alpha](T v, T) { return v > T(0) ? T(1) : alpha; });
}

template <typename T>
TensorT<T> abs(TapeT<T>& tp, const TensorT<T>& x) {
    return detail::unary_op(
        tp, x, [](T v) { return v < T(0) ? -v : v; },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
TensorT<T> mul_const(TapeT<T>& tp, const TensorT<T>& x, T c) {
    return detail::unary_op(
        tp, x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
TensorT<T> add_const(TapeT<T>& tp, const TensorT<T>& x, T c) {
    return detail::unary_op(
        tp, x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

// ------------------------------------------------------------------ matmul

// C[m,n] = sum_k A[m,k] B[k,n], fma-anchored with k strictly ascending per
// output element (the documented accumulation order all conv paths share).
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t m = 0; m < M; ++m) {
        T* crow = c + m * N;
        const T* arow = a + m * K;
        for (std::int64_t k = 0; k < K; ++k) {
            const T av = arow[k];
            const T* brow = b + k * N;
            for (std::int64_t n = 0; n < N; ++n) crow[n] = std::fma(av, brow[n], crow[n]);
        }
    }
}

template <typename T>
TensorT<T> matmul(TapeT<T>& tp, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
        throw ShapeMismatch("matmul: need [m,k] x [k,n]");
    const std::int64_t M = a.shape[0], K = a.shape[1], N = b.shape[1];
    TensorT<T> out(Shape{M, N});
    gemm_acc(a.ptr(), b.ptr(), out.mptr(), M, K, N);
    if (a.tracked() || b.tracked()) {
        auto as = a.store, bs = b.store;
        const std::int32_t an = a.node, bn = b.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            if (an >= 0) {  // dA[m,k] += sum_n gy[m,n] * B[k,n]
                auto& ga = t.grad_buf(an);
                for (std::int64_t m = 0; m < M; ++m)
                    for (std::int64_t k = 0; k < K; ++k) {
                        T acc(0);
                        const T* gyr = gy.data() + m * N;
                        const T* br = bs->data() + k * N;
                        for (std::int64_t n = 0; n < N; ++n) acc += gyr[n] * br[n];
                        ga[static_cast<std::size_t>(m * K + k)] += acc;
                    }
            }
            if (bn >= 0) {  // dB[k,n] += sum_m A[m,k] * gy[m,n]
                auto& gb = t.grad_buf(bn);
                for (std::int64_t k = 0; k < K; ++k)
                    for (std::int64_t m = 0; m < M; ++m) {
                        const T av = (*as)[static_cast<std::size_t>(m * K + k)];
                        const T* gyr = gy.data() + m * N;
                        T* gbr = gb.data() + k * N;
                        for (std::int64_t n = 0; n < N; ++n) gbr[n] += av * gyr[n];
                    }
            }
        });
    }
    return out;
}

// --------------------------------------------------------------shape moves

template <typename T>
TensorT<T> reshape(TapeT<T>& tp, const TensorT<T>& x, Shape s) {
    if (numel_of(s) != x.numel()) throw ShapeMismatch("reshape: numel changed");
    TensorT<T> out;
    out.shape = std::move(s);
    out.store = x.store;  // alias
    if (x.tracked()) {
        const std::int32_t xn = x.node;
        const std::size_t n = static_cast<std::size_t>(x.numel());
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            auto& gx = t.grad_buf(xn);
            for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i];
        });
    }
    return out;
}

// slice [start, start+len) along `axis`
template <typename T>
TensorT<T> narrow(TapeT<T>& tp, const TensorT<T>& x, std::size_t axis, std::int64_t start,
                  std::int64_t len) {
    if (axis >= x.rank() || start < 0 || len <= 0 || start + len > x.shape[axis])
        throw ShapeMismatch("narrow: bad axis/range");
    Shape oshape = x.shape;
    oshape[axis] = len;
    std::int64_t inner = 1;
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
    const std::int64_t outer = x.numel() / (x.shape[axis] * inner);
    const std::int64_t xaxis = x.shape[axis];
    TensorT<T> out(oshape);
    {
        const auto& xv = x.data();
        auto& ov = out.mut();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(xv.data() + (o * xaxis + start) * inner, len * inner,
                        ov.data() + o * len * inner);
    }
    if (x.tracked()) {
        const std::int32_t xn = x.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            auto& gx = t.grad_buf(xn);
            for (std::int64_t o = 0; o < outer; ++o) {
                const T* src = gy.data() + o * len * inner;
                T* dst = gx.data() + (o * xaxis + start) * inner;
                for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> concat(TapeT<T>& tp, const TensorT<T>& a, const TensorT<T>& b, std::size_t axis) {
    if (a.rank() != b.rank() || axis >= a.rank()) throw ShapeMismatch("concat: rank mismatch");
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis && a.shape[i] != b.shape[i])
            throw ShapeMismatch("concat: non-axis dims differ");
    Shape oshape = a.shape;
    oshape[axis] += b.shape[axis];
    std::int64_t inner = 1;
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape[i];
    const std::int64_t ablk = a.shape[axis] * inner, bblk = b.shape[axis] * inner;
    const std::int64_t outer = a.numel() / ablk;
    TensorT<T> out(oshape);
    {
        auto& ov = out.mut();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy_n(a.ptr() + o * ablk, ablk, ov.data() + o * (ablk + bblk));
            std::copy_n(b.ptr() + o * bblk, bblk, ov.data() + o * (ablk + bblk) + ablk);
        }
    }
    if (a.tracked() || b.tracked()) {
        const std::int32_t an = a.node, bn = b.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            if (an >= 0) {
                auto& ga = t.grad_buf(an);
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* src = gy.data() + o * (ablk + bblk);
                    for (std::int64_t i = 0; i < ablk; ++i) ga[o * ablk + i] += src[i];
                }
            }
            if (bn >= 0) {
                auto& gb = t.grad_buf(bn);
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* src = gy.data() + o * (ablk + bblk) + ablk;
                    for (std::int64_t i = 0; i < bblk; ++i) gb[o * bblk + i] += src[i];
                }
            }
        });
    }
    return out;
}

// [N,C,D,H,W] -> [N, D*H*W, C], z-major raster token order (w fastest)
template <typename T>
TensorT<T> volume_to_tokens(TapeT<T>& tp, const TensorT<T>& x) {
    if (x.rank() != 5) throw ShapeMismatch("volume_to_tokens: need rank-5 input");
    const std::int64_t N = x.shape[0], C = x.shape[1];
    const std::int64_t S = x.shape[2] * x.shape[3] * x.shape[4];
    TensorT<T> out(Shape{N, S, C});
    {
        const auto& xv = x.data();
        auto& ov = out.mut();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const T* src = xv.data() + (n * C + c) * S;
                T* dst = ov.data() + n * S * C + c;
                for (std::int64_t s = 0; s < S; ++s) dst[s * C] = src[s];
            }
    }
    if (x.tracked()) {
        const std::int32_t xn = x.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            auto& gx = t.grad_buf(xn);
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* src = gy.data() + n * S * C + c;
                    T* dst = gx.data() + (n * C + c) * S;
                    for (std::int64_t s = 0; s < S; ++s) dst[s] += src[s * C];
                }
        });
    }
    return out;
}

// [N, D*H*W, C] -> [N,C,D,H,W]; inverse of volume_to_tokens
template <typename T>
TensorT<T> tokens_to_volume(TapeT<T>& tp, const TensorT<T>& x, std::int64_t D, std::int64_t H,
                            std::int64_t W) {
    if (x.rank() != 3 || x.shape[1] != D * H * W)
        throw ShapeMismatch("tokens_to_volume: token count does not match D*H*W");
    const std::int64_t N = x.shape[0], C = x.shape[2], S = x.shape[1];
    TensorT<T> out(Shape{N, C, D, H, W});
    {
        const auto& xv = x.data();
        auto& ov = out.mut();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const T* src = xv.data() + n * S * C + c;
                T* dst = ov.data() + (n * C + c) * S;
                for (std::int64_t s = 0; s < S; ++s) dst[s] = src[s * C];
            }
    }
    if (x.tracked()) {
        const std::int32_t xn = x.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            auto& gx = t.grad_buf(xn);
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* src = gy.data() + (n * C + c) * S;
                    T* dst = gx.data() + n * S * C + c;
                    for (std::int64_t s = 0; s < S; ++s) dst[s * C] += src[s];
                }
        });
    }
    return out;
}

// -------------------------------------------------------------- reductions

template <typename T>
TensorT<T> sum_all(TapeT<T>& tp, const TensorT<T>& x) {
    TensorT<T> out(Shape{1});
    T acc(0);
    for (T v : x.data()) acc += v;
    out.mut()[0] = acc;
    if (x.tracked()) {
        const std::int32_t xn = x.node;
        const std::size_t n = x.data().size();
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const T g = t.grad_buf(self)[0];
            auto& gx = t.grad_buf(xn);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

template <typename T>
TensorT<T> mean_all(TapeT<T>& tp, const TensorT<T>& x) {
    TensorT<T> s = sum_all(tp, x);
    return mul_const(tp, s, T(1) / static_cast<T>(x.numel()));
}

// sum over all axes but 0: [N, ...] -> [N]
template <typename T>
TensorT<T> sum_per_sample(TapeT<T>& tp, const TensorT<T>& x) {
    if (x.rank() < 1) throw ShapeMismatch("sum_per_sample: rank-0 input");
    const std::int64_t N = x.shape[0];
    const std::int64_t inner = x.numel() / N;
    TensorT<T> out(Shape{N});
    {
        auto& ov = out.mut();
        for (std::int64_t s = 0; s < N; ++s) {
            T acc(0);
            const T* src = x.ptr() + s * inner;
            for (std::int64_t i = 0; i < inner; ++i) acc += src[i];
            ov[static_cast<std::size_t>(s)] = acc;
        }
    }
    if (x.tracked()) {
        const std::int32_t xn = x.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            auto& gx = t.grad_buf(xn);
            for (std::int64_t s = 0; s < N; ++s) {
                const T g = gy[static_cast<std::size_t>(s)];
                T* dst = gx.data() + s * inner;
                for (std::int64_t i = 0; i < inner; ++i) dst[i] += g;
            }
        });
    }
    return out;
}

// --------------------------------------------------------- softmax / norms

// log softmax over axis 1 of [N, C, ...], max-shifted for stability
template <typename T>
TensorT<T> channel_log_softmax(TapeT<T>& tp, const TensorT<T>& x) {
    if (x.rank() < 2) throw ShapeMismatch("channel_log_softmax: need rank >= 2");
    const std::int64_t N = x.shape[0], C = x.shape[1];
    const std::int64_t inner = x.numel() / (N * C);
    TensorT<T> out(x.shape);
    {
        const auto& xv = x.data();
        auto& ov = out.mut();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t s = 0; s < inner; ++s) {
                const std::int64_t base = n * C * inner + s;
                T mx = xv[static_cast<std::size_t>(base)];
                for (std::int64_t c = 1; c < C; ++c)
                    mx = std::max(mx, xv[static_cast<std::size_t>(base + c * inner)]);
                T lse(0);
                for (std::int64_t c = 0; c < C; ++c)
                    lse += std::exp(xv[static_cast<std::size_t>(base + c * inner)] - mx);
                lse = mx + std::log(lse);
                for (std::int64_t c = 0; c < C; ++c)
                    ov[static_cast<std::size_t>(base + c * inner)] =
                        xv[static_cast<std::size_t>(base + c * inner)] - lse;
            }
    }
    if (x.tracked()) {
        auto os = out.store;
        const std::int32_t xn = x.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            auto& gx = t.grad_buf(xn);
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t s = 0; s < inner; ++s) {
                    const std::int64_t base = n * C * inner + s;
                    T gsum(0);
                    for (std::int64_t c = 0; c < C; ++c)
                        gsum += gy[static_cast<std::size_t>(base + c * inner)];
                    for (std::int64_t c = 0; c < C; ++c) {
                        const std::size_t i = static_cast<std::size_t>(base + c * inner);
                        gx[i] += gy[i] - std::exp((*os)[i]) * gsum;
                    }
                }
        });
    }
    return out;
}

// Instance norm over spatial axes of [N, C, ...] with per-channel affine.
// dx = g*r*(dy - mean(dy) - xhat*mean(dy*xhat)) per (n,c) group.
template <typename T>
TensorT<T> instance_norm(TapeT<T>& tp, const TensorT<T>& x, const TensorT<T>& gamma,
                         const TensorT<T>& beta, T eps = T(1e-5)) {
    if (x.rank() < 3) throw ShapeMismatch("instance_norm: need [N,C,spatial...]");
    const std::int64_t N = x.shape[0], C = x.shape[1];
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeMismatch("instance_norm: scale/shift must have C elements");
    const std::int64_t M = x.numel() / (N * C);
    TensorT<T> out(x.shape);
    auto xhat = std::make_shared<std::vector<T>>(x.data().size());
    auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N * C));
    {
        const auto& xv = x.data();
        auto& ov = out.mut();
        for (std::int64_t g = 0; g < N * C; ++g) {
            const T* src = xv.data() + g * M;
            T mean(0);
            for (std::int64_t i = 0; i < M; ++i) mean += src[i];
            mean /= static_cast<T>(M);
            T var(0);
            for (std::int64_t i = 0; i < M; ++i) {
                const T d = src[i] - mean;
                var += d * d;
            }
            var /= static_cast<T>(M);
            const T r = T(1) / std::sqrt(var + eps);
            (*rstd)[static_cast<std::size_t>(g)] = r;
            const T gm = gamma.data()[static_cast<std::size_t>(g % C)];
            const T bt = beta.data()[static_cast<std::size_t>(g % C)];
            T* xh = xhat->data() + g * M;
            T* dst = ov.data() + g * M;
            for (std::int64_t i = 0; i < M; ++i) {
                xh[i] = (src[i] - mean) * r;
                dst[i] = gm * xh[i] + bt;
            }
        }
    }
    if (x.tracked() || gamma.tracked() || beta.tracked()) {
        auto gs = gamma.store;
        const std::int32_t xn = x.node, gn = gamma.node, bn = beta.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            for (std::int64_t g = 0; g < N * C; ++g) {
                const std::int64_t c = g % C;
                const T* dy = gy.data() + g * M;
                const T* xh = xhat->data() + g * M;
                T sum_dy(0), sum_dyxh(0);
                for (std::int64_t i = 0; i < M; ++i) {
                    sum_dy += dy[i];
                    sum_dyxh += dy[i] * xh[i];
                }
                if (gn >= 0) t.grad_buf(gn)[static_cast<std::size_t>(c)] += sum_dyxh;
                if (bn >= 0) t.grad_buf(bn)[static_cast<std::size_t>(c)] += sum_dy;
                if (xn >= 0) {
                    auto& gx = t.grad_buf(xn);
                    const T gr = (*gs)[static_cast<std::size_t>(c)] *
                                 (*rstd)[static_cast<std::size_t>(g)];
                    const T mdy = sum_dy / static_cast<T>(M);
                    const T mdyxh = sum_dyxh / static_cast<T>(M);
                    T* dst = gx.data() + g * M;
                    for (std::int64_t i = 0; i < M; ++i)
                        dst[i] += gr * (dy[i] - mdy - xh[i] * mdyxh);
                }
            }
        });
    }
    return out;
}

// ------------------------------------------------------------------- misc

template <typename T>
TensorT<T> random_normal(Shape s, Rng& rng, T stddev = T(1)) {
    TensorT<T> t(std::move(s));
    for (auto& v : t.mut()) v = static_cast<T>(rng.normal()) * stddev;
    return t;
}

template <typename T>
TensorT<T> random_uniform(Shape s, Rng& rng, T lo, T hi) {
    TensorT<T> t(std::move(s));
    for (auto& v : t.mut()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

}  // namespace vxls
