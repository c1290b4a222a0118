#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "vxls/ops.hpp"
#include "vxls/tensor.hpp"

// Matrix-memory LSTM cell with exponential gating and a log-domain
// stabilizer, run bidirectionally over token sequences taken from 3D
// feature maps. Recurrence per step, from zero state (C, n, m) = (0, 0, 0):
//
//   q = Wq x            k = (1/sqrt(d)) Wk x        v = Wv x
//   it = wi.x + bi      ft = wf.x + bf              (scalar gates)
//   m' = max(ft + m, it)
//   i = exp(it - m')    f = exp(ft + m - m')
//   C' = f C + i v k^T  n' = f n + i k
//   h~ = C' q / max(|n'.q|, exp(-m'))
//   h  = sigmoid(Wo x) * h~
//
// The denominator floor rides the stabilizer shift (exp(-m') rather than a
// fixed 1), which makes the stabilized recurrence compute exactly the same
// function as the naive exp-gated one wherever the latter stays finite.
// An absolute floor guards the fully-degenerate n'.q == 0 case.

namespace vxls {

inline constexpr double kMlstmDenFloor = 1e-30;

template <typename T>
struct MlstmWeightsT {
    TensorT<T> wq, wk, wv, wo;  // [d,d]
    TensorT<T> wi, wf;          // [1,d]
    TensorT<T> bi, bf;          // [1,1]

    std::int64_t dim() const { return wq.shape[0]; }

    static MlstmWeightsT zeros(std::int64_t d) {
        MlstmWeightsT w;
        w.wq = TensorT<T>(Shape{d, d});
        w.wk = TensorT<T>(Shape{d, d});
        w.wv = TensorT<T>(Shape{d, d});
        w.wo = TensorT<T>(Shape{d, d});
        w.wi = TensorT<T>(Shape{1, d});
        w.wf = TensorT<T>(Shape{1, d});
        w.bi = TensorT<T>(Shape{1, 1});
        w.bf = TensorT<T>(Shape{1, 1});
        return w;
    }
};

template <typename T>
struct MlstmStateT {
    TensorT<T> C;  // [d,d]
    TensorT<T> n;  // [d,1]
    TensorT<T> m;  // [1,1]

    static MlstmStateT zeros(std::int64_t d) {
        return {TensorT<T>(Shape{d, d}), TensorT<T>(Shape{d, 1}), TensorT<T>(Shape{1, 1})};
    }
};

// Single recurrence step composed from tape ops; the readable reference
// path. x is a [d,1] column.
template <typename T>
std::pair<MlstmStateT<T>, TensorT<T>> mlstm_step(TapeT<T>& tp, const MlstmStateT<T>& st,
                                                 const TensorT<T>& x,
                                                 const MlstmWeightsT<T>& w) {
    const std::int64_t d = w.dim();
    if (x.rank() != 2 || x.shape[0] != d || x.shape[1] != 1)
        throw ShapeMismatch("mlstm_step: token must be [d,1]");
    const T kscale = T(1) / std::sqrt(static_cast<T>(d));

    TensorT<T> q = matmul(tp, w.wq, x);
    TensorT<T> k = mul_const(tp, matmul(tp, w.wk, x), kscale);
    TensorT<T> v = matmul(tp, w.wv, x);
    TensorT<T> it = add(tp, matmul(tp, w.wi, x), w.bi);
    TensorT<T> ft = add(tp, matmul(tp, w.wf, x), w.bf);
    TensorT<T> fm = add(tp, ft, st.m);
    TensorT<T> mp = maximum(tp, fm, it);
    TensorT<T> ig = exp(tp, sub(tp, it, mp));
    TensorT<T> fg = exp(tp, sub(tp, fm, mp));

    TensorT<T> outer = matmul(tp, v, reshape(tp, k, Shape{1, d}));
    MlstmStateT<T> nx;
    nx.C = add(tp, mul(tp, st.C, fg), mul(tp, outer, ig));
    nx.n = add(tp, mul(tp, st.n, fg), mul(tp, k, ig));
    nx.m = mp;

    TensorT<T> s = matmul(tp, reshape(tp, nx.n, Shape{1, d}), q);
    TensorT<T> den = maximum(tp, abs(tp, s), exp(tp, neg(tp, mp)));
    den = maximum(tp, den, TensorT<T>::full(Shape{1, 1}, T(kMlstmDenFloor)));
    TensorT<T> htil = div(tp, matmul(tp, nx.C, q), den);
    TensorT<T> h = mul(tp, sigmoid(tp, matmul(tp, w.wo, x)), htil);
    return {nx, h};
}

// Whole-sequence recurrence as one tape node: identical math to
// mlstm_step chained from zero state, with hand-rolled BPTT. This is the
// path the network uses; the step op above is its cross-check.
template <typename T>
TensorT<T> mlstm_sequence(TapeT<T>& tp, const TensorT<T>& tokens, const MlstmWeightsT<T>& w) {
    if (tokens.rank() != 2) throw ShapeMismatch("mlstm_sequence: tokens must be [T,d]");
    const std::int64_t L = tokens.shape[0], d = tokens.shape[1];
    if (d != w.dim()) throw ShapeMismatch("mlstm_sequence: token dim != weight dim");
    if (L < 1) throw ShapeMismatch("mlstm_sequence: empty sequence");
    const T kscale = T(1) / std::sqrt(static_cast<T>(d));

    auto Q = std::make_shared<std::vector<T>>(L * d), K = std::make_shared<std::vector<T>>(L * d),
         V = std::make_shared<std::vector<T>>(L * d), O = std::make_shared<std::vector<T>>(L * d),
         HT = std::make_shared<std::vector<T>>(L * d), Ns = std::make_shared<std::vector<T>>(L * d);
    auto Cs = std::make_shared<std::vector<T>>(L * d * d);
    auto Ig = std::make_shared<std::vector<T>>(L), Fg = std::make_shared<std::vector<T>>(L),
         Sv = std::make_shared<std::vector<T>>(L), Den = std::make_shared<std::vector<T>>(L),
         Mp = std::make_shared<std::vector<T>>(L);
    auto max_is_fm = std::make_shared<std::vector<unsigned char>>(L);
    auto den_branch = std::make_shared<std::vector<unsigned char>>(L);  // 0 |s|, 1 exp(-m'), 2 floor

    TensorT<T> out(Shape{L, d});
    {
        const T* X = tokens.ptr();
        const T* wq = w.wq.ptr();
        const T* wk = w.wk.ptr();
        const T* wv = w.wv.ptr();
        const T* wo = w.wo.ptr();
        const T* wi = w.wi.ptr();
        const T* wf = w.wf.ptr();
        const T bi = w.bi.data()[0], bf = w.bf.data()[0];
        T* H = out.mptr();
        std::vector<T> Cprev(d * d, T(0)), nprev(d, T(0));
        T mprev = T(0);
        auto matvec = [d](const T* M, const T* x, T* y) {
            for (std::int64_t r = 0; r < d; ++r) {
                T acc(0);
                const T* row = M + r * d;
                for (std::int64_t c = 0; c < d; ++c) acc = std::fma(row[c], x[c], acc);
                y[r] = acc;
            }
        };
        for (std::int64_t t = 0; t < L; ++t) {
            const T* x = X + t * d;
            T* q = Q->data() + t * d;
            T* k = K->data() + t * d;
            T* v = V->data() + t * d;
            T* o = O->data() + t * d;
            T* ht = HT->data() + t * d;
            T* Ct = Cs->data() + t * d * d;
            T* nt = Ns->data() + t * d;
            matvec(wq, x, q);
            matvec(wk, x, k);
            for (std::int64_t r = 0; r < d; ++r) k[r] *= kscale;
            matvec(wv, x, v);
            matvec(wo, x, o);
            for (std::int64_t r = 0; r < d; ++r) o[r] = detail::stable_sigmoid(o[r]);
            T it = bi, ft = bf;
            for (std::int64_t c = 0; c < d; ++c) it = std::fma(wi[c], x[c], it);
            for (std::int64_t c = 0; c < d; ++c) ft = std::fma(wf[c], x[c], ft);
            const T fm = ft + mprev;
            const bool fm_wins = fm >= it;
            const T mp = fm_wins ? fm : it;
            const T ig = std::exp(it - mp);
            const T fg = std::exp(fm - mp);
            (*max_is_fm)[t] = fm_wins ? 1 : 0;
            (*Mp)[t] = mp;
            (*Ig)[t] = ig;
            (*Fg)[t] = fg;
            for (std::int64_t r = 0; r < d; ++r) {
                T* crow = Ct + r * d;
                const T* cprow = Cprev.data() + r * d;
                const T ivr = ig * v[r];
                for (std::int64_t c = 0; c < d; ++c) crow[c] = fg * cprow[c] + ivr * k[c];
            }
            for (std::int64_t r = 0; r < d; ++r) nt[r] = fg * nprev[r] + ig * k[r];
            T s(0);
            for (std::int64_t r = 0; r < d; ++r) s = std::fma(nt[r], q[r], s);
            (*Sv)[t] = s;
            const T sabs = s < T(0) ? -s : s;
            const T fl = std::exp(-mp);
            T den;
            unsigned char br;
            if (sabs >= fl) {
                den = sabs;
                br = 0;
            } else {
                den = fl;
                br = 1;
            }
            if (den < T(kMlstmDenFloor)) {
                den = T(kMlstmDenFloor);
                br = 2;
            }
            (*Den)[t] = den;
            (*den_branch)[t] = br;
            for (std::int64_t r = 0; r < d; ++r) {
                T acc(0);
                const T* crow = Ct + r * d;
                for (std::int64_t c = 0; c < d; ++c) acc = std::fma(crow[c], q[c], acc);
                ht[r] = acc / den;
                H[t * d + r] = o[r] * ht[r];
            }
            std::copy(Ct, Ct + d * d, Cprev.data());
            std::copy(nt, nt + d, nprev.data());
            mprev = mp;
        }
    }

    bool any = tokens.tracked() || w.wq.tracked() || w.wk.tracked() || w.wv.tracked() ||
               w.wo.tracked() || w.wi.tracked() || w.wf.tracked() || w.bi.tracked() ||
               w.bf.tracked();
    if (any) {
        auto xs = tokens.store;
        auto wqs = w.wq.store, wks = w.wk.store, wvs = w.wv.store, wos = w.wo.store;
        auto wis = w.wi.store, wfs = w.wf.store;
        const std::int32_t xn = tokens.node, qn = w.wq.node, kn = w.wk.node, vn = w.wv.node,
                           on = w.wo.node, in_ = w.wi.node, fn = w.wf.node, bin = w.bi.node,
                           bfn = w.bf.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gh = t.grad_buf(self);
            std::vector<T> gWq(d * d, T(0)), gWk(d * d, T(0)), gWv(d * d, T(0)), gWo(d * d, T(0));
            std::vector<T> gwi(d, T(0)), gwf(d, T(0));
            T gbi(0), gbf(0);
            std::vector<T> gX(xn >= 0 ? L * d : 0, T(0));
            std::vector<T> gC(d * d, T(0)), gn(d, T(0));
            T gm(0);
            std::vector<T> gq(d), gk(d), gv(d), tmp(d), gCq(d);
            for (std::int64_t step = L - 1; step >= 0; --step) {
                const T* x = xs->data() + step * d;
                const T* q = Q->data() + step * d;
                const T* k = K->data() + step * d;
                const T* v = V->data() + step * d;
                const T* o = O->data() + step * d;
                const T* ht = HT->data() + step * d;
                const T* Ct = Cs->data() + step * d * d;
                const T* nt = Ns->data() + step * d;
                const T* Cpv = step > 0 ? Cs->data() + (step - 1) * d * d : nullptr;
                const T* npv = step > 0 ? Ns->data() + (step - 1) * d : nullptr;
                const T ig = (*Ig)[step], fg = (*Fg)[step], den = (*Den)[step], s = (*Sv)[step];
                const T mp = (*Mp)[step];
                const T* ghrow = gh.data() + step * d;

                // h = o * ht; o = sigmoid(Wo x)
                T gden(0);
                for (std::int64_t r = 0; r < d; ++r) {
                    const T go = ghrow[r] * ht[r];
                    const T gotilde = go * o[r] * (T(1) - o[r]);
                    tmp[r] = gotilde;  // reuse as d(otilde)
                }
                for (std::int64_t r = 0; r < d; ++r)
                    for (std::int64_t c = 0; c < d; ++c) gWo[r * d + c] += tmp[r] * x[c];
                if (xn >= 0) {
                    T* gx = gX.data() + step * d;
                    for (std::int64_t r = 0; r < d; ++r)
                        for (std::int64_t c = 0; c < d; ++c)
                            gx[c] += (*wos)[r * d + c] * tmp[r];
                }
                // ht = (C q) / den
                for (std::int64_t r = 0; r < d; ++r) {
                    const T ght = ghrow[r] * o[r];
                    gCq[r] = ght / den;
                    gden -= ht[r] * ght / den;
                }
                // gC += outer(gCq, q); gq = C^T gCq
                for (std::int64_t r = 0; r < d; ++r)
                    for (std::int64_t c = 0; c < d; ++c) gC[r * d + c] += gCq[r] * q[c];
                for (std::int64_t c = 0; c < d; ++c) {
                    T acc(0);
                    for (std::int64_t r = 0; r < d; ++r) acc += Ct[r * d + c] * gCq[r];
                    gq[c] = acc;
                }
                // den branch
                T gs(0), gmp(gm);
                gm = T(0);
                const unsigned char br = (*den_branch)[step];
                if (br == 0)
                    gs = (s < T(0) ? -gden : gden);
                else if (br == 1)
                    gmp -= std::exp(-mp) * gden;
                // s = n . q
                for (std::int64_t r = 0; r < d; ++r) {
                    gq[r] += gs * nt[r];
                    gn[r] += gs * q[r];
                }
                // C' = f C + i v k^T ; n' = f n + i k
                T gf(0), gi(0);
                if (Cpv) {
                    for (std::int64_t r = 0; r < d * d; ++r) gf += gC[r] * Cpv[r];
                    for (std::int64_t r = 0; r < d; ++r) gf += gn[r] * npv[r];
                }
                for (std::int64_t r = 0; r < d; ++r) {
                    T acc(0);
                    const T* crow = gC.data() + r * d;
                    for (std::int64_t c = 0; c < d; ++c) acc += crow[c] * k[c];
                    tmp[r] = acc;  // (gC k)_r
                }
                for (std::int64_t r = 0; r < d; ++r) gi += v[r] * tmp[r];
                for (std::int64_t r = 0; r < d; ++r) gv[r] = ig * tmp[r];
                for (std::int64_t c = 0; c < d; ++c) {
                    T acc(0);
                    for (std::int64_t r = 0; r < d; ++r) acc += gC[r * d + c] * v[r];
                    gk[c] = ig * acc;
                }
                for (std::int64_t r = 0; r < d; ++r) {
                    gi += gn[r] * k[r];
                    gk[r] += ig * gn[r];
                }
                // push gC, gn to previous step
                for (std::int64_t r = 0; r < d * d; ++r) gC[r] *= fg;
                for (std::int64_t r = 0; r < d; ++r) gn[r] *= fg;
                // gates
                T git = gi * ig;
                T gfm = gf * fg;
                gmp -= gi * ig + gf * fg;
                if ((*max_is_fm)[step])
                    gfm += gmp;
                else
                    git += gmp;
                const T gft = gfm;
                gm += gfm;  // m_prev enters via fm = ft + m_prev
                for (std::int64_t c = 0; c < d; ++c) {
                    gwi[c] += git * x[c];
                    gwf[c] += gft * x[c];
                }
                gbi += git;
                gbf += gft;
                // projections
                for (std::int64_t r = 0; r < d; ++r)
                    for (std::int64_t c = 0; c < d; ++c) {
                        gWq[r * d + c] += gq[r] * x[c];
                        gWk[r * d + c] += kscale * gk[r] * x[c];
                        gWv[r * d + c] += gv[r] * x[c];
                    }
                if (xn >= 0) {
                    T* gx = gX.data() + step * d;
                    for (std::int64_t c = 0; c < d; ++c) {
                        T acc(0);
                        for (std::int64_t r = 0; r < d; ++r)
                            acc += (*wqs)[r * d + c] * gq[r] + kscale * (*wks)[r * d + c] * gk[r] +
                                   (*wvs)[r * d + c] * gv[r];
                        gx[c] += acc + git * (*wis)[c] + gft * (*wfs)[c];
                    }
                }
            }
            auto flush = [&t](std::int32_t node, const std::vector<T>& g) {
                if (node < 0) return;
                auto& dst = t.grad_buf(node);
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
            };
            flush(qn, gWq);
            flush(kn, gWk);
            flush(vn, gWv);
            flush(on, gWo);
            flush(in_, gwi);
            flush(fn, gwf);
            if (bin >= 0) t.grad_buf(bin)[0] += gbi;
            if (bfn >= 0) t.grad_buf(bfn)[0] += gbf;
            if (xn >= 0) flush(xn, gX);
        });
    }
    return out;
}

// reverse rows of a [T,d] tensor
template <typename T>
TensorT<T> flip_rows(TapeT<T>& tp, const TensorT<T>& x) {
    if (x.rank() != 2) throw ShapeMismatch("flip_rows: rank-2 only");
    const std::int64_t L = x.shape[0], d = x.shape[1];
    TensorT<T> out(x.shape);
    for (std::int64_t r = 0; r < L; ++r)
        std::copy_n(x.ptr() + r * d, d, out.mptr() + (L - 1 - r) * d);
    if (x.tracked()) {
        const std::int32_t xn = x.node;
        out.node = tp.record(out.shape, [=](TapeT<T>& t, std::int32_t self) {
            const std::vector<T>& gy = t.grad_buf(self);
            auto& gx = t.grad_buf(xn);
            for (std::int64_t r = 0; r < L; ++r)
                for (std::int64_t c = 0; c < d; ++c) gx[r * d + c] += gy[(L - 1 - r) * d + c];
        });
    }
    return out;
}

// forward scan + reversed scan re-reversed, fused by summation
template <typename T>
TensorT<T> bidirectional_mlstm(TapeT<T>& tp, const TensorT<T>& tokens, const MlstmWeightsT<T>& wf,
                               const MlstmWeightsT<T>& wb) {
    TensorT<T> fwd = mlstm_sequence(tp, tokens, wf);
    TensorT<T> bwd = flip_rows(tp, mlstm_sequence(tp, flip_rows(tp, tokens), wb));
    return add(tp, fwd, bwd);
}

// Pre-norm residual block on a [N,C,D,H,W] feature map:
//   feat + tokens_to_volume(bidirectional(volume_to_tokens(norm(feat))))
// Zeroing the mLSTM weights makes this the identity map exactly.
template <typename T>
TensorT<T> bixlstm_block(TapeT<T>& tp, const TensorT<T>& feat, const TensorT<T>& norm_gamma,
                         const TensorT<T>& norm_beta, const MlstmWeightsT<T>& wf,
                         const MlstmWeightsT<T>& wb) {
    if (feat.rank() != 5) throw ShapeMismatch("bixlstm_block: need [N,C,D,H,W]");
    if (feat.shape[1] != wf.dim()) throw ShapeMismatch("bixlstm_block: C != mlstm dim");
    const std::int64_t N = feat.shape[0], C = feat.shape[1];
    const std::int64_t D = feat.shape[2], H = feat.shape[3], W = feat.shape[4];
    const std::int64_t L = D * H * W;
    TensorT<T> tokens = volume_to_tokens(tp, instance_norm(tp, feat, norm_gamma, norm_beta));
    TensorT<T> stacked;
    for (std::int64_t n = 0; n < N; ++n) {
        TensorT<T> one = reshape(tp, narrow(tp, tokens, 0, n, 1), Shape{L, C});
        TensorT<T> out = reshape(tp, bidirectional_mlstm(tp, one, wf, wb), Shape{1, L, C});
        stacked = n == 0 ? out : concat(tp, stacked, out, 0);
    }
    return add(tp, feat, tokens_to_volume(tp, stacked, D, H, W));
}

}  // namespace vxls
