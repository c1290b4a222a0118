#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vxls/mlstm.hpp"
#include "vxls/ops.hpp"
#include "vxls/rng.hpp"

using namespace vxls;

namespace {

template <typename T>
MlstmWeightsT<T> random_weights(std::int64_t d, std::uint64_t seed, T scale = T(0.4)) {
    Rng rng(seed);
    MlstmWeightsT<T> w = MlstmWeightsT<T>::zeros(d);
    for (TensorT<T>* t : {&w.wq, &w.wk, &w.wv, &w.wo, &w.wi, &w.wf, &w.bi, &w.bf})
        for (auto& v : t->mut()) v = static_cast<T>(rng.normal()) * scale;
    return w;
}

// independent 64-bit stabilized recurrence, plain arrays, no library calls
std::vector<double> reference_sequence(const std::vector<double>& tokens, std::int64_t L,
                                       std::int64_t d, const MlstmWeightsT<double>& w) {
    std::vector<double> C(d * d, 0), n(d, 0), h(L * d, 0);
    double m = 0;
    const double ks = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::int64_t t = 0; t < L; ++t) {
        const double* x = tokens.data() + t * d;
        std::vector<double> q(d, 0), k(d, 0), v(d, 0), o(d, 0);
        for (std::int64_t r = 0; r < d; ++r)
            for (std::int64_t c = 0; c < d; ++c) {
                q[r] += w.wq.data()[r * d + c] * x[c];
                k[r] += w.wk.data()[r * d + c] * x[c];
                v[r] += w.wv.data()[r * d + c] * x[c];
                o[r] += w.wo.data()[r * d + c] * x[c];
            }
        for (std::int64_t r = 0; r < d; ++r) k[r] *= ks;
        double it = w.bi.data()[0], ft = w.bf.data()[0];
        for (std::int64_t c = 0; c < d; ++c) {
            it += w.wi.data()[c] * x[c];
            ft += w.wf.data()[c] * x[c];
        }
        const double fm = ft + m;
        const double mp = std::max(fm, it);
        const double ig = std::exp(it - mp), fg = std::exp(fm - mp);
        for (std::int64_t r = 0; r < d; ++r)
            for (std::int64_t c = 0; c < d; ++c) C[r * d + c] = fg * C[r * d + c] + ig * v[r] * k[c];
        for (std::int64_t r = 0; r < d; ++r) n[r] = fg * n[r] + ig * k[r];
        double s = 0;
        for (std::int64_t r = 0; r < d; ++r) s += n[r] * q[r];
        double den = std::max(std::abs(s), std::exp(-mp));
        den = std::max(den, kMlstmDenFloor);
        for (std::int64_t r = 0; r < d; ++r) {
            double cq = 0;
            for (std::int64_t c = 0; c < d; ++c) cq += C[r * d + c] * q[c];
            h[t * d + r] = (1.0 / (1.0 + std::exp(-o[r]))) * cq / den;
        }
        m = mp;
    }
    return h;
}

}  // namespace

TEST_CASE("zero weights, zero state: h = 0 and C' = 0") {
    TapeD tp;
    const std::int64_t d = 4;
    MlstmWeightsT<double> w = MlstmWeightsT<double>::zeros(d);
    MlstmStateT<double> st = MlstmStateT<double>::zeros(d);
    TensorD x(Shape{d, 1}, 0.7);
    auto [st2, h] = mlstm_step(tp, st, x, w);
    for (double v : h.data()) CHECK(v == 0.0);
    for (double v : st2.C.data()) CHECK(v == 0.0);
}

TEST_CASE("single step from zero state with unit input gate recovers v") {
    TapeD tp;
    const std::int64_t d = 3;
    MlstmWeightsT<double> w = MlstmWeightsT<double>::zeros(d);
    // identity q projection, sqrt(d)-scaled identity k projection so that
    // k = x; arbitrary v projection; neutral gates (it = 0, ft <= 0)
    for (std::int64_t i = 0; i < d; ++i) {
        w.wq.mut()[i * d + i] = 1.0;
        w.wk.mut()[i * d + i] = std::sqrt(static_cast<double>(d));
    }
    Rng rng(4);
    for (auto& v : w.wv.mut()) v = rng.normal();
    w.bf.mut()[0] = -1.0;

    TensorD x(Shape{d, 1});
    x.mut()[0] = 1.0;  // k^T q = 1
    MlstmStateT<double> st = MlstmStateT<double>::zeros(d);
    auto [st2, h] = mlstm_step(tp, st, x, w);

    // C' = v k^T, n' = k
    for (std::int64_t r = 0; r < d; ++r)
        for (std::int64_t c = 0; c < d; ++c)
            CHECK(st2.C.data()[r * d + c] ==
                  doctest::Approx(w.wv.data()[r * d + 0] * (c == 0 ? 1.0 : 0.0)).epsilon(1e-12));
    CHECK(st2.n.data()[0] == doctest::Approx(1.0).epsilon(1e-12));

    // with k^T q = 1 >= 1 the readout is exactly v, gated by sigmoid(0) = 1/2
    for (std::int64_t r = 0; r < d; ++r)
        CHECK(h.data()[r] == doctest::Approx(0.5 * w.wv.data()[r * d + 0]).epsilon(1e-12));
}

TEST_CASE("fused sequence equals the per-step composite path") {
    const std::int64_t d = 4, L = 6;
    MlstmWeightsT<double> w = random_weights<double>(d, 9);
    Rng rng(10);
    TensorD tokens = random_normal<double>(Shape{L, d}, rng);

    TapeD tp;
    TensorD fused = mlstm_sequence(tp, tokens, w);

    MlstmStateT<double> st = MlstmStateT<double>::zeros(d);
    for (std::int64_t t = 0; t < L; ++t) {
        TensorD x = reshape(tp, narrow(tp, tokens, 0, t, 1), Shape{d, 1});
        auto [st2, h] = mlstm_step(tp, st, x, w);
        st = st2;
        for (std::int64_t r = 0; r < d; ++r)
            CHECK(fused.data()[t * d + r] == doctest::Approx(h.data()[r]).epsilon(1e-10));
    }
}

TEST_CASE("fused sequence matches the independent 64-bit reference") {
    const std::int64_t d = 5, L = 40;
    MlstmWeightsT<double> w = random_weights<double>(d, 11);
    Rng rng(12);
    TensorD tokens = random_normal<double>(Shape{L, d}, rng);
    TapeD tp;
    TensorD out = mlstm_sequence(tp, tokens, w);
    const auto ref = reference_sequence(tokens.data(), L, d, w);
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-10));
}

TEST_CASE("stabilized recurrence agrees with the naive one where exp stays finite") {
    // naive: m forced to 0 each step, i = exp(it), f = exp(ft), floor 1
    const std::int64_t d = 4, L = 24;
    MlstmWeightsT<double> w = random_weights<double>(d, 13, 0.3);
    Rng rng(14);
    TensorD tokens = random_normal<double>(Shape{L, d}, rng);
    TapeD tp;
    TensorD stab = mlstm_sequence(tp, tokens, w);

    std::vector<double> C(d * d, 0), n(d, 0);
    const double ks = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::int64_t t = 0; t < L; ++t) {
        const double* x = tokens.ptr() + t * d;
        std::vector<double> q(d, 0), k(d, 0), v(d, 0), o(d, 0);
        for (std::int64_t r = 0; r < d; ++r)
            for (std::int64_t c = 0; c < d; ++c) {
                q[r] += w.wq.data()[r * d + c] * x[c];
                k[r] += w.wk.data()[r * d + c] * x[c];
                v[r] += w.wv.data()[r * d + c] * x[c];
                o[r] += w.wo.data()[r * d + c] * x[c];
            }
        for (std::int64_t r = 0; r < d; ++r) k[r] *= ks;
        double it = w.bi.data()[0], ft = w.bf.data()[0];
        for (std::int64_t c = 0; c < d; ++c) {
            it += w.wi.data()[c] * x[c];
            ft += w.wf.data()[c] * x[c];
        }
        const double ig = std::exp(it), fg = std::exp(ft);
        REQUIRE(std::isfinite(ig));
        REQUIRE(std::isfinite(fg));
        for (std::int64_t r = 0; r < d; ++r)
            for (std::int64_t c = 0; c < d; ++c) C[r * d + c] = fg * C[r * d + c] + ig * v[r] * k[c];
        for (std::int64_t r = 0; r < d; ++r) n[r] = fg * n[r] + ig * k[r];
        double s = 0;
        for (std::int64_t r = 0; r < d; ++r) s += n[r] * q[r];
        const double den = std::max(std::abs(s), 1.0);
        for (std::int64_t r = 0; r < d; ++r) {
            double cq = 0;
            for (std::int64_t c = 0; c < d; ++c) cq += C[r * d + c] * q[c];
            const double h = (1.0 / (1.0 + std::exp(-o[r]))) * cq / den;
            const double got = stab.data()[t * d + r];
            CHECK(std::abs(got - h) / std::max({std::abs(got), std::abs(h), 1e-8}) < 1e-5);
        }
    }
}

TEST_CASE("extreme gate preactivations stay finite over 512 steps") {
    const std::int64_t d = 4, L = 512;
    for (double gate : {50.0, -50.0}) {
        MlstmWeightsT<float> w = random_weights<float>(d, 15);
        std::fill(w.wi.mut().begin(), w.wi.mut().end(), 0.f);
        std::fill(w.wf.mut().begin(), w.wf.mut().end(), 0.f);
        w.bi.mut()[0] = static_cast<float>(gate);
        w.bf.mut()[0] = static_cast<float>(-gate);
        Rng rng(16);
        Tensor tokens = random_normal<float>(Shape{L, d}, rng);
        Tape tp;
        Tensor out = mlstm_sequence(tp, tokens, w);
        for (float v : out.data()) CHECK(std::isfinite(v));

        // 64-bit reference stays finite and close in the same regime
        MlstmWeightsT<double> wd = MlstmWeightsT<double>::zeros(d);
        auto widen = [](const Tensor& src, TensorD& dst) {
            for (std::size_t i = 0; i < src.data().size(); ++i) dst.mut()[i] = src.data()[i];
        };
        widen(w.wq, wd.wq);
        widen(w.wk, wd.wk);
        widen(w.wv, wd.wv);
        widen(w.wo, wd.wo);
        widen(w.wi, wd.wi);
        widen(w.wf, wd.wf);
        widen(w.bi, wd.bi);
        widen(w.bf, wd.bf);
        std::vector<double> toks(tokens.data().begin(), tokens.data().end());
        const auto ref = reference_sequence(toks, L, d, wd);
        for (double v : ref) CHECK(std::isfinite(v));
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(std::abs(static_cast<double>(out.data()[i]) - ref[i]) <
                  1e-2 * std::max(1.0, std::abs(ref[i])));
    }
}

TEST_CASE("length-1 sequence: both directions see the same token") {
    const std::int64_t d = 3;
    MlstmWeightsT<double> wf = random_weights<double>(d, 17);
    MlstmWeightsT<double> wb = random_weights<double>(d, 18);
    Rng rng(19);
    TensorD tokens = random_normal<double>(Shape{1, d}, rng);
    TapeD tp;
    TensorD bi = bidirectional_mlstm(tp, tokens, wf, wb);
    TensorD f = mlstm_sequence(tp, tokens, wf);
    TensorD b = mlstm_sequence(tp, tokens, wb);
    for (std::int64_t r = 0; r < d; ++r)
        CHECK(bi.data()[r] == f.data()[r] + b.data()[r]);
}

TEST_CASE("reversal symmetry: reversed input with swapped weights reverses the output") {
    const std::int64_t d = 4, L = 7;
    MlstmWeightsT<float> wf = random_weights<float>(d, 20);
    MlstmWeightsT<float> wb = random_weights<float>(d, 21);
    Rng rng(22);
    Tensor tokens = random_normal<float>(Shape{L, d}, rng);
    Tape tp;
    Tensor out = bidirectional_mlstm(tp, tokens, wf, wb);
    Tensor rev_out = bidirectional_mlstm(tp, flip_rows(tp, tokens), wb, wf);
    for (std::int64_t t = 0; t < L; ++t)
        for (std::int64_t r = 0; r < d; ++r)
            CHECK(rev_out.data()[(L - 1 - t) * d + r] == out.data()[t * d + r]);  // exact
}

TEST_CASE("bixlstm block: residual identity with zero weights, shape preservation") {
    const std::int64_t C = 3;
    MlstmWeightsT<float> zero = MlstmWeightsT<float>::zeros(C);
    Rng rng(23);
    Tensor feat = random_normal<float>(Shape{2, C, 2, 3, 2}, rng);
    Tensor g = random_normal<float>(Shape{C}, rng);
    Tensor b = random_normal<float>(Shape{C}, rng);
    Tape tp;
    Tensor out = bixlstm_block(tp, feat, g, b, zero, zero);
    REQUIRE(out.shape == feat.shape);
    for (std::size_t i = 0; i < feat.data().size(); ++i) CHECK(out.data()[i] == feat.data()[i]);

    MlstmWeightsT<float> wf = random_weights<float>(C, 24);
    Tensor out2 = bixlstm_block(tp, feat, g, b, wf, wf);
    CHECK(out2.shape == feat.shape);
    bool differs = false;
    for (std::size_t i = 0; i < feat.data().size(); ++i)
        differs |= out2.data()[i] != feat.data()[i];
    CHECK(differs);
}
