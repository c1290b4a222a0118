#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vxls/gradcheck.hpp"
#include "vxls/ops.hpp"
#include "vxls/rng.hpp"
#include "vxls/tensor.hpp"

using namespace vxls;

TEST_CASE("elementwise basics") {
    Tape tp;
    Tensor zero(Shape{3}, 0.f);
    CHECK(sigmoid(tp, zero).data()[0] == 0.5f);

    Rng rng(1);
    Tensor x = random_normal<float>(Shape{2, 3}, rng);
    Tensor sum = add(tp, x, neg(tp, x));
    for (float v : sum.data()) CHECK(v == 0.f);

    Tensor two(Shape{1}, 2.f);
    CHECK(vxls::exp(tp, vxls::log(tp, two)).data()[0] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("channel broadcast and shape errors") {
    Tape tp;
    Tensor x(Shape{2, 3, 2, 2, 2}, 1.f);
    Tensor bias(Shape{3});
    bias.mut() = {1.f, 2.f, 3.f};
    Tensor y = add(tp, x, bias);
    CHECK(y.shape == x.shape);
    CHECK(y.data()[0] == 2.f);                       // channel 0
    CHECK(y.data()[8] == 3.f);                       // channel 1
    CHECK(y.data()[16] == 4.f);                      // channel 2
    CHECK(y.data()[static_cast<std::size_t>(1 * 24 + 16)] == 4.f);  // second sample

    Tensor bad(Shape{4});
    CHECK_THROWS_AS((void)add(tp, x, bad), ShapeMismatch);
    Tensor wrong(Shape{2, 3}, 0.f);
    CHECK_THROWS_AS((void)mul(tp, x, wrong), ShapeMismatch);
}

TEST_CASE("matmul identity and hand oracle") {
    Tape tp;
    Tensor eye(Shape{3, 3});
    for (int i = 0; i < 3; ++i) eye.mut()[static_cast<std::size_t>(i * 3 + i)] = 1.f;
    Rng rng(2);
    Tensor b = random_normal<float>(Shape{3, 4}, rng);
    Tensor prod = matmul(tp, eye, b);
    for (std::size_t i = 0; i < b.data().size(); ++i) CHECK(prod.data()[i] == b.data()[i]);

    Tensor a(Shape{2, 2});
    a.mut() = {1.f, 2.f, 3.f, 4.f};
    Tensor ones(Shape{2, 1}, 1.f);
    Tensor r = matmul(tp, a, ones);
    CHECK(r.data()[0] == 3.f);
    CHECK(r.data()[1] == 7.f);

    CHECK_THROWS_AS((void)matmul(tp, a, Tensor(Shape{3, 1}, 1.f)), ShapeMismatch);
}

TEST_CASE("backward: linear and quadratic") {
    Tape tp;
    Rng rng(3);
    Tensor x = random_normal<float>(Shape{2, 3}, rng);
    tp.watch(x);
    Tensor loss = sum_all(tp, x);
    tp.backward(loss);
    const Tensor gx = tp.grad(x);
    for (float g : gx.data()) CHECK(g == 1.f);

    Tape tp2;
    Tensor x2 = random_normal<float>(Shape{5}, rng);
    tp2.watch(x2);
    Tensor loss2 = sum_all(tp2, mul(tp2, x2, x2));
    tp2.backward(loss2);
    const Tensor gt2 = tp2.grad(x2);
    const auto& g = gt2.data();
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(g[i] == doctest::Approx(2.f * x2.data()[i]).epsilon(1e-6));
}

TEST_CASE("backward error paths and tape lifecycle") {
    Tape tp;
    Tensor x(Shape{2, 2}, 1.f);
    tp.watch(x);
    Tensor y = mul(tp, x, x);
    CHECK_THROWS_AS(tp.backward(y), NonScalarRoot);

    Tensor untracked(Shape{1}, 1.f);
    CHECK_THROWS_AS(tp.backward(untracked), NonScalarRoot);

    Tensor s = sum_all(tp, y);
    tp.backward(s);
    CHECK_THROWS_AS(tp.backward(s), Error);  // consumed until reset
    tp.reset();
    CHECK(tp.num_nodes() == 0);
}

TEST_CASE("tape soundness: unreachable leaves have exact zero gradients") {
    Tape tp;
    Tensor used(Shape{3}, 2.f), unused(Shape{4}, 5.f);
    tp.watch(used);
    tp.watch(unused);
    Tensor loss = sum_all(tp, mul(tp, used, used));
    tp.backward(loss);
    const Tensor gu = tp.grad(unused), gd = tp.grad(used);
    for (float g : gu.data()) CHECK(g == 0.f);
    for (float g : gd.data()) CHECK(g == 4.f);
}

TEST_CASE("gradcheck harness: linear, sigmoid at zero, matmul") {
    // f(x) = sum(x): finite differences agree exactly up to rounding
    const double lin = gradcheck(
        [](TapeD& tp, std::vector<TensorD>& v) { return sum_all(tp, v[0]); },
        {TensorD(Shape{7}, 0.3)});
    CHECK(lin < 1e-9);

    // f(x) = sum(sigmoid(x)) at x=0: analytic gradient 0.25 per element
    {
        TapeD tp;
        TensorD x(Shape{4}, 0.0);
        tp.watch(x);
        TensorD y = sum_all(tp, sigmoid(tp, x));
        tp.backward(y);
        const TensorD gx = tp.grad(x);
        for (double g : gx.data()) CHECK(g == 0.25);
    }
    const double sig = gradcheck(
        [](TapeD& tp, std::vector<TensorD>& v) { return sum_all(tp, sigmoid(tp, v[0])); },
        {TensorD(Shape{4}, 0.0)});
    CHECK(sig < 1e-6);

    // matmul 3x4 * 4x2 (the spec example)
    Rng rng(11);
    const double mm = gradcheck(
        [](TapeD& tp, std::vector<TensorD>& v) {
            return sum_all(tp, sigmoid(tp, matmul(tp, v[0], v[1])));
        },
        {random_normal<double>(Shape{3, 4}, rng), random_normal<double>(Shape{4, 2}, rng)});
    CHECK(mm < 1e-4);

    CHECK_THROWS_AS(
        (void)gradcheck([](TapeD& tp, std::vector<TensorD>& v) { return mul(tp, v[0], v[0]); },
                        {TensorD(Shape{3}, 1.0)}),
        NonScalarOutput);
}

TEST_CASE("composite sigmoid(matmul) chain matches finite differences") {
    Rng rng(12);
    const double err = gradcheck(
        [](TapeD& tp, std::vector<TensorD>& v) {
            TensorD h = sigmoid(tp, matmul(tp, v[0], v[1]));
            return sum_all(tp, mul(tp, h, h));
        },
        {random_normal<double>(Shape{4, 3}, rng), random_normal<double>(Shape{3, 2}, rng)});
    CHECK(err < 1e-4);
}

TEST_CASE("forward determinism: identical inputs give bit-identical results") {
    Rng rng1(99), rng2(99);
    Tensor a1 = random_normal<float>(Shape{3, 17}, rng1);
    Tensor a2 = random_normal<float>(Shape{3, 17}, rng2);
    Tape tp1, tp2;
    Tensor y1 = tanh(tp1, matmul(tp1, a1, reshape(tp1, a1, Shape{17, 3})));
    Tensor y2 = tanh(tp2, matmul(tp2, a2, reshape(tp2, a2, Shape{17, 3})));
    REQUIRE(y1.data().size() == y2.data().size());
    for (std::size_t i = 0; i < y1.data().size(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("narrow and concat round trip") {
    Tape tp;
    Rng rng(5);
    Tensor x = random_normal<float>(Shape{2, 5, 3}, rng);
    Tensor left = narrow(tp, x, 1, 0, 2);
    Tensor right = narrow(tp, x, 1, 2, 3);
    Tensor back = concat(tp, left, right, 1);
    for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(back.data()[i] == x.data()[i]);
    CHECK_THROWS_AS((void)narrow(tp, x, 1, 4, 3), ShapeMismatch);
    CHECK_THROWS_AS((void)concat(tp, left, Tensor(Shape{2, 5, 4}, 0.f), 1), ShapeMismatch);
}

TEST_CASE("token order: z-major raster, w fastest") {
    Tape tp;
    Tensor x(Shape{1, 2, 2, 2, 3});
    for (std::size_t i = 0; i < x.data().size(); ++i) x.mut()[i] = static_cast<float>(i);
    Tensor tok = volume_to_tokens(tp, x);
    CHECK(tok.shape == Shape{1, 12, 2});
    // token count = D*H*W; token t holds channel values of voxel t in
    // (d, h, w) raster order, so token 1 is voxel (0,0,1), token 3 is (0,1,0)
    CHECK(tok.data()[1 * 2 + 0] == x.data()[1]);   // (0,0,1) channel 0
    CHECK(tok.data()[3 * 2 + 0] == x.data()[3]);   // (0,1,0) channel 0
    CHECK(tok.data()[1 * 2 + 1] == x.data()[12 + 1]);  // channel 1 plane

    Tensor back = tokens_to_volume(tp, tok, 2, 2, 3);
    for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(back.data()[i] == x.data()[i]);
}
