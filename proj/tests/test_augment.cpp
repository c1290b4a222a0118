#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vxls/augment.hpp"
#include "vxls/phantom.hpp"

using namespace vxls;

namespace {

Case make_case(std::uint64_t seed = 3) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.dims = {24, 28, 26};
    return generate_case(spec, 0);
}

bool cases_equal(const Case& a, const Case& b) {
    return a.ct.data == b.ct.data && a.pet.data == b.pet.data &&
           a.mask->data == b.mask->data;
}

}  // namespace

TEST_CASE("identity pipeline: all probabilities zero") {
    Case c = make_case();
    Rng rng(1);
    Case out = augment(c, AugmentConfig::disabled(), rng);
    CHECK(cases_equal(c, out));
}

TEST_CASE("flip applied twice restores the original exactly") {
    Case c = make_case();
    AugmentConfig cfg = AugmentConfig::disabled();
    cfg.p_flip_per_axis = 1.0;  // flip every axis deterministically
    Rng r1(2), r2(3);
    Case once = augment(c, cfg, r1);
    CHECK(!cases_equal(c, once));
    Case twice = augment(once, cfg, r2);
    CHECK(cases_equal(c, twice));
}

TEST_CASE("mask stays binary under every spatial augmentation") {
    Case c = make_case();
    AugmentConfig cfg;  // defaults: all transforms possible
    cfg.p_rotation = cfg.p_scale = cfg.p_elastic = 1.0;
    cfg.p_flip_per_axis = 0.5;
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(100 + static_cast<std::uint64_t>(trial));
        Case out = augment(c, cfg, rng);
        for (float x : out.mask->data) CHECK((x == 0.f || x == 1.f));
    }
}

TEST_CASE("joint-transform consistency: PET == mask moves with the mask") {
    Case c = make_case();
    c.pet = *c.mask;  // sentinel: intensity equals the label
    c.pet.kind = VolumeKind::PET;
    AugmentConfig cfg = AugmentConfig::disabled();
    cfg.p_rotation = 1.0;
    cfg.p_scale = 1.0;
    cfg.p_elastic = 1.0;
    cfg.p_flip_per_axis = 0.5;
    for (int trial = 0; trial < 3; ++trial) {
        Rng rng(40 + static_cast<std::uint64_t>(trial));
        Case out = augment(c, cfg, rng);
        const auto [D, H, W] = out.ct.dims;
        // compare away from interpolation boundaries: voxels whose 3x3x3
        // mask neighborhood is uniform
        for (std::int64_t d = 1; d + 1 < D; ++d)
            for (std::int64_t h = 1; h + 1 < H; ++h)
                for (std::int64_t w = 1; w + 1 < W; ++w) {
                    bool uniform = true;
                    const float m0 = out.mask->at(d, h, w);
                    for (std::int64_t dd = -1; dd <= 1 && uniform; ++dd)
                        for (std::int64_t dh = -1; dh <= 1 && uniform; ++dh)
                            for (std::int64_t dw = -1; dw <= 1; ++dw)
                                if (out.mask->at(d + dd, h + dh, w + dw) != m0) {
                                    uniform = false;
                                    break;
                                }
                    if (!uniform) continue;
                    CHECK((out.pet.at(d, h, w) > 0.5f) == (m0 != 0.f));
                }
    }
}

TEST_CASE("determinism: same rng key gives the identical augmented case") {
    Case c = make_case();
    AugmentConfig cfg;
    Rng r1(77), r2(77);
    Case a = augment(c, cfg, r1);
    Case b = augment(c, cfg, r2);
    CHECK(cases_equal(a, b));
}

TEST_CASE("unaligned case is rejected") {
    Case c = make_case();
    c.pet = resample(c.pet, {2, 2, 2});
    Rng rng(5);
    CHECK_THROWS_AS((void)augment(c, AugmentConfig{}, rng), UnalignedCase);
}

TEST_CASE("crop_patch: identity crop, padding, fg bias, spec dims") {
    Case c = make_case();
    Rng rng(9);
    Case whole = crop_patch(c, c.ct.dims, 0.5, rng);
    CHECK(cases_equal(c, whole));

    Case small = crop_patch(c, {8, 8, 8}, 0.0, rng);
    CHECK(small.ct.dims == std::array<std::int64_t, 3>{8, 8, 8});

    // pad with edge values when the case is smaller than the patch
    Case padded = crop_patch(c, {32, 32, 32}, 0.0, rng);
    CHECK(padded.ct.dims == std::array<std::int64_t, 3>{32, 32, 32});
    for (float x : padded.mask->data) CHECK((x == 0.f || x == 1.f));

    // with fg bias 1 and a nonempty mask the patch always contains foreground
    for (int trial = 0; trial < 10; ++trial) {
        Rng r(200 + static_cast<std::uint64_t>(trial));
        Case p = crop_patch(c, {12, 12, 12}, 1.0, r);
        std::int64_t fg = 0;
        for (float x : p.mask->data) fg += x != 0.f;
        CHECK(fg > 0);
    }

    // full-scale and desk-scale patch configurations keep the 4:6:5 ratio
    const std::array<std::int64_t, 3> full{128, 192, 160};
    const std::array<std::int64_t, 3> desk{32, 48, 40};
    for (int a = 0; a < 3; ++a) CHECK(full[a] == 4 * desk[a]);
}
