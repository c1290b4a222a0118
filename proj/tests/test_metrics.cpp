#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "vxls/metrics.hpp"
#include "vxls/rng.hpp"

using namespace vxls;

namespace {

Volume random_mask(std::array<std::int64_t, 3> dims, double p, Rng& rng) {
    Volume m = Volume::make(dims, {1, 1, 1}, VolumeKind::MASK);
    for (auto& x : m.data) x = rng.bernoulli(p) ? 1.f : 0.f;
    return m;
}

}  // namespace

TEST_CASE("dice: identity, disjoint, hand-counted case, both-empty") {
    Rng rng(1);
    Volume a = random_mask({6, 6, 6}, 0.3, rng);
    CHECK(dice(a, a) == 1.0);

    Volume left = Volume::make({4, 4, 4}, {1, 1, 1}, VolumeKind::MASK);
    Volume right = Volume::make({4, 4, 4}, {1, 1, 1}, VolumeKind::MASK);
    left.at(0, 0, 0) = 1.f;
    right.at(3, 3, 3) = 1.f;
    CHECK(dice(left, right) == 0.0);

    // |P| = 4, |G| = 4, |P^G| = 2 -> 0.5
    Volume p = Volume::make({4, 4, 4}, {1, 1, 1}, VolumeKind::MASK);
    Volume g = Volume::make({4, 4, 4}, {1, 1, 1}, VolumeKind::MASK);
    for (int i = 0; i < 4; ++i) p.at(0, 0, i) = 1.f;
    for (int i = 2; i < 6; ++i) g.at(0, i / 4, i % 4) = 1.f;
    CHECK(dice(p, g) == doctest::Approx(oracles::brute_dice(p, g)));
    CHECK(dice(p, g) == 0.5);

    Volume e1 = Volume::make({3, 3, 3}, {1, 1, 1}, VolumeKind::MASK);
    Volume e2 = Volume::make({3, 3, 3}, {1, 1, 1}, VolumeKind::MASK);
    CHECK(dice(e1, e2) == 1.0);

    Volume other = Volume::make({5, 3, 3}, {1, 1, 1}, VolumeKind::MASK);
    CHECK_THROWS_AS((void)dice(e1, other), DimMismatch);
    Volume notbin = Volume::make({3, 3, 3}, {1, 1, 1}, VolumeKind::MASK, 0.5f);
    CHECK_THROWS_AS((void)dice(e1, notbin), NonBinaryTarget);
}

TEST_CASE("connectivity: corner-touching voxels") {
    Volume m = Volume::make({4, 4, 4}, {1, 1, 1}, VolumeKind::MASK);
    m.at(0, 0, 0) = 1.f;
    m.at(1, 1, 1) = 1.f;  // shares only a corner
    CHECK(connected_components(m, 26).count == 1);
    CHECK(connected_components(m, 6).count == 2);

    // component sizes sum to the foreground count
    Rng rng(2);
    Volume r = random_mask({6, 6, 6}, 0.4, rng);
    const Components c = connected_components(r, 26);
    std::int64_t total = 0;
    for (int l = 1; l <= c.count; ++l) total += c.sizes[static_cast<std::size_t>(l)];
    std::int64_t fg = 0;
    for (float x : r.data) fg += x != 0.f;
    CHECK(total == fg);
}

TEST_CASE("false volumes: hand-constructed components") {
    // GT components of 10 and 5 voxels; prediction overlaps only the first
    Volume gt = Volume::make({10, 10, 10}, {1, 1, 1}, VolumeKind::MASK);
    for (int i = 0; i < 10; ++i) gt.at(1, 1, i / 4 + 1) = 1.f;  // overwrites: build explicitly
    for (auto& x : gt.data) x = 0.f;
    for (int i = 0; i < 10; ++i) gt.at(1, 1 + i / 5, i % 5) = 1.f;  // 10-voxel block
    for (int i = 0; i < 5; ++i) gt.at(7, 7, i) = 1.f;               // separate 5-voxel line
    Volume pred = Volume::make({10, 10, 10}, {1, 1, 1}, VolumeKind::MASK);
    pred.at(1, 1, 0) = 1.f;  // hits the first component only
    auto [fnv, fpv] = false_volumes(pred, gt);
    CHECK(fnv == doctest::Approx(0.005));
    CHECK(fpv == doctest::Approx(0.0));

    // isolated 8-voxel predicted blob off all GT
    Volume pred2 = Volume::make({10, 10, 10}, {1, 1, 1}, VolumeKind::MASK);
    for (int d = 4; d < 6; ++d)
        for (int h = 4; h < 6; ++h)
            for (int w = 4; w < 6; ++w) pred2.at(d, h, w) = 1.f;
    Volume gt2 = Volume::make({10, 10, 10}, {1, 1, 1}, VolumeKind::MASK);
    gt2.at(0, 0, 0) = 1.f;
    auto [fnv2, fpv2] = false_volumes(pred2, gt2);
    CHECK(fpv2 == doctest::Approx(0.008));
    CHECK(fnv2 == doctest::Approx(0.001));

    // identical masks: zero everywhere
    auto [fnv3, fpv3] = false_volumes(gt, gt);
    CHECK(fnv3 == 0.0);
    CHECK(fpv3 == 0.0);
}

TEST_CASE("metrics match brute force on random small masks") {
    Rng rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        const std::array<std::int64_t, 3> dims{
            2 + static_cast<std::int64_t>(rng.uniform_int(7)),
            2 + static_cast<std::int64_t>(rng.uniform_int(7)),
            2 + static_cast<std::int64_t>(rng.uniform_int(7))};
        Volume p = random_mask(dims, rng.uniform(0.05, 0.5), rng);
        Volume g = random_mask(dims, rng.uniform(0.05, 0.5), rng);
        const int conn = rng.bernoulli(0.5) ? 26 : 6;
        CHECK(dice(p, g) == oracles::brute_dice(p, g));
        auto [fnv, fpv] = false_volumes(p, g, conn);
        auto [bfnv, bfpv] = oracles::brute_false_volumes(p, g, conn);
        CHECK(fnv == doctest::Approx(bfnv).epsilon(1e-12));
        CHECK(fpv == doctest::Approx(bfpv).epsilon(1e-12));
    }
}

TEST_CASE("metric symmetries") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        Volume p = random_mask({5, 5, 5}, 0.3, rng);
        Volume g = random_mask({5, 5, 5}, 0.3, rng);
        CHECK(dice(p, g) == dice(g, p));
        auto [fnv, fpv] = false_volumes(p, g);
        auto [rfnv, rfpv] = false_volumes(g, p);
        CHECK(fnv == rfpv);
        CHECK(fpv == rfnv);
    }
}

TEST_CASE("a single overlapping voxel removes a GT component from FNV") {
    Volume gt = Volume::make({8, 8, 8}, {1, 1, 1}, VolumeKind::MASK);
    for (int d = 2; d < 6; ++d)
        for (int h = 2; h < 6; ++h)
            for (int w = 2; w < 6; ++w) gt.at(d, h, w) = 1.f;
    Volume pred = Volume::make({8, 8, 8}, {1, 1, 1}, VolumeKind::MASK);
    pred.at(3, 3, 3) = 1.f;
    auto [fnv, fpv] = false_volumes(pred, gt);
    CHECK(fnv == 0.0);
    CHECK(fpv == 0.0);
}

TEST_CASE("aggregate: single case, mean, order independence, empty error") {
    std::vector<SegScore> one{{"a", 0.7, 1.0, 2.0}};
    AggregateScore agg1 = aggregate(one);
    CHECK(agg1.dice == 0.7);
    CHECK(agg1.n_cases == 1);

    std::vector<SegScore> two{{"a", 0.4, 1.0, 0.0}, {"b", 0.6, 3.0, 4.0}};
    AggregateScore agg2 = aggregate(two);
    CHECK(agg2.dice == doctest::Approx(0.5));
    CHECK(agg2.fnv_cm3 == doctest::Approx(2.0));
    std::swap(two[0], two[1]);
    AggregateScore agg3 = aggregate(two);
    CHECK(agg3.dice == agg2.dice);
    CHECK(agg3.fpv_cm3 == agg2.fpv_cm3);

    CHECK_THROWS_AS((void)aggregate({}), EmptyList);
}

TEST_CASE("voxel volume respects spacing") {
    Volume gt = Volume::make({4, 4, 4}, {2.0, 1.5, 1.0}, VolumeKind::MASK);
    gt.at(0, 0, 0) = 1.f;
    Volume pred = Volume::make({4, 4, 4}, {2.0, 1.5, 1.0}, VolumeKind::MASK);
    auto [fnv, fpv] = false_volumes(pred, gt);
    CHECK(fnv == doctest::Approx(3.0 / 1000.0));
    CHECK(fpv == 0.0);
}
