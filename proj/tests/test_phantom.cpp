#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "vxls/phantom.hpp"

using namespace vxls;
namespace fs = std::filesystem;

TEST_CASE("same (seed, index) yields bit-identical cases") {
    PhantomSpec spec;
    spec.seed = 42;
    spec.dims = {24, 28, 26};
    Case a = generate_case(spec, 0);
    Case b = generate_case(spec, 0);
    for (std::size_t i = 0; i < a.ct.data.size(); ++i) {
        CHECK(a.ct.data[i] == b.ct.data[i]);
        CHECK(a.pet.data[i] == b.pet.data[i]);
        CHECK(a.mask->data[i] == b.mask->data[i]);
    }
    Case c = generate_case(spec, 1);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.ct.data.size(); ++i) any_diff |= a.ct.data[i] != c.ct.data[i];
    CHECK(any_diff);
}

TEST_CASE("mask voxels are tracer-avid and co-located with PET hotspots") {
    PhantomSpec spec;
    spec.seed = 5;
    spec.dims = {32, 36, 34};
    spec.noise_sigma = 0.0;  // observe the clean uptake map
    spec.ct_noise_hu = 0.0;
    for (int idx = 0; idx < 5; ++idx) {
        Case c = generate_case(spec, idx);
        // body uptake before noise is uniform 0.2 with zero sigma, so every
        // lesion voxel must clear mean + 2*sigma trivially; assert the
        // constructive margin
        double mask_count = 0;
        std::array<double, 3> mask_centroid{0, 0, 0}, pet_centroid{0, 0, 0};
        double pet_count = 0;
        for (std::int64_t d = 0; d < spec.dims[0]; ++d)
            for (std::int64_t h = 0; h < spec.dims[1]; ++h)
                for (std::int64_t w = 0; w < spec.dims[2]; ++w) {
                    if (c.mask->at(d, h, w) != 0.f) {
                        CHECK(c.pet.at(d, h, w) > 0.2 + 2 * 0.05);
                        mask_count += 1;
                        mask_centroid[0] += d;
                        mask_centroid[1] += h;
                        mask_centroid[2] += w;
                    }
                    if (c.pet.at(d, h, w) > 0.7f) {
                        pet_count += 1;
                        pet_centroid[0] += d;
                        pet_centroid[1] += h;
                        pet_centroid[2] += w;
                    }
                }
        REQUIRE(mask_count > 0);
        REQUIRE(pet_count > 0);
        for (int a = 0; a < 3; ++a)
            CHECK(std::abs(mask_centroid[a] / mask_count - pet_centroid[a] / pet_count) < 1.0);
    }
}

TEST_CASE("lesion count respects the configured range") {
    PhantomSpec spec;
    spec.seed = 6;
    spec.dims = {24, 24, 24};
    spec.n_lesions_range = {1, 3};
    spec.noise_sigma = 0.0;
    int with_lesions = 0;
    for (int idx = 0; idx < 100; ++idx) {
        Case c = generate_case(spec, idx);
        std::int64_t fg = 0;
        for (float x : c.mask->data) fg += x != 0.f;
        if (fg > 0) ++with_lesions;
    }
    CHECK(with_lesions == 100);  // min lesion count is 1

    spec.n_lesions_range = {0, 0};  // negative control
    Case empty = generate_case(spec, 0);
    for (float x : empty.mask->data) CHECK(x == 0.f);
}

TEST_CASE("generate_corpus writes triples, manifest, and is rerun-identical") {
    PhantomSpec spec;
    spec.seed = 11;
    spec.dims = {16, 18, 16};
    const std::string dir = (fs::temp_directory_path() / "vxls_corpus_test").string();
    fs::remove_all(dir);
    auto names = generate_corpus(spec, 10, dir);
    CHECK(names.size() == 10);
    std::size_t n_vvol = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".vvol") ++n_vvol;
    CHECK(n_vvol == 30);
    CHECK(read_manifest(dir).size() == 10);

    // byte-identical rerun
    auto read_bytes = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    const std::string probe = dir + "/case_3_pet.vvol";
    const std::string before = read_bytes(probe);
    generate_corpus(spec, 10, dir);
    CHECK(read_bytes(probe) == before);

    // empty corpus
    const std::string dir0 = (fs::temp_directory_path() / "vxls_corpus_empty").string();
    fs::remove_all(dir0);
    auto none = generate_corpus(spec, 0, dir0);
    CHECK(none.empty());
    CHECK(read_manifest(dir0).empty());
}

TEST_CASE("ct-only corpus omits PET and mask files") {
    PhantomSpec spec;
    spec.seed = 12;
    spec.dims = {16, 16, 16};
    spec.ct_only = true;
    const std::string dir = (fs::temp_directory_path() / "vxls_corpus_ct").string();
    fs::remove_all(dir);
    generate_corpus(spec, 2, dir);
    CHECK(fs::exists(dir + "/case_0_ct.vvol"));
    CHECK(!fs::exists(dir + "/case_0_pet.vvol"));
    Case c = load_case(dir, "case_0", false, false);
    CHECK(!c.pet_present);
    CHECK(c.pet.dims == c.ct.dims);
}

TEST_CASE("invalid specs are rejected") {
    PhantomSpec spec;
    spec.n_lesions_range = {3, 1};
    CHECK_THROWS_AS((void)generate_case(spec, 0), InvalidSpec);
    PhantomSpec tiny;
    tiny.dims = {8, 32, 32};
    CHECK_THROWS_AS((void)generate_case(tiny, 0), InvalidSpec);
}
