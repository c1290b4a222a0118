#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vxls/volume.hpp"

namespace vxls {

// Deterministic synthetic PET/CT phantom corpus. CT is an ellipsoidal body
// with soft organ blobs on an air background; PET is low uniform body uptake
// with high-uptake lesion ellipsoids; the mask is the exact lesion
// voxelization. Same (spec, index) always yields the identical case.
struct PhantomSpec {
    std::uint64_t seed = 7;
    std::array<std::int64_t, 3> dims{48, 64, 56};
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::array<int, 2> n_lesions_range{1, 3};
    std::array<double, 2> lesion_radius_mm_range{4.0, 8.0};
    std::array<double, 3> body_axes_mm{20.0, 26.0, 22.0};  // semi-axes
    double noise_sigma = 0.05;                             // PET noise (SUV-like units)
    double ct_noise_hu = 20.0;
    bool ct_only = false;  // Task-2-like corpus: CT volume only

    void validate() const;
};

Case generate_case(const PhantomSpec& spec, int index);

// writes n_cases .vvol triples (CT-only when spec.ct_only) plus
// manifest.json; returns the case names
std::vector<std::string> generate_corpus(const PhantomSpec& spec, int n_cases,
                                         const std::string& out_dir);

}  // namespace vxls
