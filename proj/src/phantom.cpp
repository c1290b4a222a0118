#include "vxls/phantom.hpp"

#include <cmath>
#include <filesystem>

#include "vxls/rng.hpp"

namespace vxls {

namespace fs = std::filesystem;

void PhantomSpec::validate() const {
    if (n_lesions_range[0] > n_lesions_range[1] || n_lesions_range[0] < 0)
        throw InvalidSpec("lesion count range must satisfy 0 <= min <= max");
    if (!(lesion_radius_mm_range[0] > 0) ||
        lesion_radius_mm_range[0] > lesion_radius_mm_range[1])
        throw InvalidSpec("lesion radii must be positive and ordered");
    for (auto d : dims)
        if (d < 16) throw InvalidSpec("phantom dims must be >= 16 per axis");
    for (auto s : spacing_mm)
        if (!(s > 0)) throw InvalidSpec("phantom spacing must be positive");
    for (auto a : body_axes_mm)
        if (!(a > 0)) throw InvalidSpec("body axes must be positive");
}

namespace {

struct Ellipsoid {
    std::array<double, 3> center_mm;
    std::array<double, 3> radii_mm;

    bool contains(double d_mm, double h_mm, double w_mm) const {
        const double a = (d_mm - center_mm[0]) / radii_mm[0];
        const double b = (h_mm - center_mm[1]) / radii_mm[1];
        const double c = (w_mm - center_mm[2]) / radii_mm[2];
        return a * a + b * b + c * c <= 1.0;
    }
};

}  // namespace

Case generate_case(const PhantomSpec& spec, int index) {
    spec.validate();
    Rng rng(spec.seed, static_cast<std::uint64_t>(index));

    const auto& dims = spec.dims;
    std::array<double, 3> center_mm;
    for (int i = 0; i < 3; ++i) center_mm[i] = 0.5 * static_cast<double>(dims[i]) * spec.spacing_mm[i];
    const Ellipsoid body{center_mm, spec.body_axes_mm};

    // soft CT "organ" blobs inside the body
    const int n_blobs = 3 + static_cast<int>(rng.uniform_int(4));
    struct Blob {
        std::array<double, 3> c;
        double sigma_mm, amp;
    };
    std::vector<Blob> blobs;
    for (int b = 0; b < n_blobs; ++b) {
        Blob bl;
        for (int i = 0; i < 3; ++i)
            bl.c[i] = center_mm[i] + rng.uniform(-0.6, 0.6) * spec.body_axes_mm[i];
        bl.sigma_mm = rng.uniform(4.0, 10.0);
        bl.amp = rng.uniform(-60.0, 60.0);
        blobs.push_back(bl);
    }

    // lesions: ellipsoids fully inside the body envelope
    const int n_lesions =
        spec.n_lesions_range[0] +
        static_cast<int>(rng.uniform_int(
            static_cast<std::uint64_t>(spec.n_lesions_range[1] - spec.n_lesions_range[0] + 1)));
    std::vector<Ellipsoid> lesions;
    for (int l = 0; l < n_lesions; ++l) {
        Ellipsoid e;
        for (int i = 0; i < 3; ++i)
            e.center_mm[i] = center_mm[i] + rng.uniform(-0.55, 0.55) * spec.body_axes_mm[i];
        for (int i = 0; i < 3; ++i)
            e.radii_mm[i] = rng.uniform(spec.lesion_radius_mm_range[0], spec.lesion_radius_mm_range[1]);
        lesions.push_back(e);
    }

    Case c;
    c.name = "case_" + std::to_string(index);
    c.ct = Volume::make(dims, spec.spacing_mm, VolumeKind::CT);
    c.pet = Volume::make(dims, spec.spacing_mm, VolumeKind::PET);
    Volume mask = Volume::make(dims, spec.spacing_mm, VolumeKind::MASK);

    for (std::int64_t d = 0; d < dims[0]; ++d)
        for (std::int64_t h = 0; h < dims[1]; ++h)
            for (std::int64_t w = 0; w < dims[2]; ++w) {
                const double dm = (static_cast<double>(d) + 0.5) * spec.spacing_mm[0];
                const double hm = (static_cast<double>(h) + 0.5) * spec.spacing_mm[1];
                const double wm = (static_cast<double>(w) + 0.5) * spec.spacing_mm[2];
                const bool in_body = body.contains(dm, hm, wm);
                bool in_lesion = false;
                for (const auto& e : lesions)
                    if (e.contains(dm, hm, wm)) {
                        in_lesion = true;
                        break;
                    }
                double ct = -1000.0;
                double pet = 0.0;
                if (in_body) {
                    ct = 40.0;
                    for (const auto& b : blobs) {
                        const double r2 = ((dm - b.c[0]) * (dm - b.c[0]) +
                                           (hm - b.c[1]) * (hm - b.c[1]) +
                                           (wm - b.c[2]) * (wm - b.c[2])) /
                                          (b.sigma_mm * b.sigma_mm);
                        ct += b.amp * std::exp(-0.5 * r2);
                    }
                    pet = 0.2;
                }
                if (in_lesion) {
                    ct += 30.0;
                    pet = 1.2;
                    mask.at(d, h, w) = 1.f;
                }
                ct += spec.ct_noise_hu * rng.normal();
                pet += spec.noise_sigma * rng.normal();
                c.ct.at(d, h, w) = static_cast<float>(ct);
                c.pet.at(d, h, w) = static_cast<float>(pet);
            }
    c.mask = std::move(mask);
    if (spec.ct_only) {
        c.pet_present = false;
        c.pet = Volume::make(dims, spec.spacing_mm, VolumeKind::PET);
    }
    return c;
}

std::vector<std::string> generate_corpus(const PhantomSpec& spec, int n_cases,
                                         const std::string& out_dir) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::exists(out_dir)) throw IoError("cannot create directory " + out_dir);
    std::vector<std::string> names;
    for (int i = 0; i < n_cases; ++i) {
        Case c = generate_case(spec, i);
        const fs::path base(out_dir);
        write_volume(c.ct, (base / (c.name + "_ct.vvol")).string());
        if (!spec.ct_only) {
            write_volume(c.pet, (base / (c.name + "_pet.vvol")).string());
            write_volume(*c.mask, (base / (c.name + "_mask.vvol")).string());
        }
        names.push_back(c.name);
    }
    write_manifest(out_dir, names);
    return names;
}

}  // namespace vxls
