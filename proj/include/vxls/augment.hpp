#pragma once

#include <array>
#include <cstdint>

#include "vxls/rng.hpp"
#include "vxls/volume.hpp"

namespace vxls {

// Training-time augmentation, nnU-Net default parameterization. Spatial
// transforms are drawn once and applied identically to CT, PET, and mask
// (mask via nearest interpolation); intensity transforms are drawn per
// imaging channel and never touch the mask.
struct AugmentConfig {
    double p_rotation = 0.2;
    double max_rotation_deg = 15.0;
    double p_flip_per_axis = 0.5;
    double p_scale = 0.2;
    double scale_lo = 0.85, scale_hi = 1.25;
    double p_elastic = 0.2;
    double elastic_sigma_vox = 8.0;
    double elastic_max_disp_vox = 4.0;
    double p_brightness = 0.15;
    double brightness_mag = 0.2;
    double p_gamma = 0.15;
    double gamma_lo = 0.7, gamma_hi = 1.5;

    static AugmentConfig disabled() {
        AugmentConfig c;
        c.p_rotation = c.p_flip_per_axis = c.p_scale = c.p_elastic = 0.0;
        c.p_brightness = c.p_gamma = 0.0;
        return c;
    }
};

Case augment(const Case& c, const AugmentConfig& cfg, Rng& rng);

// Foreground-biased patch extraction: with probability fg_bias (and a
// nonempty mask) the patch centers on a uniformly drawn foreground voxel;
// otherwise on a uniform voxel. Volumes smaller than the patch are padded
// by edge replication.
Case crop_patch(const Case& c, std::array<std::int64_t, 3> patch_dims, double fg_bias, Rng& rng);

// separable Gaussian blur, used by the elastic deformation field
void gaussian_blur_inplace(Volume& v, double sigma_vox);

}  // namespace vxls
