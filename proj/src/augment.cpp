#include "vxls/augment.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace vxls {

namespace {

void check_aligned(const Case& c) {
    if (c.pet.dims != c.ct.dims || c.pet.spacing_mm != c.ct.spacing_mm)
        throw UnalignedCase(c.name + ": CT/PET grids differ");
    if (c.mask && (c.mask->dims != c.ct.dims || c.mask->spacing_mm != c.ct.spacing_mm))
        throw UnalignedCase(c.name + ": mask grid differs");
}

Volume flip_volume(const Volume& v, const std::array<bool, 3>& flips) {
    if (!flips[0] && !flips[1] && !flips[2]) return v;
    Volume out = Volume::make(v.dims, v.spacing_mm, v.kind);
    const auto [D, H, W] = v.dims;
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w)
                out.at(d, h, w) =
                    v.at(flips[0] ? D - 1 - d : d, flips[1] ? H - 1 - h : h, flips[2] ? W - 1 - w : w);
    return out;
}

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 identity3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

Mat3 matmul3(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += a[i][k] * b[k][j];
            r[i][j] = acc;
        }
    return r;
}

// rotation within the plane of axes (a1, a2)
Mat3 axis_rotation(int a1, int a2, double rad) {
    Mat3 r = identity3();
    r[a1][a1] = std::cos(rad);
    r[a1][a2] = -std::sin(rad);
    r[a2][a1] = std::sin(rad);
    r[a2][a2] = std::cos(rad);
    return r;
}

// backward-mapped spatial resampling: dst(i) = src(A*(i-c) + c + u(i))
Volume warp(const Volume& v, const Mat3& inv_affine, const std::vector<float>* field,
            bool nearest) {
    Volume out = Volume::make(v.dims, v.spacing_mm, v.kind);
    const auto [D, H, W] = v.dims;
    const double cd = 0.5 * static_cast<double>(D - 1);
    const double ch = 0.5 * static_cast<double>(H - 1);
    const double cw = 0.5 * static_cast<double>(W - 1);
    const std::int64_t n = v.numel();
    auto lerp = [](double a, double b, double f) { return a + f * (b - a); };
    std::int64_t idx = 0;
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w, ++idx) {
                const double rd = static_cast<double>(d) - cd;
                const double rh = static_cast<double>(h) - ch;
                const double rw = static_cast<double>(w) - cw;
                double sd = inv_affine[0][0] * rd + inv_affine[0][1] * rh + inv_affine[0][2] * rw + cd;
                double sh = inv_affine[1][0] * rd + inv_affine[1][1] * rh + inv_affine[1][2] * rw + ch;
                double sw = inv_affine[2][0] * rd + inv_affine[2][1] * rh + inv_affine[2][2] * rw + cw;
                if (field) {
                    sd += field[0][static_cast<std::size_t>(idx)];
                    sh += field[1][static_cast<std::size_t>(idx)];
                    sw += field[2][static_cast<std::size_t>(idx)];
                }
                sd = std::clamp(sd, 0.0, static_cast<double>(D - 1));
                sh = std::clamp(sh, 0.0, static_cast<double>(H - 1));
                sw = std::clamp(sw, 0.0, static_cast<double>(W - 1));
                if (nearest) {
                    out.at(d, h, w) = v.at(std::llround(sd), std::llround(sh), std::llround(sw));
                } else {
                    const std::int64_t d0 = static_cast<std::int64_t>(sd);
                    const std::int64_t h0 = static_cast<std::int64_t>(sh);
                    const std::int64_t w0 = static_cast<std::int64_t>(sw);
                    const std::int64_t d1 = std::min(d0 + 1, D - 1);
                    const std::int64_t h1 = std::min(h0 + 1, H - 1);
                    const std::int64_t w1 = std::min(w0 + 1, W - 1);
                    const double fd = sd - static_cast<double>(d0);
                    const double fh = sh - static_cast<double>(h0);
                    const double fw = sw - static_cast<double>(w0);
                    const double c00 = lerp(v.at(d0, h0, w0), v.at(d0, h0, w1), fw);
                    const double c01 = lerp(v.at(d0, h1, w0), v.at(d0, h1, w1), fw);
                    const double c10 = lerp(v.at(d1, h0, w0), v.at(d1, h0, w1), fw);
                    const double c11 = lerp(v.at(d1, h1, w0), v.at(d1, h1, w1), fw);
                    out.at(d, h, w) =
                        static_cast<float>(lerp(lerp(c00, c01, fh), lerp(c10, c11, fh), fd));
                }
            }
    (void)n;
    return out;
}

void apply_brightness(Volume& v, double shift) {
    for (auto& x : v.data) x = static_cast<float>(x + shift);
}

// power curve on min-max rescaled intensities; monotone, range-preserving
void apply_gamma(Volume& v, double gamma) {
    const auto [mn_it, mx_it] = std::minmax_element(v.data.begin(), v.data.end());
    const double mn = *mn_it, mx = *mx_it;
    const double range = mx - mn;
    if (range < 1e-12) return;
    for (auto& x : v.data)
        x = static_cast<float>(std::pow((x - mn) / range, gamma) * range + mn);
}

}  // namespace

void gaussian_blur_inplace(Volume& v, double sigma_vox) {
    if (sigma_vox <= 0) return;
    const std::int64_t radius = std::max<std::int64_t>(1, std::llround(2.5 * sigma_vox));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0;
    for (std::int64_t i = -radius; i <= radius; ++i) {
        const double k = std::exp(-0.5 * (static_cast<double>(i) / sigma_vox) *
                                  (static_cast<double>(i) / sigma_vox));
        kernel[static_cast<std::size_t>(i + radius)] = k;
        ksum += k;
    }
    for (auto& k : kernel) k /= ksum;

    const auto [D, H, W] = v.dims;
    std::vector<float> tmp(v.data.size());
    auto pass = [&](int axis, const std::vector<float>& src, std::vector<float>& dst) {
        const std::int64_t len = v.dims[axis];
        for (std::int64_t d = 0; d < D; ++d)
            for (std::int64_t h = 0; h < H; ++h)
                for (std::int64_t w = 0; w < W; ++w) {
                    double acc = 0;
                    for (std::int64_t o = -radius; o <= radius; ++o) {
                        std::int64_t dd = d, hh = h, ww = w;
                        std::int64_t* t = axis == 0 ? &dd : axis == 1 ? &hh : &ww;
                        *t = std::clamp(*t + o, std::int64_t(0), len - 1);
                        acc += kernel[static_cast<std::size_t>(o + radius)] *
                               src[static_cast<std::size_t>((dd * H + hh) * W + ww)];
                    }
                    dst[static_cast<std::size_t>((d * H + h) * W + w)] = static_cast<float>(acc);
                }
    };
    pass(0, v.data, tmp);
    pass(1, tmp, v.data);
    pass(2, v.data, tmp);
    v.data.swap(tmp);
}

Case augment(const Case& c, const AugmentConfig& cfg, Rng& rng) {
    check_aligned(c);
    Case out = c;

    // --- draw spatial transform parameters (shared by all volumes)
    std::array<bool, 3> flips{rng.bernoulli(cfg.p_flip_per_axis),
                              rng.bernoulli(cfg.p_flip_per_axis),
                              rng.bernoulli(cfg.p_flip_per_axis)};
    const bool do_rot = rng.bernoulli(cfg.p_rotation);
    std::array<double, 3> rot_rad{0, 0, 0};
    if (do_rot) {
        const double k = 3.14159265358979323846 / 180.0;
        for (int i = 0; i < 3; ++i) rot_rad[i] = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * k;
    }
    const bool do_scale = rng.bernoulli(cfg.p_scale);
    const double scale = do_scale ? rng.uniform(cfg.scale_lo, cfg.scale_hi) : 1.0;
    const bool do_elastic = rng.bernoulli(cfg.p_elastic);

    if (flips[0] || flips[1] || flips[2]) {
        out.ct = flip_volume(out.ct, flips);
        out.pet = flip_volume(out.pet, flips);
        if (out.mask) out.mask = flip_volume(*out.mask, flips);
    }

    const bool do_affine = do_rot || do_scale;
    std::vector<float> field[3];
    if (do_elastic) {
        const double amp = rng.uniform(1.0, cfg.elastic_max_disp_vox);
        for (int a = 0; a < 3; ++a) {
            Volume f = Volume::make(out.ct.dims, out.ct.spacing_mm, VolumeKind::CT);
            for (auto& x : f.data) x = static_cast<float>(rng.uniform(-1.0, 1.0));
            gaussian_blur_inplace(f, cfg.elastic_sigma_vox);
            float mx = 0;
            for (float x : f.data) mx = std::max(mx, std::abs(x));
            const double s = mx > 0 ? amp / mx : 0.0;
            for (auto& x : f.data) x = static_cast<float>(x * s);
            field[a] = std::move(f.data);
        }
    }
    if (do_affine || do_elastic) {
        // backward map: inverse rotation = transpose, inverse scale = 1/s
        Mat3 inv = identity3();
        if (do_rot) {
            Mat3 r = matmul3(axis_rotation(1, 2, rot_rad[0]),
                             matmul3(axis_rotation(0, 2, rot_rad[1]), axis_rotation(0, 1, rot_rad[2])));
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) inv[i][j] = r[j][i];
        }
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) inv[i][j] /= scale;
        const std::vector<float>* fld = do_elastic ? field : nullptr;
        out.ct = warp(out.ct, inv, fld, false);
        out.pet = warp(out.pet, inv, fld, false);
        if (out.mask) out.mask = warp(*out.mask, inv, fld, true);
    }

    // --- intensity transforms, imaging channels only
    for (Volume* v : {&out.ct, &out.pet}) {
        if (rng.bernoulli(cfg.p_brightness))
            apply_brightness(*v, rng.uniform(-cfg.brightness_mag, cfg.brightness_mag));
        if (rng.bernoulli(cfg.p_gamma)) apply_gamma(*v, rng.uniform(cfg.gamma_lo, cfg.gamma_hi));
    }
    return out;
}

Case crop_patch(const Case& c, std::array<std::int64_t, 3> patch, double fg_bias, Rng& rng) {
    check_aligned(c);
    std::array<std::int64_t, 3> center;
    bool picked_fg = false;
    if (c.mask && rng.uniform() < fg_bias) {
        std::vector<std::int64_t> fg;
        const auto& m = c.mask->data;
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i] > 0.5f) fg.push_back(static_cast<std::int64_t>(i));
        if (!fg.empty()) {
            const std::int64_t flat = fg[rng.uniform_int(fg.size())];
            center[0] = flat / (c.ct.dims[1] * c.ct.dims[2]);
            center[1] = (flat / c.ct.dims[2]) % c.ct.dims[1];
            center[2] = flat % c.ct.dims[2];
            picked_fg = true;
        }
    }
    if (!picked_fg)
        for (int a = 0; a < 3; ++a)
            center[a] = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(c.ct.dims[a])));

    std::array<std::int64_t, 3> start;
    for (int a = 0; a < 3; ++a) {
        if (c.ct.dims[a] >= patch[a])
            start[a] = std::clamp<std::int64_t>(center[a] - patch[a] / 2, 0, c.ct.dims[a] - patch[a]);
        else
            start[a] = (c.ct.dims[a] - patch[a]) / 2;  // negative: edge-replicated pad
    }

    auto extract = [&](const Volume& v) {
        Volume out = Volume::make(patch, v.spacing_mm, v.kind);
        for (std::int64_t d = 0; d < patch[0]; ++d)
            for (std::int64_t h = 0; h < patch[1]; ++h)
                for (std::int64_t w = 0; w < patch[2]; ++w)
                    out.at(d, h, w) = v.at(std::clamp<std::int64_t>(start[0] + d, 0, v.dims[0] - 1),
                                           std::clamp<std::int64_t>(start[1] + h, 0, v.dims[1] - 1),
                                           std::clamp<std::int64_t>(start[2] + w, 0, v.dims[2] - 1));
        return out;
    };
    Case out;
    out.name = c.name;
    out.pet_present = c.pet_present;
    out.ct = extract(c.ct);
    out.pet = extract(c.pet);
    if (c.mask) out.mask = extract(*c.mask);
    return out;
}

}  // namespace vxls
