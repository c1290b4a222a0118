#include "vxls/config.hpp"

#include <fstream>

#include <json.hpp>

namespace vxls {

using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    try {
        json j;
        f >> j;
        return j;
    } catch (const json::exception& e) {
        throw InvalidConfig(path + ": " + e.what());
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

template <typename T, std::size_t N>
void get_arr(const json& j, const char* key, std::array<T, N>& out) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    for (std::size_t i = 0; i < N; ++i) out[i] = a.at(i).get<T>();
}

}  // namespace

PipelineConfig load_pipeline_config(const std::string& path) {
    PipelineConfig c;
    if (path.empty()) return c;
    const json j = read_json_file(path);
    try {
        if (j.contains("preprocess")) {
            const auto& p = j.at("preprocess");
            get_arr(p, "target_spacing_mm", c.preprocess.target_spacing_mm);
            get_if(p, "ct_body_threshold", c.preprocess.ct_body_threshold);
            get_if(p, "ct_clip_lo_pct", c.preprocess.ct_clip_lo_pct);
            get_if(p, "ct_clip_hi_pct", c.preprocess.ct_clip_hi_pct);
        }
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            get_if(a, "p_rotation", c.augment.p_rotation);
            get_if(a, "max_rotation_deg", c.augment.max_rotation_deg);
            get_if(a, "p_flip_per_axis", c.augment.p_flip_per_axis);
            get_if(a, "p_scale", c.augment.p_scale);
            get_if(a, "scale_lo", c.augment.scale_lo);
            get_if(a, "scale_hi", c.augment.scale_hi);
            get_if(a, "p_elastic", c.augment.p_elastic);
            get_if(a, "elastic_sigma_vox", c.augment.elastic_sigma_vox);
            get_if(a, "elastic_max_disp_vox", c.augment.elastic_max_disp_vox);
            get_if(a, "p_brightness", c.augment.p_brightness);
            get_if(a, "brightness_mag", c.augment.brightness_mag);
            get_if(a, "p_gamma", c.augment.p_gamma);
            get_if(a, "gamma_lo", c.augment.gamma_lo);
            get_if(a, "gamma_hi", c.augment.gamma_hi);
        }
        if (j.contains("network")) {
            const auto& n = j.at("network");
            get_if(n, "in_channels", c.network.in_channels);
            get_if(n, "n_classes", c.network.n_classes);
            get_if(n, "stages", c.network.stages);
            get_if(n, "base_channels", c.network.base_channels);
            get_if(n, "blocks_per_stage", c.network.blocks_per_stage);
            get_if(n, "max_channels", c.network.max_channels);
            get_arr(n, "patch_dims", c.network.patch_dims);
            get_if(n, "leaky_slope", c.network.leaky_slope);
            if (n.contains("placement"))
                c.network.placement = placement_from_string(n.at("placement").get<std::string>());
        }
        if (j.contains("mae")) {
            const auto& m = j.at("mae");
            get_if(m, "mask_patch", c.mae.mask_patch);
            get_if(m, "mask_ratio", c.mae.mask_ratio);
            get_if(m, "fill", c.mae.fill);
        }
        if (j.contains("pretrain")) {
            const auto& p = j.at("pretrain");
            get_if(p, "steps", c.pretrain.steps);
            get_if(p, "lr", c.pretrain.lr);
            get_if(p, "momentum", c.pretrain.momentum);
            get_if(p, "nesterov", c.pretrain.nesterov);
            get_if(p, "poly_power", c.pretrain.poly_power);
            get_if(p, "batch_size", c.pretrain.batch_size);
            get_if(p, "seed", c.pretrain.seed);
            get_if(p, "flip_p", c.pretrain.flip_p);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            get_if(t, "lr", c.train.lr);
            get_if(t, "momentum", c.train.momentum);
            get_if(t, "nesterov", c.train.nesterov);
            get_if(t, "poly_power", c.train.poly_power);
            get_if(t, "batch_size", c.train.batch_size);
            get_if(t, "total_steps", c.train.total_steps);
            get_if(t, "w_dice", c.train.w_dice);
            get_if(t, "w_ce", c.train.w_ce);
            get_if(t, "seed", c.train.seed);
            get_if(t, "fg_bias", c.train.fg_bias);
            get_if(t, "augment", c.train.augment);
            get_if(t, "val_every", c.train.val_every);
        }
    } catch (const json::exception& e) {
        throw InvalidConfig(path + ": " + e.what());
    }
    return c;
}

PhantomSpec load_phantom_spec(const std::string& path) {
    PhantomSpec s;
    if (path.empty()) return s;
    const json j = read_json_file(path);
    try {
        get_if(j, "seed", s.seed);
        get_arr(j, "dims", s.dims);
        get_arr(j, "spacing_mm", s.spacing_mm);
        get_arr(j, "n_lesions_range", s.n_lesions_range);
        get_arr(j, "lesion_radius_mm_range", s.lesion_radius_mm_range);
        get_arr(j, "body_axes_mm", s.body_axes_mm);
        get_if(j, "noise_sigma", s.noise_sigma);
        get_if(j, "ct_noise_hu", s.ct_noise_hu);
        get_if(j, "ct_only", s.ct_only);
    } catch (const json::exception& e) {
        throw InvalidConfig(path + ": " + e.what());
    }
    s.validate();
    return s;
}

}  // namespace vxls
