#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vxls/errors.hpp"

namespace vxls {

enum class VolumeKind { CT, PET, MASK };

const char* to_string(VolumeKind k);
VolumeKind volume_kind_from_string(const std::string& s);

// 3D scalar grid with physical voxel spacing; the unit of all imaging IO.
// Data is row-major (D, H, W). MASK volumes hold only {0,1}.
struct Volume {
    std::array<std::int64_t, 3> dims{0, 0, 0};  // D, H, W
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    VolumeKind kind = VolumeKind::CT;
    std::vector<float> data;

    std::int64_t numel() const { return dims[0] * dims[1] * dims[2]; }
    float at(std::int64_t d, std::int64_t h, std::int64_t w) const {
        return data[static_cast<std::size_t>((d * dims[1] + h) * dims[2] + w)];
    }
    float& at(std::int64_t d, std::int64_t h, std::int64_t w) {
        return data[static_cast<std::size_t>((d * dims[1] + h) * dims[2] + w)];
    }
    double voxel_volume_cm3() const { return spacing_mm[0] * spacing_mm[1] * spacing_mm[2] / 1000.0; }

    static Volume make(std::array<std::int64_t, 3> dims, std::array<double, 3> spacing,
                       VolumeKind kind, float fill = 0.f);
};

// A named (CT, PET, mask) triple. After preprocessing all volumes share
// dims and spacing. CT-only pretraining corpora carry a zero PET volume
// with pet_present = false.
struct Case {
    std::string name;
    Volume ct;
    Volume pet;
    std::optional<Volume> mask;
    bool pet_present = true;
};

// ------------------------------------------------------------------ file IO
// .vvol: one JSON header line (dims, spacing_mm, kind, dtype, order) followed
// by the raw little-endian float32 payload.

Volume read_volume(const std::string& path);
void write_volume(const Volume& v, const std::string& path);

// ------------------------------------------------------------ preprocessing

struct PreprocessConfig {
    std::array<double, 3> target_spacing_mm{1.0, 1.0, 1.0};
    // CT statistics use "body" voxels above this raw threshold (keeps air
    // from dominating); clipping bounds are percentiles of that population.
    double ct_body_threshold = -500.0;
    double ct_clip_lo_pct = 0.5;
    double ct_clip_hi_pct = 99.5;
};

// trilinear for CT/PET, nearest for MASK; identical volume when the target
// spacing already matches
Volume resample(const Volume& v, std::array<double, 3> target_spacing_mm);

// resample onto an explicit grid (used to map predictions back onto the
// original case grid)
Volume resample_to(const Volume& v, std::array<std::int64_t, 3> target_dims,
                   std::array<double, 3> target_spacing_mm);

// CT: clip to [p0.5, p99.5] of body voxels, z-score with that population's
// mean/std. PET: per-volume z-score. MASK: unchanged.
Volume normalize(const Volume& v, const PreprocessConfig& cfg = {});

// resample + normalize all volumes of a case onto the target grid
Case preprocess_case(const Case& c, const PreprocessConfig& cfg);

// linear-interpolated percentile (q in [0,100]) of a value sample
double percentile(std::vector<float> values, double q);

// ------------------------------------------------------------------- corpus

std::vector<std::string> read_manifest(const std::string& dir);
void write_manifest(const std::string& dir, const std::vector<std::string>& names);

// Load one case from <dir>/<name>_{ct,pet,mask}.vvol. Missing PET yields a
// zeroed PET channel with pet_present=false when require_pet is false.
Case load_case(const std::string& dir, const std::string& name, bool require_mask,
               bool require_pet);

// preprocessed cases held in memory for training/inference
struct CorpusCache {
    std::vector<Case> cases;

    const Case& by_name(const std::string& name) const {
        for (const auto& c : cases)
            if (c.name == name) return c;
        throw IoError("case not in corpus: " + name);
    }
};

CorpusCache load_preprocessed(const std::string& dir, const std::vector<std::string>& names,
                              const PreprocessConfig& cfg, bool require_mask, bool require_pet);

}  // namespace vxls
