#include "vxls/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace vxls {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(VolumeKind k) {
    switch (k) {
        case VolumeKind::CT: return "CT";
        case VolumeKind::PET: return "PET";
        default: return "MASK";
    }
}

VolumeKind volume_kind_from_string(const std::string& s) {
    if (s == "CT") return VolumeKind::CT;
    if (s == "PET") return VolumeKind::PET;
    if (s == "MASK") return VolumeKind::MASK;
    throw MalformedHeader("unknown volume kind: " + s);
}

Volume Volume::make(std::array<std::int64_t, 3> dims, std::array<double, 3> spacing,
                    VolumeKind kind, float fill) {
    Volume v;
    v.dims = dims;
    v.spacing_mm = spacing;
    v.kind = kind;
    v.data.assign(static_cast<std::size_t>(v.numel()), fill);
    return v;
}

// ------------------------------------------------------------------ file IO

Volume read_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string header;
    if (!std::getline(f, header)) throw MalformedHeader("missing header line in " + path);
    json j;
    try {
        j = json::parse(header);
    } catch (const json::exception& e) {
        throw MalformedHeader(path + ": " + e.what());
    }
    Volume v;
    try {
        auto d = j.at("dims");
        auto s = j.at("spacing_mm");
        for (int i = 0; i < 3; ++i) {
            v.dims[i] = d.at(i).get<std::int64_t>();
            v.spacing_mm[i] = s.at(i).get<double>();
        }
        v.kind = volume_kind_from_string(j.at("kind").get<std::string>());
        if (j.at("dtype").get<std::string>() != "f32" || j.at("order").get<std::string>() != "le")
            throw MalformedHeader(path + ": unsupported dtype/order");
    } catch (const json::exception& e) {
        throw MalformedHeader(path + ": " + e.what());
    }
    for (int i = 0; i < 3; ++i) {
        if (v.dims[i] <= 0) throw MalformedHeader(path + ": non-positive dims");
        if (!(v.spacing_mm[i] > 0)) throw MalformedHeader(path + ": non-positive spacing");
    }
    v.data.resize(static_cast<std::size_t>(v.numel()));
    f.read(reinterpret_cast<char*>(v.data.data()),
           static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(v.data.size() * sizeof(float)))
        throw SizeMismatch(path + ": payload shorter than dims product");
    return v;
}

void write_volume(const Volume& v, const std::string& path) {
    if (static_cast<std::int64_t>(v.data.size()) != v.numel())
        throw SizeMismatch("volume data length does not match dims");
    json j;
    j["dims"] = v.dims;
    j["spacing_mm"] = v.spacing_mm;
    j["kind"] = to_string(v.kind);
    j["dtype"] = "f32";
    j["order"] = "le";
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump() << '\n';
    f.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    if (!f) throw IoError("short write to " + path);
}

// ------------------------------------------------------------ preprocessing

Volume resample_to(const Volume& v, std::array<std::int64_t, 3> tdims,
                   std::array<double, 3> tspacing) {
    for (int i = 0; i < 3; ++i)
        if (!(tspacing[i] > 0)) throw InvalidSpacing("target spacing must be positive");
    if (tdims == v.dims && tspacing == v.spacing_mm) return v;

    Volume out = Volume::make(tdims, tspacing, v.kind);
    const bool nearest = v.kind == VolumeKind::MASK;
    const std::int64_t D = v.dims[0], H = v.dims[1], W = v.dims[2];
    auto src_coord = [&](std::int64_t i, int axis) {
        double s = ((static_cast<double>(i) + 0.5) * tspacing[axis]) / v.spacing_mm[axis] - 0.5;
        return std::clamp(s, 0.0, static_cast<double>(v.dims[axis] - 1));
    };
    for (std::int64_t d = 0; d < tdims[0]; ++d) {
        const double sd = src_coord(d, 0);
        for (std::int64_t h = 0; h < tdims[1]; ++h) {
            const double sh = src_coord(h, 1);
            for (std::int64_t w = 0; w < tdims[2]; ++w) {
                const double sw = src_coord(w, 2);
                float val;
                if (nearest) {
                    val = v.at(std::llround(sd), std::llround(sh), std::llround(sw));
                } else {
                    const std::int64_t d0 = static_cast<std::int64_t>(sd),
                                       h0 = static_cast<std::int64_t>(sh),
                                       w0 = static_cast<std::int64_t>(sw);
                    const std::int64_t d1 = std::min(d0 + 1, D - 1), h1 = std::min(h0 + 1, H - 1),
                                       w1 = std::min(w0 + 1, W - 1);
                    const double fd = sd - static_cast<double>(d0), fh = sh - static_cast<double>(h0),
                                 fw = sw - static_cast<double>(w0);
                    auto lerp = [](double a, double b, double f) { return a + f * (b - a); };
                    const double c00 = lerp(v.at(d0, h0, w0), v.at(d0, h0, w1), fw);
                    const double c01 = lerp(v.at(d0, h1, w0), v.at(d0, h1, w1), fw);
                    const double c10 = lerp(v.at(d1, h0, w0), v.at(d1, h0, w1), fw);
                    const double c11 = lerp(v.at(d1, h1, w0), v.at(d1, h1, w1), fw);
                    val = static_cast<float>(lerp(lerp(c00, c01, fh), lerp(c10, c11, fh), fd));
                }
                out.at(d, h, w) = val;
            }
        }
    }
    return out;
}

Volume resample(const Volume& v, std::array<double, 3> target_spacing_mm) {
    for (int i = 0; i < 3; ++i)
        if (!(target_spacing_mm[i] > 0)) throw InvalidSpacing("target spacing must be positive");
    if (target_spacing_mm == v.spacing_mm) return v;
    std::array<std::int64_t, 3> tdims;
    for (int i = 0; i < 3; ++i) {
        const double extent = static_cast<double>(v.dims[i]) * v.spacing_mm[i];
        tdims[i] = std::max<std::int64_t>(1, std::llround(extent / target_spacing_mm[i]));
    }
    return resample_to(v, tdims, target_spacing_mm);
}

double percentile(std::vector<float> values, double q) {
    if (values.empty()) throw DegenerateVolume("percentile of empty sample");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double f = rank - static_cast<double>(lo);
    return static_cast<double>(values[lo]) + f * (static_cast<double>(values[hi]) - values[lo]);
}

Volume normalize(const Volume& v, const PreprocessConfig& cfg) {
    if (v.kind == VolumeKind::MASK) return v;
    Volume out = v;
    if (v.kind == VolumeKind::PET) {
        double mean = 0;
        for (float x : v.data) mean += x;
        mean /= static_cast<double>(v.data.size());
        double var = 0;
        for (float x : v.data) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.data.size());
        const double sd = std::sqrt(var);
        if (sd < 1e-8) throw DegenerateVolume("constant PET volume");
        for (auto& x : out.data) x = static_cast<float>((x - mean) / sd);
        return out;
    }
    // CT
    std::vector<float> body;
    body.reserve(v.data.size());
    for (float x : v.data)
        if (x > cfg.ct_body_threshold) body.push_back(x);
    if (body.empty()) throw DegenerateVolume("CT volume has no voxels above body threshold");
    const float lo = static_cast<float>(percentile(body, cfg.ct_clip_lo_pct));
    const float hi = static_cast<float>(percentile(body, cfg.ct_clip_hi_pct));
    double mean = 0;
    std::size_t nbody = 0;
    for (float x : v.data)
        if (x > cfg.ct_body_threshold) {
            mean += std::clamp(x, lo, hi);
            ++nbody;
        }
    mean /= static_cast<double>(nbody);
    double var = 0;
    for (float x : v.data)
        if (x > cfg.ct_body_threshold) {
            const double d = std::clamp(x, lo, hi) - mean;
            var += d * d;
        }
    var /= static_cast<double>(nbody);
    const double sd = std::sqrt(var);
    if (sd < 1e-8) throw DegenerateVolume("constant CT body");
    for (auto& x : out.data) x = static_cast<float>((std::clamp(x, lo, hi) - mean) / sd);
    return out;
}

Case preprocess_case(const Case& c, const PreprocessConfig& cfg) {
    Case out;
    out.name = c.name;
    out.pet_present = c.pet_present;
    out.ct = normalize(resample(c.ct, cfg.target_spacing_mm), cfg);
    if (c.pet_present)
        out.pet = normalize(resample(c.pet, cfg.target_spacing_mm), cfg);
    else
        out.pet = Volume::make(out.ct.dims, out.ct.spacing_mm, VolumeKind::PET);
    if (c.mask) out.mask = resample(*c.mask, cfg.target_spacing_mm);
    if (out.pet.dims != out.ct.dims || (out.mask && out.mask->dims != out.ct.dims))
        throw UnalignedCase(c.name + ": volumes disagree after preprocessing");
    return out;
}

// ------------------------------------------------------------------- corpus

std::vector<std::string> read_manifest(const std::string& dir) {
    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    json j;
    try {
        f >> j;
        return j.at("cases").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw MalformedHeader(path + ": " + e.what());
    }
}

void write_manifest(const std::string& dir, const std::vector<std::string>& names) {
    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    json j;
    j["cases"] = names;
    f << j.dump(2) << '\n';
}

Case load_case(const std::string& dir, const std::string& name, bool require_mask,
               bool require_pet) {
    Case c;
    c.name = name;
    const fs::path base(dir);
    c.ct = read_volume((base / (name + "_ct.vvol")).string());
    const fs::path pet_path = base / (name + "_pet.vvol");
    if (fs::exists(pet_path)) {
        c.pet = read_volume(pet_path.string());
    } else if (require_pet) {
        throw IoError(name + ": missing PET volume");
    } else {
        c.pet = Volume::make(c.ct.dims, c.ct.spacing_mm, VolumeKind::PET);
        c.pet_present = false;
    }
    const fs::path mask_path = base / (name + "_mask.vvol");
    if (fs::exists(mask_path))
        c.mask = read_volume(mask_path.string());
    else if (require_mask)
        throw IoError(name + ": missing mask volume");
    return c;
}

CorpusCache load_preprocessed(const std::string& dir, const std::vector<std::string>& names,
                              const PreprocessConfig& cfg, bool require_mask, bool require_pet) {
    CorpusCache cache;
    cache.cases.reserve(names.size());
    for (const auto& n : names)
        cache.cases.push_back(preprocess_case(load_case(dir, n, require_mask, require_pet), cfg));
    return cache;
}

}  // namespace vxls
