#include "vxls/slices.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace vxls {

namespace fs = std::filesystem;

void write_pgm(const std::string& path, std::int64_t width, std::int64_t height,
               const std::vector<unsigned char>& pixels) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << "P5\n" << width << ' ' << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

namespace {

// slice extraction: view 0 = axial (fixed D), 1 = coronal (fixed H),
// 2 = sagittal (fixed W); returns (rows, cols, values)
struct Slice {
    std::int64_t rows = 0, cols = 0;
    std::vector<float> v;
};

Slice take_slice(const Volume& vol, int view) {
    const auto [D, H, W] = vol.dims;
    Slice s;
    if (view == 0) {
        s.rows = H;
        s.cols = W;
        const std::int64_t d = D / 2;
        s.v.resize(static_cast<std::size_t>(H * W));
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w) s.v[static_cast<std::size_t>(h * W + w)] = vol.at(d, h, w);
    } else if (view == 1) {
        s.rows = D;
        s.cols = W;
        const std::int64_t h = H / 2;
        s.v.resize(static_cast<std::size_t>(D * W));
        for (std::int64_t d = 0; d < D; ++d)
            for (std::int64_t w = 0; w < W; ++w) s.v[static_cast<std::size_t>(d * W + w)] = vol.at(d, h, w);
    } else {
        s.rows = D;
        s.cols = H;
        const std::int64_t w = W / 2;
        s.v.resize(static_cast<std::size_t>(D * H));
        for (std::int64_t d = 0; d < D; ++d)
            for (std::int64_t h = 0; h < H; ++h) s.v[static_cast<std::size_t>(d * H + h)] = vol.at(d, h, w);
    }
    return s;
}

std::vector<unsigned char> to_gray(const Slice& s) {
    const auto [mn_it, mx_it] = std::minmax_element(s.v.begin(), s.v.end());
    const float mn = *mn_it, mx = *mx_it;
    const float range = mx > mn ? mx - mn : 1.f;
    std::vector<unsigned char> out(s.v.size());
    for (std::size_t i = 0; i < s.v.size(); ++i)
        out[i] = static_cast<unsigned char>(255.f * (s.v[i] - mn) / range);
    return out;
}

// in-plane boundary voxels of a binary slice
std::vector<unsigned char> contour(const Slice& s, unsigned char value) {
    std::vector<unsigned char> out(s.v.size(), 0);
    for (std::int64_t r = 0; r < s.rows; ++r)
        for (std::int64_t c = 0; c < s.cols; ++c) {
            if (s.v[static_cast<std::size_t>(r * s.cols + c)] == 0.f) continue;
            bool edge = r == 0 || c == 0 || r == s.rows - 1 || c == s.cols - 1;
            if (!edge) {
                edge = s.v[static_cast<std::size_t>((r - 1) * s.cols + c)] == 0.f ||
                       s.v[static_cast<std::size_t>((r + 1) * s.cols + c)] == 0.f ||
                       s.v[static_cast<std::size_t>(r * s.cols + c - 1)] == 0.f ||
                       s.v[static_cast<std::size_t>(r * s.cols + c + 1)] == 0.f;
            }
            if (edge) out[static_cast<std::size_t>(r * s.cols + c)] = value;
        }
    return out;
}

}  // namespace

void export_slices(const Case& c, const Volume* pred, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const char* view_names[3] = {"axial", "coronal", "sagittal"};
    for (int view = 0; view < 3; ++view) {
        const std::string stem =
            (fs::path(out_dir) / (c.name + "_" + view_names[view])).string();
        Slice ct = take_slice(c.ct, view);
        write_pgm(stem + "_ct.pgm", ct.cols, ct.rows, to_gray(ct));
        Slice pet = take_slice(c.pet, view);
        write_pgm(stem + "_pet.pgm", pet.cols, pet.rows, to_gray(pet));

        std::vector<unsigned char> overlay(ct.v.size(), 0);
        if (c.mask) {
            const auto gtc = contour(take_slice(*c.mask, view), 85);
            for (std::size_t i = 0; i < overlay.size(); ++i) overlay[i] |= gtc[i];
        }
        if (pred) {
            const auto prc = contour(take_slice(*pred, view), 170);
            for (std::size_t i = 0; i < overlay.size(); ++i) overlay[i] |= prc[i];
        }
        write_pgm(stem + "_overlay.pgm", ct.cols, ct.rows, overlay);
    }
    nlohmann::json j;
    j["case"] = c.name;
    j["views"] = {"axial", "coronal", "sagittal"};
    j["overlay_values"] = {{"background", 0}, {"gt_contour", 85}, {"pred_contour", 170}, {"both", 255}};
    std::ofstream f((fs::path(out_dir) / (c.name + "_overlay.json")).string(), std::ios::trunc);
    f << j.dump(2) << '\n';
}

}  // namespace vxls
