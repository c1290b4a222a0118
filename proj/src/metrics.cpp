#include "vxls/metrics.hpp"

#include <fstream>
#include <vector>

#include <json.hpp>

namespace vxls {

namespace {

void check_binary(const Volume& v) {
    for (float x : v.data)
        if (x != 0.f && x != 1.f) throw NonBinaryTarget("mask volume contains non-binary values");
}

void check_same_grid(const Volume& a, const Volume& b) {
    if (a.dims != b.dims || a.spacing_mm != b.spacing_mm)
        throw DimMismatch("mask volumes have different grids");
}

}  // namespace

double dice(const Volume& pred, const Volume& gt) {
    check_same_grid(pred, gt);
    check_binary(pred);
    check_binary(gt);
    std::int64_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool pi = pred.data[i] != 0.f, gi = gt.data[i] != 0.f;
        p += pi;
        g += gi;
        both += pi && gi;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

Components connected_components(const Volume& mask, int connectivity) {
    check_binary(mask);
    if (connectivity != 6 && connectivity != 26)
        throw DimMismatch("connectivity must be 6 or 26");
    const auto [D, H, W] = mask.dims;
    Components out;
    out.labels.assign(mask.data.size(), 0);
    out.sizes.assign(1, 0);

    std::vector<std::array<std::int64_t, 3>> offsets;
    for (std::int64_t dd = -1; dd <= 1; ++dd)
        for (std::int64_t dh = -1; dh <= 1; ++dh)
            for (std::int64_t dw = -1; dw <= 1; ++dw) {
                if (dd == 0 && dh == 0 && dw == 0) continue;
                if (connectivity == 6 && std::abs(dd) + std::abs(dh) + std::abs(dw) != 1) continue;
                offsets.push_back({dd, dh, dw});
            }

    std::vector<std::int64_t> stack;
    for (std::int64_t i = 0; i < mask.numel(); ++i) {
        if (mask.data[static_cast<std::size_t>(i)] == 0.f ||
            out.labels[static_cast<std::size_t>(i)] != 0)
            continue;
        const std::int32_t label = ++out.count;
        out.sizes.push_back(0);
        stack.push_back(i);
        out.labels[static_cast<std::size_t>(i)] = label;
        while (!stack.empty()) {
            const std::int64_t cur = stack.back();
            stack.pop_back();
            ++out.sizes[static_cast<std::size_t>(label)];
            const std::int64_t d = cur / (H * W), h = (cur / W) % H, w = cur % W;
            for (const auto& o : offsets) {
                const std::int64_t nd = d + o[0], nh = h + o[1], nw = w + o[2];
                if (nd < 0 || nd >= D || nh < 0 || nh >= H || nw < 0 || nw >= W) continue;
                const std::int64_t ni = (nd * H + nh) * W + nw;
                if (mask.data[static_cast<std::size_t>(ni)] != 0.f &&
                    out.labels[static_cast<std::size_t>(ni)] == 0) {
                    out.labels[static_cast<std::size_t>(ni)] = label;
                    stack.push_back(ni);
                }
            }
        }
    }
    return out;
}

std::pair<double, double> false_volumes(const Volume& pred, const Volume& gt, int connectivity) {
    check_same_grid(pred, gt);
    const Components cp = connected_components(pred, connectivity);
    const Components cg = connected_components(gt, connectivity);

    std::vector<char> gt_hit(cg.sizes.size(), 0), pred_hit(cp.sizes.size(), 0);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool pi = pred.data[i] != 0.f, gi = gt.data[i] != 0.f;
        if (pi && gi) {
            gt_hit[static_cast<std::size_t>(cg.labels[i])] = 1;
            pred_hit[static_cast<std::size_t>(cp.labels[i])] = 1;
        }
    }
    const double voxvol = gt.voxel_volume_cm3();
    double fnv = 0, fpv = 0;
    for (int l = 1; l <= cg.count; ++l)
        if (!gt_hit[static_cast<std::size_t>(l)])
            fnv += static_cast<double>(cg.sizes[static_cast<std::size_t>(l)]) * voxvol;
    for (int l = 1; l <= cp.count; ++l)
        if (!pred_hit[static_cast<std::size_t>(l)])
            fpv += static_cast<double>(cp.sizes[static_cast<std::size_t>(l)]) * voxvol;
    return {fnv, fpv};
}

SegScore score_case(const std::string& name, const Volume& pred, const Volume& gt,
                    int connectivity) {
    SegScore s;
    s.case_name = name;
    s.dice = dice(pred, gt);
    auto [fnv, fpv] = false_volumes(pred, gt, connectivity);
    s.fnv_cm3 = fnv;
    s.fpv_cm3 = fpv;
    return s;
}

AggregateScore aggregate(const std::vector<SegScore>& scores) {
    if (scores.empty()) throw EmptyList("aggregate of zero scores");
    AggregateScore a;
    for (const auto& s : scores) {
        a.dice += s.dice;
        a.fnv_cm3 += s.fnv_cm3;
        a.fpv_cm3 += s.fpv_cm3;
    }
    const double n = static_cast<double>(scores.size());
    a.dice /= n;
    a.fnv_cm3 /= n;
    a.fpv_cm3 /= n;
    a.n_cases = scores.size();
    return a;
}

void write_scores_csv(const std::vector<SegScore>& scores, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << "case,dice,fnv_cm3,fpv_cm3\n";
    for (const auto& s : scores)
        f << s.case_name << ',' << s.dice << ',' << s.fnv_cm3 << ',' << s.fpv_cm3 << '\n';
}

void write_aggregate_json(const AggregateScore& agg, const std::string& path) {
    nlohmann::json j;
    j["mean_dice"] = agg.dice;
    j["mean_fnv_cm3"] = agg.fnv_cm3;
    j["mean_fpv_cm3"] = agg.fpv_cm3;
    j["n_cases"] = agg.n_cases;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << '\n';
}

}  // namespace vxls
