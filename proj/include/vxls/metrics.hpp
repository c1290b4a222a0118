#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vxls/volume.hpp"

namespace vxls {

// AutoPET-style per-case scores: Dice, false-negative volume and
// false-positive volume in cm^3 (connected-component based, zero-overlap
// rule, 26-connectivity by default).
struct SegScore {
    std::string case_name;
    double dice = 0;
    double fnv_cm3 = 0;
    double fpv_cm3 = 0;
};

// 2|P^G| / (|P|+|G|); both-empty pairs score 1 (agreement on absence)
double dice(const Volume& pred, const Volume& gt);

struct Components {
    std::vector<std::int32_t> labels;  // 0 = background, 1..count = components
    int count = 0;
    std::vector<std::int64_t> sizes;  // voxel count per label, sizes[0] unused
};

Components connected_components(const Volume& mask, int connectivity = 26);

// FNV: total volume of GT components with zero predicted overlap.
// FPV: total volume of predicted components with zero GT overlap.
std::pair<double, double> false_volumes(const Volume& pred, const Volume& gt,
                                        int connectivity = 26);

SegScore score_case(const std::string& name, const Volume& pred, const Volume& gt,
                    int connectivity = 26);

struct AggregateScore {
    double dice = 0, fnv_cm3 = 0, fpv_cm3 = 0;
    std::size_t n_cases = 0;
};

AggregateScore aggregate(const std::vector<SegScore>& scores);

void write_scores_csv(const std::vector<SegScore>& scores, const std::string& path);
void write_aggregate_json(const AggregateScore& agg, const std::string& path);

}  // namespace vxls
