#pragma once

#include <array>
#include <cstdint>

#include "vxls/network.hpp"
#include "vxls/volume.hpp"

namespace vxls {

// Whole-volume prediction: sliding-window tiling with Gaussian-weighted
// blending, optional flip-group test-time augmentation, threshold 0.5
// binarization. Inference is deterministic; the 8-term TTA mean reduces in
// a fixed balanced tree over the flip index, which makes
// tta(flip(x)) == flip(tta(x)) hold exactly.

struct InferConfig {
    std::array<std::int64_t, 3> patch_dims{32, 48, 40};
    double overlap = 0.5;       // tile stride = patch * (1 - overlap)
    double gaussian_sigma_div = 8.0;  // sigma = patch / this, per axis
};

// foreground-probability volume over the (preprocessed) case grid
Volume sliding_window(Model& model, const Volume& ct, const Volume& pet, const InferConfig& cfg);

// mean over the full flip group (8 axis-flip combinations) when tta is on;
// exactly the sliding-window output when off
Volume tta_predict(Model& model, const Volume& ct, const Volume& pet, const InferConfig& cfg,
                   bool tta);

// strict threshold: mask = 1 where prob > threshold
Volume binarize(const Volume& prob, double threshold = 0.5);

}  // namespace vxls
