#pragma once

#include <string>

#include "vxls/volume.hpp"

namespace vxls {

// Figure-style exports: axial/sagittal/coronal mid-slices of CT and PET as
// P5 graymaps plus an overlay graymap marking ground-truth and prediction
// contours (0 background, 85 GT, 170 prediction, 255 both) and a sidecar
// JSON describing the encoding.
void export_slices(const Case& c, const Volume* pred, const std::string& out_dir);

void write_pgm(const std::string& path, std::int64_t width, std::int64_t height,
               const std::vector<unsigned char>& pixels);

}  // namespace vxls
