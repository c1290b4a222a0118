#pragma once

#include <string>

#include "vxls/augment.hpp"
#include "vxls/mae.hpp"
#include "vxls/network.hpp"
#include "vxls/phantom.hpp"
#include "vxls/train.hpp"
#include "vxls/volume.hpp"

namespace vxls {

// One JSON file configures the whole pipeline; every section and every key
// is optional and overrides the built-in desk-scale defaults.
struct PipelineConfig {
    PreprocessConfig preprocess;
    AugmentConfig augment;
    NetworkConfig network;
    MaeConfig mae;
    PretrainConfig pretrain;
    TrainConfig train;
};

PipelineConfig load_pipeline_config(const std::string& path);  // "" -> defaults
PhantomSpec load_phantom_spec(const std::string& path);        // "" -> defaults

}  // namespace vxls
