#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssync/masking.hpp"

namespace ssync {

/// Every tunable of a run. Loaded from JSON with the exact field names
/// below; unknown keys are rejected so hyperparameter typos cannot
/// silently poison a sweep.
struct RunConfig {
    int num_images = 5;
    int grid_h = 16;
    int grid_w = 16;
    int embed_dim = 64;
    int proj_dim = 64;
    int num_heads = 4;
    int num_blocks = 4;
    int num_timesteps = 20;
    int num_subjects = 1;
    double beta = 2.0;
    uint64_t seed = 42;
    double gamma = 0.3;
    double lambda = 0.7;
    double tau = 0.1;
    double bli_window_fraction = 0.6;
    double dropout_attn = 0.25;
    double dropout_rfh = 0.25;
    double dropout_mask = 0.25;
    ThresholdMethod threshold_method = ThresholdMethod::kOtsu;
    std::vector<int> subset_images;   // empty: full-batch sharing
    std::vector<int> mask_layers;     // empty: all blocks feed the masks
    std::vector<int> rfh_layers;      // empty: all blocks run RFH
    std::vector<int> bli_layers;      // empty: all blocks interpolate
    bool use_masks = true;
    bool use_sharing = true;
    bool use_rfh = true;
    bool use_bli = true;
    bool use_dropouts = true;

    int patches() const { return grid_h * grid_w; }
    void validate() const;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);

} // namespace ssync
