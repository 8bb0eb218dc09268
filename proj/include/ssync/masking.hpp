#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssync/rng.hpp"

namespace ssync {

/// Per-patch subject-token attention scores for one image (length P,
/// non-negative). Produced by the cross-attention layers of the denoiser.
struct AttentionMap {
    int image_id = -1;
    std::vector<double> scores;
};

/// Binary per-patch subject indicator for one image.
struct SubjectMask {
    int image_id = -1;
    std::vector<uint8_t> bits;

    int popcount() const {
        int n = 0;
        for (uint8_t b : bits) n += (b != 0);
        return n;
    }
    bool empty_mask() const { return popcount() == 0; }
};

/// Key-visibility vector of length N*P for one query image: which patches
/// of the stacked batch its queries may attend to. The own-image segment
/// is always all-ones; segment j holds image j's subject mask.
struct PropagationMask {
    int image_id = -1;
    std::vector<uint8_t> visible;
};

enum class ThresholdMethod { kOtsu, kNiblack, kSauvola, kAdaptiveMean };

ThresholdMethod threshold_method_from_string(const std::string& name);
std::string to_string(ThresholdMethod method);

/// Mean over layers, then sum over subjects, then min-max rescale to
/// [0, 1]. per_layer[l][s] must all share one patch count; the caller
/// guarantees the maps come from the current timestep only. A constant
/// aggregate rescales to all-ones (fail-open).
AttentionMap aggregate_subject_maps(
    const std::vector<std::vector<AttentionMap>>& per_layer);

/// Min-max rescale to [0, 1]; a constant input becomes all-ones.
std::vector<double> min_max_rescale(const std::vector<double>& values);

/// Otsu threshold over a 256-bin histogram of values in [0, 1]: the split
/// index t in [0, 255] maximizing between-class variance, ties broken
/// toward the lower index. Values are binarized as bin(value) > t.
int otsu_threshold(const std::vector<int>& histogram);

/// Shared helper: values (already in [0, 1]) -> binary via Otsu.
/// All-equal input yields all-ones.
std::vector<uint8_t> otsu_binarize_values(const std::vector<double>& values);

/// Turns a rescaled attention map into a binary subject mask. The local
/// methods (niblack, sauvola, adaptive mean) threshold against 3x3-patch
/// window statistics on the grid_h x grid_w patch grid; otsu is global.
/// A constant map binarizes to all-ones regardless of method.
SubjectMask binarize(const AttentionMap& map, ThresholdMethod method,
                     int grid_h, int grid_w);

/// Nearest-neighbor resampling of a map between patch grids (used when a
/// map comes from a coarser layer than the mask resolution).
AttentionMap upsample_nearest(const AttentionMap& map, int from_h, int from_w,
                              int to_h, int to_w);

PropagationMask build_propagation_mask(int image_id,
                                       const std::vector<SubjectMask>& masks);

/// Independently zeroes each 1-entry with probability rate (one draw per
/// 1-entry, in index order). 0-entries are untouched and consume no draw.
SubjectMask dropout_mask(const SubjectMask& mask, double rate, SplitMix64& stream);

/// Binary PGM (P5, maxval 255) bytes: 0 = background, 255 = subject.
std::string mask_to_pgm(const SubjectMask& mask, int grid_h, int grid_w);

} // namespace ssync
