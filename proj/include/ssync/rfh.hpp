#pragma once

#include <vector>

#include "ssync/masking.hpp"
#include "ssync/matrix.hpp"
#include "ssync/rng.hpp"

namespace ssync {

/// Per-patch region features of one image (P x d_k), taken from the
/// self-attention output activations of the layer being harmonized.
struct RegionFeatures {
    int image_id = -1;
    Matrix features;
};

/// One resolved correspondence: source patch r of image i maps to its
/// best-matching foreground patch of some other image, with the
/// compatibility score inside that image's distribution and the flag
/// saying whether the quality gate admitted it for harmonization.
struct Correspondence {
    int source_image = -1;
    int source_patch = -1;
    int target_image = -1;
    int target_patch = -1;
    double score = 0.0;
    bool harmonized = false;
};

struct CorrespondenceTable {
    std::vector<Correspondence> entries;

    std::vector<Correspondence> for_source(int image_id) const;
};

/// Softmax over omega_j of cosine(ri_row, rj rows) / tau. Returns the
/// distribution aligned with omega_j; empty omega_j yields an empty
/// vector (the no-correspondence signal).
std::vector<double> compatibility(std::span<const double> ri_row,
                                  const Matrix& rj,
                                  const std::vector<int>& omega_j, double tau);

/// Finds, for every foreground patch of every source image, the best
/// foreground correspondent across the allowed target images (highest
/// cosine; ties toward the smaller patch index, then the smaller image
/// id). Per source image the harmonized flag is set by Otsu-thresholding
/// the winning scores, keeping only sufficiently strong correspondences.
/// `targets`, when given, restricts the candidate images per source.
CorrespondenceTable correspond(const std::vector<RegionFeatures>& regions,
                               const std::vector<SubjectMask>& masks, double tau,
                               const std::vector<std::vector<int>>* targets = nullptr);

/// Sampled when harmonize() is instrumented: distances to the
/// correspondent before and after the update.
struct HarmonizeRecord {
    int source_image;
    int source_patch;
    double prior_distance;
    double post_distance;
};

/// Pulls each admitted source region toward its correspondent:
/// row r <- row r + gamma * (target row - row r). Applies only where the
/// table's flag is set, the source mask is 1 and the per-region dropout
/// does not trigger. All other rows are returned bit-identical.
Matrix harmonize(const RegionFeatures& source, const CorrespondenceTable& table,
                 const std::vector<RegionFeatures>& regions, double gamma,
                 const SubjectMask& source_mask, double dropout_rate,
                 SplitMix64& stream,
                 std::vector<HarmonizeRecord>* records = nullptr);

} // namespace ssync
