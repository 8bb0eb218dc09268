#pragma once

#include <vector>

#include "ssync/masking.hpp"
#include "ssync/matrix.hpp"

namespace ssync {

/// Desk-scale proxy scores for one run. Cosine-based values are undefined
/// (flag false, value NaN) when no image pair has the needed non-empty
/// masks.
struct MetricReport {
    double subject_consistency = 0.0;
    bool subject_consistency_defined = false;
    double layout_diversity = 0.0;
    double background_drift = 0.0;
    bool background_drift_defined = false;
    double mask_iou_vs_planted = 0.0;
    int skipped_subject_pairs = 0;
};

/// |a AND b| / |a OR b|; 1.0 when both masks are empty.
double mask_iou(const SubjectMask& a, const SubjectMask& b);

/// Mask-weighted mean embedding row of one image (the pooled subject
/// representation). Throws InvariantError on an empty mask.
std::vector<double> masked_mean_pool(const Matrix& embeddings,
                                     const SubjectMask& mask);

/// Mean pairwise cosine of mask-pooled embeddings over image pairs whose
/// masks are both non-empty; report.subject_consistency_defined is false
/// when no pair qualifies.
double subject_consistency(const std::vector<Matrix>& embeddings,
                           const std::vector<SubjectMask>& masks,
                           bool* defined = nullptr, int* skipped_pairs = nullptr);

double layout_diversity(const std::vector<SubjectMask>& masks);

MetricReport compute_metrics(const std::vector<Matrix>& final_embeddings,
                             const std::vector<SubjectMask>& final_masks,
                             const std::vector<SubjectMask>& planted);

} // namespace ssync
