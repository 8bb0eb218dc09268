#include "ssync/metrics.hpp"

#include <cmath>
#include <limits>

#include "ssync/errors.hpp"

namespace ssync {

double mask_iou(const SubjectMask& a, const SubjectMask& b) {
    if (a.bits.size() != b.bits.size()) {
        throw ShapeError("mask_iou: length mismatch");
    }
    int inter = 0;
    int uni = 0;
    for (size_t p = 0; p < a.bits.size(); ++p) {
        const bool ba = a.bits[p] != 0;
        const bool bb = b.bits[p] != 0;
        inter += (ba && bb);
        uni += (ba || bb);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> masked_mean_pool(const Matrix& embeddings,
                                     const SubjectMask& mask) {
    if (mask.bits.size() != static_cast<size_t>(embeddings.rows())) {
        throw ShapeError("masked_mean_pool: mask length mismatch");
    }
    const int count = mask.popcount();
    if (count == 0) throw InvariantError("masked_mean_pool: empty mask");
    std::vector<double> pooled(embeddings.cols(), 0.0);
    for (int p = 0; p < embeddings.rows(); ++p) {
        if (!mask.bits[p]) continue;
        const double* row = embeddings.row(p);
        for (int c = 0; c < embeddings.cols(); ++c) pooled[c] += row[c];
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (double& x : pooled) x *= inv;
    return pooled;
}

double subject_consistency(const std::vector<Matrix>& embeddings,
                           const std::vector<SubjectMask>& masks,
                           bool* defined, int* skipped_pairs) {
    if (embeddings.size() != masks.size()) {
        throw ShapeError("subject_consistency: batch size mismatch");
    }
    const int n = static_cast<int>(embeddings.size());
    std::vector<std::vector<double>> pooled(n);
    std::vector<bool> usable(n, false);
    for (int i = 0; i < n; ++i) {
        if (!masks[i].empty_mask()) {
            pooled[i] = masked_mean_pool(embeddings[i], masks[i]);
            usable[i] = l2_norm(pooled[i]) > 0.0;
        }
    }
    double sum = 0.0;
    int pairs = 0;
    int skipped = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (!usable[i] || !usable[j]) {
                ++skipped;
                continue;
            }
            sum += cosine(pooled[i], pooled[j]);
            ++pairs;
        }
    }
    if (skipped_pairs) *skipped_pairs = skipped;
    if (pairs == 0) {
        if (defined) *defined = false;
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (defined) *defined = true;
    return sum / static_cast<double>(pairs);
}

double layout_diversity(const std::vector<SubjectMask>& masks) {
    const int n = static_cast<int>(masks.size());
    double sum = 0.0;
    int pairs = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            sum += 1.0 - mask_iou(masks[i], masks[j]);
            ++pairs;
        }
    }
    if (pairs == 0) return 0.0;
    return sum / static_cast<double>(pairs);
}

namespace {

SubjectMask complement(const SubjectMask& mask) {
    SubjectMask out = mask;
    for (auto& b : out.bits) b = b ? 0 : 1;
    return out;
}

} // namespace

MetricReport compute_metrics(const std::vector<Matrix>& final_embeddings,
                             const std::vector<SubjectMask>& final_masks,
                             const std::vector<SubjectMask>& planted) {
    MetricReport report;
    report.subject_consistency =
        subject_consistency(final_embeddings, final_masks,
                            &report.subject_consistency_defined,
                            &report.skipped_subject_pairs);
    report.layout_diversity = layout_diversity(final_masks);

    std::vector<SubjectMask> background;
    background.reserve(final_masks.size());
    for (const auto& m : final_masks) background.push_back(complement(m));
    report.background_drift = subject_consistency(
        final_embeddings, background, &report.background_drift_defined, nullptr);

    if (planted.size() != final_masks.size()) {
        throw ShapeError("compute_metrics: planted mask count mismatch");
    }
    double iou_sum = 0.0;
    for (size_t i = 0; i < final_masks.size(); ++i) {
        iou_sum += mask_iou(final_masks[i], planted[i]);
    }
    report.mask_iou_vs_planted =
        final_masks.empty() ? 0.0 : iou_sum / static_cast<double>(final_masks.size());
    return report;
}

} // namespace ssync
