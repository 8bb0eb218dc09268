#include "ssync/rfh.hpp"

#include <algorithm>
#include <cmath>

#include "ssync/errors.hpp"

namespace ssync {

std::vector<Correspondence> CorrespondenceTable::for_source(int image_id) const {
    std::vector<Correspondence> out;
    for (const auto& e : entries) {
        if (e.source_image == image_id) out.push_back(e);
    }
    return out;
}

std::vector<double> compatibility(std::span<const double> ri_row,
                                  const Matrix& rj,
                                  const std::vector<int>& omega_j, double tau) {
    if (!(tau > 0.0)) throw ConfigError("compatibility: tau must be positive");
    if (omega_j.empty()) return {};
    std::vector<double> logits(omega_j.size());
    for (size_t n = 0; n < omega_j.size(); ++n) {
        logits[n] = cosine(ri_row, rj.row_span(omega_j[n])) / tau;
    }
    double max_val = logits[0];
    for (double l : logits) max_val = std::max(max_val, l);
    double sum = 0.0;
    for (double& l : logits) {
        l = std::exp(l - max_val);
        sum += l;
    }
    for (double& l : logits) l /= sum;
    return logits;
}

namespace {

std::vector<int> foreground(const SubjectMask& mask) {
    std::vector<int> idx;
    for (size_t p = 0; p < mask.bits.size(); ++p) {
        if (mask.bits[p]) idx.push_back(static_cast<int>(p));
    }
    return idx;
}

} // namespace

CorrespondenceTable correspond(const std::vector<RegionFeatures>& regions,
                               const std::vector<SubjectMask>& masks, double tau,
                               const std::vector<std::vector<int>>* targets) {
    if (!(tau > 0.0)) throw ConfigError("correspond: tau must be positive");
    if (regions.size() != masks.size()) {
        throw ShapeError("correspond: regions/masks count mismatch");
    }
    const int num_images = static_cast<int>(regions.size());
    std::vector<std::vector<int>> omega(num_images);
    std::vector<std::vector<double>> norms(num_images);
    for (int j = 0; j < num_images; ++j) {
        omega[j] = foreground(masks[j]);
        const Matrix& f = regions[j].features;
        norms[j].resize(f.rows());
        for (int p = 0; p < f.rows(); ++p) norms[j][p] = l2_norm(f.row_span(p));
    }
    // Same value cosine() would produce for the pair, with the row norms
    // hoisted out of the quadratic scan.
    auto pair_cosine = [&](int i, int r, int j, int w) {
        if (norms[i][r] == 0.0 || norms[j][w] == 0.0) {
            throw InvariantError("correspond: zero feature row");
        }
        const double c = dot(regions[i].features.row_span(r),
                             regions[j].features.row_span(w)) /
                         (norms[i][r] * norms[j][w]);
        return std::clamp(c, -1.0, 1.0);
    };

    CorrespondenceTable table;
    std::vector<double> winner_cosines;
    for (int i = 0; i < num_images; ++i) {
        std::vector<int> candidates;
        if (targets) {
            candidates = (*targets)[i];
        } else {
            for (int j = 0; j < num_images; ++j) {
                if (j != i) candidates.push_back(j);
            }
        }
        std::sort(candidates.begin(), candidates.end());

        std::vector<Correspondence> rows;
        for (int r : omega[i]) {
            int best_j = -1;
            int best_w = -1;
            double best_cos = 0.0;
            size_t best_pos = 0;
            for (int j : candidates) {
                if (j == i || omega[j].empty()) continue;
                for (size_t n = 0; n < omega[j].size(); ++n) {
                    const double c = pair_cosine(i, r, j, omega[j][n]);
                    if (best_j < 0 || c > best_cos) {
                        best_j = j;
                        best_w = omega[j][n];
                        best_cos = c;
                        best_pos = n;
                    }
                }
            }
            if (best_j < 0) continue;
            // Score is the winner's mass inside its own image's
            // compatibility distribution.
            winner_cosines.resize(omega[best_j].size());
            for (size_t n = 0; n < omega[best_j].size(); ++n) {
                winner_cosines[n] = pair_cosine(i, r, best_j, omega[best_j][n]);
            }
            double max_logit = winner_cosines[0] / tau;
            for (double c : winner_cosines) max_logit = std::max(max_logit, c / tau);
            double sum = 0.0;
            double win = 0.0;
            for (size_t n = 0; n < omega[best_j].size(); ++n) {
                const double e = std::exp(winner_cosines[n] / tau - max_logit);
                sum += e;
                if (n == best_pos) win = e;
            }
            Correspondence e;
            e.source_image = i;
            e.source_patch = r;
            e.target_image = best_j;
            e.target_patch = best_w;
            e.score = win / sum;
            rows.push_back(e);
        }
        if (rows.empty()) continue;
        // Quality gate, per source image: admit only correspondences whose
        // score clears the Otsu split of this image's score distribution.
        std::vector<double> scores;
        for (const auto& e : rows) scores.push_back(e.score);
        const std::vector<uint8_t> admitted =
            otsu_binarize_values(min_max_rescale(scores));
        for (size_t n = 0; n < rows.size(); ++n) {
            rows[n].harmonized = admitted[n] != 0;
            table.entries.push_back(rows[n]);
        }
    }
    return table;
}

Matrix harmonize(const RegionFeatures& source, const CorrespondenceTable& table,
                 const std::vector<RegionFeatures>& regions, double gamma,
                 const SubjectMask& source_mask, double dropout_rate,
                 SplitMix64& stream, std::vector<HarmonizeRecord>* records) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw ConfigError("harmonize: gamma must be in [0, 1]");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("harmonize: dropout rate must be in [0, 1)");
    }
    Matrix out = source.features;
    if (gamma == 0.0) return out;
    if (source_mask.bits.size() != static_cast<size_t>(out.rows())) {
        throw ShapeError("harmonize: mask length mismatch");
    }
    for (const auto& e : table.entries) {
        if (e.source_image != source.image_id || !e.harmonized) continue;
        if (!source_mask.bits[e.source_patch]) continue;
        if (dropout_rate > 0.0 && stream.next_double() < dropout_rate) continue;
        const Matrix& target = regions.at(e.target_image).features;
        if (target.cols() != out.cols()) {
            throw ShapeError("harmonize: feature dim mismatch");
        }
        double* row = out.row(e.source_patch);
        const double* tgt = target.row(e.target_patch);
        double prior = 0.0;
        double post = 0.0;
        for (int c = 0; c < out.cols(); ++c) {
            const double before = row[c];
            const double after =
                gamma == 1.0 ? tgt[c] : before + gamma * (tgt[c] - before);
            if (records) {
                prior += (before - tgt[c]) * (before - tgt[c]);
                post += (after - tgt[c]) * (after - tgt[c]);
            }
            row[c] = after;
        }
        if (records) {
            records->push_back({e.source_image, e.source_patch, std::sqrt(prior),
                                std::sqrt(post)});
        }
    }
    return out;
}

} // namespace ssync
