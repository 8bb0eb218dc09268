#include "ssync/masking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ssync/errors.hpp"

namespace ssync {

ThresholdMethod threshold_method_from_string(const std::string& name) {
    if (name == "otsu") return ThresholdMethod::kOtsu;
    if (name == "niblack") return ThresholdMethod::kNiblack;
    if (name == "sauvola") return ThresholdMethod::kSauvola;
    if (name == "adaptive_mean") return ThresholdMethod::kAdaptiveMean;
    throw ConfigError("unknown threshold method " + name);
}

std::string to_string(ThresholdMethod method) {
    switch (method) {
        case ThresholdMethod::kOtsu: return "otsu";
        case ThresholdMethod::kNiblack: return "niblack";
        case ThresholdMethod::kSauvola: return "sauvola";
        case ThresholdMethod::kAdaptiveMean: return "adaptive_mean";
    }
    throw ConfigError("invalid threshold method value");
}

AttentionMap aggregate_subject_maps(
    const std::vector<std::vector<AttentionMap>>& per_layer) {
    if (per_layer.empty()) {
        throw ConfigError("aggregate_subject_maps: no layers");
    }
    const size_t layers = per_layer.size();
    size_t subjects = per_layer[0].size();
    if (subjects == 0) {
        throw ConfigError("aggregate_subject_maps: no subjects");
    }
    const size_t patches = per_layer[0][0].scores.size();
    const int image_id = per_layer[0][0].image_id;

    AttentionMap out;
    out.image_id = image_id;
    out.scores.assign(patches, 0.0);
    for (const auto& layer_maps : per_layer) {
        if (layer_maps.size() != subjects) {
            throw ShapeError("aggregate_subject_maps: ragged subject count");
        }
        for (const auto& map : layer_maps) {
            if (map.scores.size() != patches) {
                throw ShapeError("aggregate_subject_maps: patch count mismatch");
            }
        }
    }
    // Sum over subjects of the per-subject layer means.
    const double inv_layers = 1.0 / static_cast<double>(layers);
    for (size_t s = 0; s < subjects; ++s) {
        for (size_t p = 0; p < patches; ++p) {
            double acc = 0.0;
            for (size_t l = 0; l < layers; ++l) {
                acc += per_layer[l][s].scores[p];
            }
            out.scores[p] += acc * inv_layers;
        }
    }
    out.scores = min_max_rescale(out.scores);
    return out;
}

std::vector<double> min_max_rescale(const std::vector<double>& values) {
    if (values.empty()) return {};
    double lo = values[0];
    double hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<double> out(values.size());
    if (hi == lo) {
        // Zero-variance map: fail open (all-ones) so masking never silently
        // disables attention sharing.
        std::fill(out.begin(), out.end(), 1.0);
        return out;
    }
    const double inv = 1.0 / (hi - lo);
    for (size_t i = 0; i < values.size(); ++i) {
        out[i] = (values[i] - lo) * inv;
    }
    return out;
}

namespace {

int value_bin(double v) {
    const int b = static_cast<int>(v * 256.0);
    return std::clamp(b, 0, 255);
}

void check_unit_range(const std::vector<double>& scores) {
    for (double v : scores) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ShapeError("binarize: map value outside [0, 1]; rescale first");
        }
    }
}

bool all_equal(const std::vector<double>& v) {
    for (double x : v) {
        if (x != v[0]) return false;
    }
    return true;
}

// Window mean and population std over the 3x3 patch neighborhood, clamped
// at the grid border.
void window_stats(const std::vector<double>& v, int h, int w, int r, int c,
                  double* mean, double* stddev) {
    const int r0 = std::max(0, r - 1), r1 = std::min(h - 1, r + 1);
    const int c0 = std::max(0, c - 1), c1 = std::min(w - 1, c + 1);
    double sum = 0.0, sum_sq = 0.0;
    int n = 0;
    for (int rr = r0; rr <= r1; ++rr) {
        for (int cc = c0; cc <= c1; ++cc) {
            const double x = v[static_cast<size_t>(rr) * w + cc];
            sum += x;
            sum_sq += x * x;
            ++n;
        }
    }
    const double m = sum / n;
    *mean = m;
    const double var = std::max(0.0, sum_sq / n - m * m);
    *stddev = std::sqrt(var);
}

} // namespace

int otsu_threshold(const std::vector<int>& histogram) {
    const int bins = static_cast<int>(histogram.size());
    long long total = 0;
    long long weighted_total = 0;
    for (int b = 0; b < bins; ++b) {
        total += histogram[b];
        weighted_total += static_cast<long long>(histogram[b]) * b;
    }
    if (total == 0) throw ConfigError("otsu_threshold: empty histogram");

    int best_t = 0;
    double best_var = -1.0;
    long long w0 = 0;
    long long sum0 = 0;
    for (int t = 0; t < bins; ++t) {
        w0 += histogram[t];
        sum0 += static_cast<long long>(histogram[t]) * t;
        const long long w1 = total - w0;
        double var = 0.0;
        if (w0 > 0 && w1 > 0) {
            const double mu0 = static_cast<double>(sum0) / static_cast<double>(w0);
            const double mu1 = static_cast<double>(weighted_total - sum0) / static_cast<double>(w1);
            var = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
        }
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }
    return best_t;
}

std::vector<uint8_t> otsu_binarize_values(const std::vector<double>& values) {
    std::vector<uint8_t> bits(values.size(), 1);
    if (values.empty() || all_equal(values)) return bits;
    std::vector<int> hist(256, 0);
    for (double v : values) ++hist[value_bin(v)];
    const int t = otsu_threshold(hist);
    for (size_t p = 0; p < values.size(); ++p) {
        bits[p] = value_bin(values[p]) > t ? 1 : 0;
    }
    return bits;
}

SubjectMask binarize(const AttentionMap& map, ThresholdMethod method,
                     int grid_h, int grid_w) {
    if (static_cast<size_t>(grid_h) * grid_w != map.scores.size()) {
        throw ShapeError("binarize: grid does not match map length");
    }
    check_unit_range(map.scores);

    SubjectMask mask;
    mask.image_id = map.image_id;
    if (all_equal(map.scores)) {
        mask.bits.assign(map.scores.size(), 1);
        return mask;
    }
    if (method == ThresholdMethod::kOtsu) {
        mask.bits = otsu_binarize_values(map.scores);
        return mask;
    }

    mask.bits.assign(map.scores.size(), 0);
    for (int r = 0; r < grid_h; ++r) {
        for (int c = 0; c < grid_w; ++c) {
            const size_t p = static_cast<size_t>(r) * grid_w + c;
            double mean, stddev;
            window_stats(map.scores, grid_h, grid_w, r, c, &mean, &stddev);
            double threshold;
            switch (method) {
                case ThresholdMethod::kNiblack:
                    threshold = mean + (-0.2) * stddev;
                    break;
                case ThresholdMethod::kSauvola:
                    threshold = mean * (1.0 + 0.2 * (stddev / 0.5 - 1.0));
                    break;
                default:
                    threshold = mean;
                    break;
            }
            mask.bits[p] = map.scores[p] > threshold ? 1 : 0;
        }
    }
    return mask;
}

AttentionMap upsample_nearest(const AttentionMap& map, int from_h, int from_w,
                              int to_h, int to_w) {
    if (static_cast<size_t>(from_h) * from_w != map.scores.size()) {
        throw ShapeError("upsample_nearest: grid does not match map length");
    }
    AttentionMap out;
    out.image_id = map.image_id;
    out.scores.resize(static_cast<size_t>(to_h) * to_w);
    for (int r = 0; r < to_h; ++r) {
        const int sr = std::min(from_h - 1, r * from_h / to_h);
        for (int c = 0; c < to_w; ++c) {
            const int sc = std::min(from_w - 1, c * from_w / to_w);
            out.scores[static_cast<size_t>(r) * to_w + c] =
                map.scores[static_cast<size_t>(sr) * from_w + sc];
        }
    }
    return out;
}

PropagationMask build_propagation_mask(int image_id,
                                       const std::vector<SubjectMask>& masks) {
    if (masks.empty()) throw ConfigError("build_propagation_mask: empty batch");
    const size_t patches = masks[0].bits.size();
    PropagationMask gamma;
    gamma.image_id = image_id;
    gamma.visible.reserve(masks.size() * patches);
    for (size_t j = 0; j < masks.size(); ++j) {
        if (masks[j].bits.size() != patches) {
            throw ShapeError("build_propagation_mask: mask length mismatch");
        }
        if (static_cast<int>(j) == image_id) {
            // Own-image keys stay fully visible: strict localization to the
            // subject destroys self-attention context.
            gamma.visible.insert(gamma.visible.end(), patches, uint8_t{1});
        } else {
            gamma.visible.insert(gamma.visible.end(), masks[j].bits.begin(),
                                 masks[j].bits.end());
        }
    }
    return gamma;
}

SubjectMask dropout_mask(const SubjectMask& mask, double rate, SplitMix64& stream) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout_mask: rate must be in [0, 1)");
    }
    SubjectMask out = mask;
    if (rate == 0.0) return out;
    for (auto& bit : out.bits) {
        if (bit && stream.next_double() < rate) bit = 0;
    }
    return out;
}

std::string mask_to_pgm(const SubjectMask& mask, int grid_h, int grid_w) {
    if (static_cast<size_t>(grid_h) * grid_w != mask.bits.size()) {
        throw ShapeError("mask_to_pgm: grid does not match mask length");
    }
    char header[64];
    std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n", grid_w, grid_h);
    std::string out(header);
    out.reserve(out.size() + mask.bits.size());
    for (uint8_t b : mask.bits) {
        out.push_back(b ? static_cast<char>(0xff) : '\0');
    }
    return out;
}

} // namespace ssync
