// Temporary calibration harness (not part of the deliverable).
#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "ssync/config.hpp"
#include "ssync/metrics.hpp"
#include "ssync/pipeline.hpp"

using namespace ssync;
using clk = std::chrono::steady_clock;

int main(int argc, char** argv) {
    const int seeds = argc > 1 ? std::atoi(argv[1]) : 3;
    double sc_full = 0, sc_off = 0, sc_g5 = 0, sc_g7 = 0;
    double ld_full = 0, ld_nopv = 0, iou = 0, sc_nopv = 0;
    auto t0 = clk::now();
    for (int s = 0; s < seeds; ++s) {
        RunConfig base;
        base.seed = 1000 + s;
        Engine eng(base);
        EmbeddingCache cache;
        eng.vanilla_pass(&cache);
        std::vector<SubjectMask> planted;
        for (const auto& sc : eng.scenes()) planted.push_back(sc.planted_union);

        std::vector<SubjectMask> full_masks, nopv_masks;
        auto eval_masks = [&](const RunConfig& cfg, std::vector<SubjectMask>* keep) {
            Engine e(cfg);
            PassOutputs p2 = e.consistent_pass(cache);
            if (keep) *keep = p2.masks_per_timestep.back();
            return compute_metrics(p2.final_embeddings, p2.masks_per_timestep.back(),
                                   planted);
        };
        auto eval = [&](const RunConfig& cfg) { return eval_masks(cfg, nullptr); };
        MetricReport full = eval_masks(base, &full_masks);
        RunConfig off = base;
        off.use_masks = off.use_sharing = off.use_rfh = off.use_bli = off.use_dropouts = false;
        std::vector<SubjectMask> off_masks;
        MetricReport moff = eval_masks(off, &off_masks);
        double area_off = 0, iou_off = 0;
        for (size_t i = 0; i < off_masks.size(); ++i) {
            area_off += off_masks[i].popcount();
            iou_off += mask_iou(off_masks[i], planted[i]);
        }
        std::printf("  off masks: area=%.1f iou_vs_planted=%.3f\n",
                    area_off / off_masks.size(), iou_off / off_masks.size());
        RunConfig nopv = base;
        nopv.use_bli = nopv.use_dropouts = false;
        MetricReport mnopv = eval_masks(nopv, &nopv_masks);
        double area_full = 0, area_nopv = 0, cross_iou = 0, area_planted = 0;
        for (size_t i = 0; i < full_masks.size(); ++i) {
            area_full += full_masks[i].popcount();
            area_nopv += nopv_masks[i].popcount();
            area_planted += planted[i].popcount();
            cross_iou += mask_iou(full_masks[i], nopv_masks[i]);
        }
        const double ni = full_masks.size();
        std::printf("  masks: area full=%.1f nopv=%.1f planted=%.1f cross_iou=%.3f\n",
                    area_full / ni, area_nopv / ni, area_planted / ni, cross_iou / ni);
        RunConfig g5 = base; g5.gamma = 0.5;
        RunConfig g7 = base; g7.gamma = 0.7;
        MetricReport m5 = eval(g5);
        MetricReport m7 = eval(g7);

        sc_full += full.subject_consistency; ld_full += full.layout_diversity;
        sc_off += moff.subject_consistency;
        sc_nopv += mnopv.subject_consistency; ld_nopv += mnopv.layout_diversity;
        sc_g5 += m5.subject_consistency; sc_g7 += m7.subject_consistency;
        iou += full.mask_iou_vs_planted;
        std::printf("seed %d: full sc=%.6f ld=%.6f iou=%.4f | off sc=%.6f | nopv sc=%.6f ld=%.6f | g5=%.6f g7=%.6f\n",
                    s, full.subject_consistency, full.layout_diversity,
                    full.mask_iou_vs_planted, moff.subject_consistency,
                    mnopv.subject_consistency, mnopv.layout_diversity,
                    m5.subject_consistency, m7.subject_consistency);
    }
    const double n = seeds;
    std::printf("MEAN: full sc=%.6f ld=%.6f iou=%.4f | off sc=%.6f | nopv sc=%.6f ld=%.6f | g3<g5<g7: %.6f %.6f %.6f\n",
                sc_full / n, ld_full / n, iou / n, sc_off / n, sc_nopv / n,
                ld_nopv / n, sc_full / n, sc_g5 / n, sc_g7 / n);
    std::printf("elapsed %.1fs\n", std::chrono::duration<double>(clk::now() - t0).count());
    return 0;
}
