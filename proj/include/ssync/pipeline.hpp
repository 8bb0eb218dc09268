#pragma once

#include <functional>
#include <vector>

#include "ssync/attention.hpp"
#include "ssync/bli.hpp"
#include "ssync/config.hpp"
#include "ssync/masking.hpp"
#include "ssync/matrix.hpp"
#include "ssync/metrics.hpp"
#include "ssync/rfh.hpp"
#include "ssync/rng.hpp"

namespace ssync {

enum class PassMode { kVanilla, kConsistent };

/// One image's starting point: unit-normalized patch embeddings on the
/// h x w grid with the subject direction injected into planted
/// rectangles, plus the ground-truth masks for those rectangles.
struct SyntheticScene {
    int image_id = -1;
    Matrix initial_embeddings;
    std::vector<SubjectMask> planted;
    SubjectMask planted_union;
};

/// Prompt tokens shared across the batch. Rows [0, num_subjects) hold the
/// subject directions; the remaining rows are background tokens.
struct PromptSpec {
    Matrix tokens;
    int num_subjects = 1;
};

struct AttentionBlockWeights {
    ProjectionWeights qkv;
    Matrix out_proj;
};

/// L blocks of (prompt cross-attention, self-attention, row
/// renormalization); stands in for a pretrained denoising network. All
/// weights come from the seeded stream, uniform in [-1/sqrt(d), 1/sqrt(d)].
class ToyDenoiser {
public:
    static ToyDenoiser init(const RunConfig& config, SplitMix64& stream);

    int num_blocks() const { return static_cast<int>(blocks_.size()); }
    const AttentionBlockWeights& cross(int l) const { return blocks_[l].cross; }
    const AttentionBlockWeights& self(int l) const { return blocks_[l].self; }

private:
    struct Block {
        AttentionBlockWeights cross;
        AttentionBlockWeights self;
    };
    std::vector<Block> blocks_;
};

/// Per-subject attention-score means over planted vs non-planted patches,
/// accumulated across a pass's cross-attention layers.
struct PassStats {
    double planted_score_sum = 0.0;
    long long planted_count = 0;
    double background_score_sum = 0.0;
    long long background_count = 0;

    double planted_mean() const {
        return planted_count ? planted_score_sum / static_cast<double>(planted_count) : 0.0;
    }
    double background_mean() const {
        return background_count ? background_score_sum / static_cast<double>(background_count) : 0.0;
    }
};

/// Observation callbacks; any exception thrown by a hook is rethrown with
/// timestep/layer context attached.
struct StepHooks {
    std::function<void(int t, int l, int image, const std::vector<AttentionMap>&)>
        on_subject_maps;
    std::function<void(int t, int l, const std::vector<SubjectMask>&)> on_layer_masks;
    std::function<void(int t, int l, const CorrespondenceTable&)> on_correspondence;
    std::function<void(int t, int l, const std::vector<Matrix>&)> on_block_end;
    std::vector<HarmonizeRecord>* harmonize_records = nullptr;
};

/// Mutable per-pass state threaded through denoise_step.
struct BatchState {
    std::vector<Matrix> x;
    // Subject maps of the current timestep, per image, one entry per
    // mask-feeding layer processed so far.
    std::vector<std::vector<std::vector<AttentionMap>>> current_maps;
    EmbeddingCache* record_cache = nullptr;
    const EmbeddingCache* read_cache = nullptr;
    PassStats stats;
};

struct PassOutputs {
    std::vector<Matrix> final_embeddings;
    std::vector<std::vector<SubjectMask>> masks_per_timestep;
    std::vector<CorrespondenceTable> tables_per_timestep;
    PassStats stats;
};

struct RunResult {
    std::vector<Matrix> final_embeddings;
    std::vector<std::vector<SubjectMask>> masks_per_timestep;
    std::vector<CorrespondenceTable> tables_per_timestep;
    std::vector<SubjectMask> planted;
    MetricReport metrics;
    PassStats pass1_stats;
};

/// Builds scenes, prompt and denoiser weights from the config seed and
/// drives the two-pass procedure: vanilla denoising with embedding
/// caching, then the consistency-enhanced pass.
class Engine {
public:
    explicit Engine(const RunConfig& config);

    const RunConfig& config() const { return config_; }
    const std::vector<SyntheticScene>& scenes() const { return scenes_; }
    const PromptSpec& prompt() const { return prompt_; }
    const ToyDenoiser& denoiser() const { return net_; }
    BliSchedule bli_schedule() const;
    std::vector<int> mask_layer_set() const;
    std::vector<int> rfh_layer_set() const;

    BatchState make_state(EmbeddingCache* record_cache,
                          const EmbeddingCache* read_cache) const;

    /// Runs all blocks of one timestep. Vanilla mode records embeddings
    /// into the state's cache; consistent mode recomputes subject masks
    /// from the current timestep's maps and applies sharing, RFH and BLI
    /// per the config toggles.
    void denoise_step(BatchState& state, int t, PassMode mode,
                      const StepHooks& hooks) const;

    PassOutputs vanilla_pass(EmbeddingCache* cache,
                             const StepHooks& hooks = {}) const;
    PassOutputs consistent_pass(const EmbeddingCache& cache,
                                const StepHooks& hooks = {}) const;
    RunResult run() const;

private:
    void run_block(BatchState& state, int t, int l, PassMode mode,
                   const StepHooks& hooks) const;
    SubjectMask layer_mask(const BatchState& state, int i) const;
    std::vector<AttentionMap> subject_maps_for(const Matrix& x, int image_id) const;

    RunConfig config_;
    PromptSpec prompt_;
    std::vector<SyntheticScene> scenes_;
    ToyDenoiser net_;
};

RunResult run(const RunConfig& config);

} // namespace ssync
