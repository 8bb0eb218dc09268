#include "ssync/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "ssync/errors.hpp"
#include "ssync/parallel.hpp"

namespace ssync {

namespace {

constexpr int kBackgroundTokens = 4;

Matrix draw_matrix(int rows, int cols, double lo, double hi, SplitMix64& stream) {
    Matrix m(rows, cols);
    for (double& x : m.data()) x = stream.uniform(lo, hi);
    return m;
}

std::vector<int> effective_layers(const std::vector<int>& selected, int num_blocks) {
    if (selected.empty()) {
        std::vector<int> all(num_blocks);
        for (int l = 0; l < num_blocks; ++l) all[l] = l;
        return all;
    }
    std::vector<int> out = selected;
    std::sort(out.begin(), out.end());
    return out;
}

Matrix add_project_renorm(const Matrix& x, const Matrix& h, const Matrix& out_proj) {
    Matrix delta = matmul(h, out_proj);
    if (!delta.same_shape(x)) {
        throw ShapeError("block output projection does not match embedding shape");
    }
    for (size_t n = 0; n < delta.data().size(); ++n) {
        delta.data()[n] = x.data()[n] + delta.data()[n];
    }
    return unit_normalize_rows(delta);
}

template <typename F, typename... Args>
void call_hook(const F& fn, Args&&... args) {
    if (!fn) return;
    try {
        fn(std::forward<Args>(args)...);
    } catch (const std::exception& e) {
        throw InvariantError(std::string("hook failed: ") + e.what());
    }
}

void accumulate_stats(PassStats& stats, const std::vector<AttentionMap>& maps,
                      const SyntheticScene& scene) {
    for (size_t s = 0; s < maps.size(); ++s) {
        const auto& bits = scene.planted[s].bits;
        const auto& scores = maps[s].scores;
        for (size_t p = 0; p < scores.size(); ++p) {
            if (bits[p]) {
                stats.planted_score_sum += scores[p];
                ++stats.planted_count;
            } else {
                stats.background_score_sum += scores[p];
                ++stats.background_count;
            }
        }
    }
}

} // namespace

// Stand-in structure for a trained attention block. Query and key share
// one matrix with a gain, so logits follow patch similarity (x W W^T x' is
// a scaled inner product plus noise) the way trained attention does;
// independent random Q/K at the base scale leaves attention near uniform
// and none of the consistency mechanisms has a selective pathway. The
// output projection is a damped transpose of the value projection (its
// role in a trained block; W_v W_v^T is close to a scaled identity), so
// attention moves actual source-patch content into the receiving rows.
constexpr double kQkGain = 10.0;
constexpr double kSelfOutScale = 0.05;
// Weak prompt injection: strong enough to evolve patches with prompt
// content, weak enough not to paint the subject token onto the
// background over all T * L blocks.
constexpr double kCrossOutScale = 0.02;

ToyDenoiser ToyDenoiser::init(const RunConfig& config, SplitMix64& stream) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.embed_dim));
    const int d = config.embed_dim;
    const int dk = config.proj_dim;
    ToyDenoiser net;
    for (int l = 0; l < config.num_blocks; ++l) {
        Block block;
        for (AttentionBlockWeights* w : {&block.cross, &block.self}) {
            const double out_scale =
                (w == &block.cross) ? kCrossOutScale : kSelfOutScale;
            w->qkv.wq = draw_matrix(d, dk, -kQkGain * bound, kQkGain * bound, stream);
            w->qkv.wk = w->qkv.wq;
            w->qkv.wv = draw_matrix(d, dk, -bound, bound, stream);
            w->qkv.head_count = config.num_heads;
            w->out_proj = transpose(w->qkv.wv);
            for (double& x : w->out_proj.data()) x *= out_scale;
        }
        net.blocks_.push_back(std::move(block));
    }
    return net;
}

namespace {

struct SceneBatch {
    PromptSpec prompt;
    std::vector<SyntheticScene> scenes;
};

SceneBatch build_scenes(const RunConfig& cfg, SplitMix64& stream) {
    const int subjects = cfg.num_subjects;
    const int d = cfg.embed_dim;
    const int h = cfg.grid_h;
    const int w = cfg.grid_w;
    const int patches = cfg.patches();

    SceneBatch batch;
    batch.prompt.num_subjects = subjects;
    batch.prompt.tokens = Matrix(subjects + kBackgroundTokens, d);
    for (int row = 0; row < batch.prompt.tokens.rows(); ++row) {
        Matrix token = unit_normalize_rows(draw_matrix(1, d, -1.0, 1.0, stream));
        for (int c = 0; c < d; ++c) batch.prompt.tokens(row, c) = token(0, c);
    }

    for (int i = 0; i < cfg.num_images; ++i) {
        SyntheticScene scene;
        scene.image_id = i;
        Matrix x = draw_matrix(patches, d, -1.0, 1.0, stream);

        scene.planted_union.image_id = i;
        scene.planted_union.bits.assign(patches, 0);
        // Background rows carry no subject-direction component at t = 0;
        // any overlap the raw noise has with a subject direction is
        // projected out below, after the rectangles are placed.
        for (int s = 0; s < subjects; ++s) {
            // Each subject gets its own vertical strip so rectangles stay
            // disjoint across subjects.
            const int strip_lo = s * w / subjects;
            const int strip_hi = (s + 1) * w / subjects;
            const int strip_w = strip_hi - strip_lo;
            const int lo_h = std::max(1, h / 4);
            const int hi_h = std::max(lo_h, h / 2);
            const int lo_w = std::max(1, strip_w / 4);
            const int hi_w = std::max(lo_w, strip_w / 2);
            const int rect_h = lo_h + static_cast<int>(stream.next_below(hi_h - lo_h + 1));
            const int rect_w = lo_w + static_cast<int>(stream.next_below(hi_w - lo_w + 1));
            const int r0 = static_cast<int>(stream.next_below(h - rect_h + 1));
            const int c0 = strip_lo + static_cast<int>(stream.next_below(strip_w - rect_w + 1));

            SubjectMask planted;
            planted.image_id = i;
            planted.bits.assign(patches, 0);
            for (int r = r0; r < r0 + rect_h; ++r) {
                for (int c = c0; c < c0 + rect_w; ++c) {
                    const int p = r * w + c;
                    planted.bits[p] = 1;
                    scene.planted_union.bits[p] = 1;
                    // Inject the subject direction before normalization.
                    for (int k = 0; k < d; ++k) {
                        x(p, k) += cfg.beta * batch.prompt.tokens(s, k);
                    }
                }
            }
            scene.planted.push_back(std::move(planted));
        }
        scene.initial_embeddings = unit_normalize_rows(x);
        batch.scenes.push_back(std::move(scene));
    }
    return batch;
}

} // namespace

Engine::Engine(const RunConfig& config) : config_(config) {
    config_.validate();
    SplitMix64 weight_stream(derive_seed(config_.seed, {seed_tag::kWeights}));
    net_ = ToyDenoiser::init(config_, weight_stream);
    SplitMix64 scene_stream(derive_seed(config_.seed, {seed_tag::kScene}));
    SceneBatch batch = build_scenes(config_, scene_stream);
    prompt_ = std::move(batch.prompt);
    scenes_ = std::move(batch.scenes);
}

BliSchedule Engine::bli_schedule() const {
    BliSchedule schedule;
    schedule.lambda = config_.lambda;
    schedule.window =
        BliSchedule::leading_window(config_.bli_window_fraction, config_.num_timesteps);
    schedule.layers = effective_layers(config_.bli_layers, config_.num_blocks);
    return schedule;
}

std::vector<int> Engine::mask_layer_set() const {
    return effective_layers(config_.mask_layers, config_.num_blocks);
}

std::vector<int> Engine::rfh_layer_set() const {
    return effective_layers(config_.rfh_layers, config_.num_blocks);
}

BatchState Engine::make_state(EmbeddingCache* record_cache,
                              const EmbeddingCache* read_cache) const {
    BatchState state;
    state.record_cache = record_cache;
    state.read_cache = read_cache;
    for (const auto& scene : scenes_) state.x.push_back(scene.initial_embeddings);
    state.current_maps.assign(config_.num_images, {});
    return state;
}

std::vector<AttentionMap> Engine::subject_maps_for(const Matrix& x, int image_id) const {
    // The map path models the trained subject-token/patch correlation of a
    // pretrained network: scores come straight from embedding inner
    // products, not from the random value-path projections. The gain gives
    // the softmax the peakedness a trained cross-attention map has; without
    // it the planted/background contrast stays within a few percent and
    // thresholding rides on noise.
    constexpr double kMapGain = 8.0;
    const double scale = kMapGain / std::sqrt(static_cast<double>(config_.embed_dim));
    std::vector<AttentionMap> maps;
    maps.reserve(prompt_.num_subjects);
    for (int s = 0; s < prompt_.num_subjects; ++s) {
        Matrix logits(1, x.rows());
        for (int p = 0; p < x.rows(); ++p) {
            logits(0, p) = dot(prompt_.tokens.row_span(s), x.row_span(p)) * scale;
        }
        const Matrix weights = softmax_rows(logits);
        AttentionMap map;
        map.image_id = image_id;
        map.scores.assign(weights.data().begin(), weights.data().end());
        maps.push_back(std::move(map));
    }
    return maps;
}

SubjectMask Engine::layer_mask(const BatchState& state, int i) const {
    if (state.current_maps[i].empty()) {
        // Fail open: without usable maps every patch counts as subject, so
        // sharing stays alive rather than silently turning off.
        SubjectMask mask;
        mask.image_id = i;
        mask.bits.assign(config_.patches(), 1);
        return mask;
    }
    return binarize(aggregate_subject_maps(state.current_maps[i]),
                    config_.threshold_method, config_.grid_h, config_.grid_w);
}

void Engine::run_block(BatchState& state, int t, int l, PassMode mode,
                       const StepHooks& hooks) const {
    const int num_images = config_.num_images;
    const bool consistent = mode == PassMode::kConsistent;
    const BliSchedule bli = bli_schedule();
    const std::vector<int> mask_layers = mask_layer_set();
    const std::vector<int> rfh_layers = rfh_layer_set();

    // Cross-attention over the prompt tokens; subject maps are extracted
    // from the block's input embeddings before the update.
    const AttentionBlockWeights& cw = net_.cross(l);
    const Matrix k_prompt = matmul(prompt_.tokens, cw.qkv.wk);
    const Matrix v_prompt = matmul(prompt_.tokens, cw.qkv.wv);
    std::vector<std::vector<AttentionMap>> maps(num_images);
    parallel_for(num_images, [&](int i) {
        maps[i] = subject_maps_for(state.x[i], i);
        const Matrix q = matmul(state.x[i], cw.qkv.wq);
        const Matrix h = self_attention(q, k_prompt, v_prompt, cw.qkv.head_count);
        state.x[i] = add_project_renorm(state.x[i], h, cw.out_proj);
    });
    for (int i = 0; i < num_images; ++i) {
        accumulate_stats(state.stats, maps[i], scenes_[i]);
        call_hook(hooks.on_subject_maps, t, l, i, maps[i]);
    }
    if (consistent &&
        std::binary_search(mask_layers.begin(), mask_layers.end(), l)) {
        for (int i = 0; i < num_images; ++i) {
            state.current_maps[i].push_back(maps[i]);
        }
    }

    // Base layout tap: the vanilla pass records the self-attention input
    // embeddings; the consistent pass blends the cached ones back in.
    if (mode == PassMode::kVanilla && state.record_cache && bli.applies(t, l)) {
        for (int i = 0; i < num_images; ++i) {
            state.record_cache->record(t, l, i, state.x[i]);
        }
    }
    if (consistent && config_.use_bli && bli.applies(t, l)) {
        if (!state.read_cache) {
            throw InvariantError("consistent pass needs a recorded embedding cache");
        }
        parallel_for(num_images, [&](int i) {
            state.x[i] =
                interpolate(state.x[i], state.read_cache->fetch(t, l, i), config_.lambda);
        });
    }

    // Per-layer subject masks, recomputed from this timestep's maps only.
    // With masking ablated every M_i is all-ones (sharing stays on,
    // ungated); the extracted masks still drive artifacts and metrics.
    std::vector<SubjectMask> masks_use(num_images);
    if (consistent) {
        for (int i = 0; i < num_images; ++i) {
            if (config_.use_masks) {
                masks_use[i] = layer_mask(state, i);
            } else {
                masks_use[i].image_id = i;
                masks_use[i].bits.assign(config_.patches(), 1);
            }
        }
        if (config_.use_masks && config_.use_dropouts && config_.dropout_mask > 0.0) {
            for (int i = 0; i < num_images; ++i) {
                SplitMix64 mask_stream(derive_seed(
                    config_.seed, {seed_tag::kMaskDropout, static_cast<uint64_t>(t),
                                   static_cast<uint64_t>(l), static_cast<uint64_t>(i)}));
                masks_use[i] = dropout_mask(masks_use[i], config_.dropout_mask, mask_stream);
            }
        }
        call_hook(hooks.on_layer_masks, t, l, masks_use);
    }

    // Self-attention, cross-image shared when enabled.
    const AttentionBlockWeights& sw = net_.self(l);
    std::vector<Matrix> h(num_images);
    if (!consistent || !config_.use_sharing) {
        parallel_for(num_images, [&](int i) {
            const QkvTriple qkv = project_qkv(state.x[i], sw.qkv);
            h[i] = self_attention(qkv.q, qkv.k, qkv.v, sw.qkv.head_count);
        });
    } else {
        std::vector<Matrix> qs(num_images), ks(num_images), vs(num_images);
        parallel_for(num_images, [&](int i) {
            QkvTriple qkv = project_qkv(state.x[i], sw.qkv);
            qs[i] = std::move(qkv.q);
            ks[i] = std::move(qkv.k);
            vs[i] = std::move(qkv.v);
        });
        const BatchQKV batch = BatchQKV::from_images(std::move(qs), std::move(ks),
                                                     std::move(vs), sw.qkv.head_count);
        std::vector<PropagationMask> gammas;
        gammas.reserve(num_images);
        for (int i = 0; i < num_images; ++i) {
            gammas.push_back(build_propagation_mask(i, masks_use));
        }
        SplitMix64 attn_stream(derive_seed(
            config_.seed, {seed_tag::kAttnDropout, static_cast<uint64_t>(t),
                           static_cast<uint64_t>(l)}));
        const double rate = config_.use_dropouts ? config_.dropout_attn : 0.0;
        if (!config_.subset_images.empty()) {
            h = subset_attention(batch, config_.subset_images, gammas, rate, attn_stream);
        } else {
            h = cross_image_attention(batch, gammas, rate, attn_stream);
        }
    }

    // Regional feature harmonization on the self-attention activations,
    // reading an immutable snapshot of the batch.
    if (consistent && config_.use_rfh && num_images > 1 &&
        std::binary_search(rfh_layers.begin(), rfh_layers.end(), l)) {
        std::vector<RegionFeatures> regions(num_images);
        for (int i = 0; i < num_images; ++i) regions[i] = {i, h[i]};

        std::unique_ptr<std::vector<std::vector<int>>> targets;
        if (!config_.subset_images.empty()) {
            std::vector<int> subset = config_.subset_images;
            std::sort(subset.begin(), subset.end());
            targets = std::make_unique<std::vector<std::vector<int>>>(num_images);
            for (int i = 0; i < num_images; ++i) {
                for (int j : subset) {
                    if (j != i) (*targets)[i].push_back(j);
                }
            }
        }
        const CorrespondenceTable table =
            correspond(regions, masks_use, config_.tau, targets.get());
        call_hook(hooks.on_correspondence, t, l, table);

        const double rfh_rate = config_.use_dropouts ? config_.dropout_rfh : 0.0;
        std::vector<std::vector<HarmonizeRecord>> records(num_images);
        parallel_for(num_images, [&](int i) {
            SplitMix64 rfh_stream(derive_seed(
                config_.seed, {seed_tag::kRfhDropout, static_cast<uint64_t>(t),
                               static_cast<uint64_t>(l), static_cast<uint64_t>(i)}));
            h[i] = harmonize(regions[i], table, regions, config_.gamma, masks_use[i],
                             rfh_rate, rfh_stream,
                             hooks.harmonize_records ? &records[i] : nullptr);
        });
        if (hooks.harmonize_records) {
            for (const auto& r : records) {
                hooks.harmonize_records->insert(hooks.harmonize_records->end(),
                                                r.begin(), r.end());
            }
        }
    }

    parallel_for(num_images, [&](int i) {
        state.x[i] = add_project_renorm(state.x[i], h[i], sw.out_proj);
    });
    call_hook(hooks.on_block_end, t, l, state.x);
}

void Engine::denoise_step(BatchState& state, int t, PassMode mode,
                          const StepHooks& hooks) const {
    if (static_cast<int>(state.x.size()) != config_.num_images) {
        throw ShapeError("denoise_step: state does not match config batch size");
    }
    state.current_maps.assign(config_.num_images, {});
    for (int l = 0; l < config_.num_blocks; ++l) {
        try {
            run_block(state, t, l, mode, hooks);
        } catch (const InvariantError& e) {
            throw InvariantError("pipeline: timestep " + std::to_string(t) + ", layer " +
                                 std::to_string(l) + ": " + e.what());
        }
    }
}

PassOutputs Engine::vanilla_pass(EmbeddingCache* cache, const StepHooks& hooks) const {
    BatchState state = make_state(cache, nullptr);
    for (int t = 0; t < config_.num_timesteps; ++t) {
        denoise_step(state, t, PassMode::kVanilla, hooks);
    }
    PassOutputs out;
    out.final_embeddings = std::move(state.x);
    out.stats = state.stats;
    return out;
}

PassOutputs Engine::consistent_pass(const EmbeddingCache& cache,
                                    const StepHooks& user_hooks) const {
    BatchState state = make_state(nullptr, &cache);
    PassOutputs out;

    CorrespondenceTable last_table;
    StepHooks hooks = user_hooks;
    hooks.on_correspondence = [&](int t, int l, const CorrespondenceTable& table) {
        last_table = table;
        if (user_hooks.on_correspondence) user_hooks.on_correspondence(t, l, table);
    };

    for (int t = 0; t < config_.num_timesteps; ++t) {
        last_table = {};
        denoise_step(state, t, PassMode::kConsistent, hooks);
        std::vector<SubjectMask> step_masks;
        step_masks.reserve(config_.num_images);
        for (int i = 0; i < config_.num_images; ++i) {
            step_masks.push_back(layer_mask(state, i));
        }
        out.masks_per_timestep.push_back(std::move(step_masks));
        out.tables_per_timestep.push_back(last_table);
    }
    out.final_embeddings = std::move(state.x);
    out.stats = state.stats;
    return out;
}

RunResult Engine::run() const {
    EmbeddingCache cache;
    PassOutputs pass1 = vanilla_pass(&cache);
    PassOutputs pass2 = consistent_pass(cache);

    RunResult result;
    result.final_embeddings = std::move(pass2.final_embeddings);
    result.masks_per_timestep = std::move(pass2.masks_per_timestep);
    result.tables_per_timestep = std::move(pass2.tables_per_timestep);
    for (const auto& scene : scenes_) result.planted.push_back(scene.planted_union);
    result.pass1_stats = pass1.stats;
    result.metrics = compute_metrics(result.final_embeddings,
                                     result.masks_per_timestep.back(), result.planted);
    return result;
}

RunResult run(const RunConfig& config) { return Engine(config).run(); }

} // namespace ssync
