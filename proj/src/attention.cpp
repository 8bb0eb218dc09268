#include "ssync/attention.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "json.hpp"

#include "ssync/parallel.hpp"
#include "ssync/tensor_io.hpp"

namespace ssync {

void ProjectionWeights::validate() const {
    if (!wq.same_shape(wk) || !wq.same_shape(wv)) {
        throw ShapeError("projection weights must share one shape");
    }
    if (head_count < 1 || wq.cols() % head_count != 0) {
        throw ShapeError("projected dim must be divisible by head count");
    }
}

BatchQKV BatchQKV::from_images(std::vector<Matrix> q, std::vector<Matrix> k,
                               std::vector<Matrix> v, int head_count) {
    if (q.empty() || q.size() != k.size() || q.size() != v.size()) {
        throw ShapeError("BatchQKV: ragged per-image lists");
    }
    BatchQKV batch;
    batch.num_images = static_cast<int>(q.size());
    batch.tokens_per_image = q[0].rows();
    batch.proj_dim = q[0].cols();
    batch.head_count = head_count;
    for (size_t i = 0; i < q.size(); ++i) {
        if (q[i].rows() != batch.tokens_per_image || q[i].cols() != batch.proj_dim ||
            !k[i].same_shape(q[i]) || !v[i].same_shape(q[i])) {
            throw ShapeError("BatchQKV: image " + std::to_string(i) + " shape mismatch");
        }
    }
    batch.k_all = Matrix(batch.num_images * batch.tokens_per_image, batch.proj_dim);
    batch.v_all = Matrix(batch.num_images * batch.tokens_per_image, batch.proj_dim);
    for (int i = 0; i < batch.num_images; ++i) {
        const size_t off = static_cast<size_t>(i) * batch.tokens_per_image * batch.proj_dim;
        std::copy(k[i].data().begin(), k[i].data().end(), batch.k_all.data().begin() + off);
        std::copy(v[i].data().begin(), v[i].data().end(), batch.v_all.data().begin() + off);
    }
    batch.q = std::move(q);
    batch.k = std::move(k);
    batch.v = std::move(v);
    return batch;
}

QkvTriple project_qkv(const Matrix& x, const ProjectionWeights& w) {
    w.validate();
    if (x.cols() != w.wq.rows()) {
        throw ShapeError("project_qkv: embedding dim mismatch");
    }
    return {matmul(x, w.wq), matmul(x, w.wk), matmul(x, w.wv)};
}

namespace {

// Multi-head attention of q against the key/value rows selected by
// key_index (nullptr = all rows). The selected-row computation is exactly
// the masked computation with blocked keys skipped: logit dots, the
// softmax max/sum and the value accumulation all run over the visible
// keys in ascending index order, so results match the dense masked path
// bit for bit while skipping all work on blocked keys.
Matrix attend_selected(const Matrix& q, const Matrix& k, const Matrix& v,
                       int head_count, const std::vector<int>* key_index) {
    if (k.cols() != q.cols() || !k.same_shape(v)) {
        throw ShapeError("attention: Q/K/V projected dims differ");
    }
    if (head_count < 1 || q.cols() % head_count != 0) {
        throw ShapeError("attention: projected dim not divisible by head count");
    }
    const int num_keys = key_index ? static_cast<int>(key_index->size()) : k.rows();
    if (num_keys == 0) {
        throw InvariantError("attention: query row with no visible keys");
    }
    const int head_dim = q.cols() / head_count;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Matrix out(q.rows(), q.cols());
    Matrix qh(q.rows(), head_dim);
    Matrix kt(head_dim, num_keys);
    Matrix vh(num_keys, head_dim);
    for (int h = 0; h < head_count; ++h) {
        const int off = h * head_dim;
        for (int i = 0; i < q.rows(); ++i) {
            const double* qi = q.row(i);
            double* qhi = qh.row(i);
            for (int c = 0; c < head_dim; ++c) qhi[c] = qi[off + c];
        }
        for (int j = 0; j < num_keys; ++j) {
            const int src = key_index ? (*key_index)[j] : j;
            const double* kj = k.row(src);
            const double* vj = v.row(src);
            double* vhj = vh.row(j);
            for (int c = 0; c < head_dim; ++c) {
                kt(c, j) = kj[off + c];
                vhj[c] = vj[off + c];
            }
        }
        Matrix logits = matmul(qh, kt);
        for (double& x : logits.data()) x *= scale;
        const Matrix weights = softmax_rows(logits);
        const Matrix head_out = matmul(weights, vh);
        for (int i = 0; i < q.rows(); ++i) {
            const double* hi = head_out.row(i);
            double* oi = out.row(i);
            for (int c = 0; c < head_dim; ++c) oi[off + c] = hi[c];
        }
    }
    return out;
}

std::vector<int> visible_indices(const std::vector<uint8_t>& vis) {
    std::vector<int> idx;
    idx.reserve(vis.size());
    for (size_t i = 0; i < vis.size(); ++i) {
        if (vis[i]) idx.push_back(static_cast<int>(i));
    }
    return idx;
}

void check_dropout_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("attention dropout rate must be in [0, 1)");
    }
}

} // namespace

Matrix self_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                      int head_count) {
    return attend_selected(q, k, v, head_count, nullptr);
}

std::vector<Matrix> cross_image_attention(const BatchQKV& batch,
                                          const std::vector<PropagationMask>& gammas,
                                          double dropout_rate, SplitMix64& stream) {
    check_dropout_rate(dropout_rate);
    const size_t total_keys =
        static_cast<size_t>(batch.num_images) * batch.tokens_per_image;
    if (gammas.size() != static_cast<size_t>(batch.num_images)) {
        throw ShapeError("cross_image_attention: one propagation mask per image required");
    }
    // Attention-sharing dropout is resolved up front, serially in
    // (image, key) order, so the per-image attention below can run on any
    // number of workers without changing the draws.
    std::vector<std::vector<int>> indices(batch.num_images);
    for (int i = 0; i < batch.num_images; ++i) {
        if (gammas[i].visible.size() != total_keys) {
            throw ShapeError("cross_image_attention: propagation mask length mismatch");
        }
        std::vector<uint8_t> vis = gammas[i].visible;
        if (dropout_rate > 0.0) {
            const size_t own_begin = static_cast<size_t>(i) * batch.tokens_per_image;
            const size_t own_end = own_begin + batch.tokens_per_image;
            for (size_t key = 0; key < total_keys; ++key) {
                if (key >= own_begin && key < own_end) continue;
                if (vis[key] && stream.next_double() < dropout_rate) vis[key] = 0;
            }
        }
        indices[i] = visible_indices(vis);
    }
    std::vector<Matrix> out(batch.num_images);
    parallel_for(batch.num_images, [&](int i) {
        out[i] = attend_selected(batch.q[i], batch.k_all, batch.v_all,
                                 batch.head_count, &indices[i]);
    });
    return out;
}

SubsetKV build_subset_kv(const BatchQKV& batch,
                         const std::vector<SubjectMask>& masks,
                         const std::vector<int>& subset) {
    if (subset.empty()) throw ConfigError("subset must be non-empty");
    std::vector<int> ids = subset;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.front() < 0 || ids.back() >= batch.num_images) {
        throw ConfigError("subset image id out of range");
    }
    SubsetKV cache;
    cache.image_ids = ids;
    cache.tokens_per_image = batch.tokens_per_image;
    cache.k_sub = Matrix(static_cast<int>(ids.size()) * batch.tokens_per_image,
                         batch.proj_dim);
    cache.v_sub = Matrix(cache.k_sub.rows(), batch.proj_dim);
    for (size_t a = 0; a < ids.size(); ++a) {
        const size_t dst = a * batch.tokens_per_image * batch.proj_dim;
        const auto& k = batch.k[ids[a]].data();
        const auto& v = batch.v[ids[a]].data();
        std::copy(k.begin(), k.end(), cache.k_sub.data().begin() + dst);
        std::copy(v.begin(), v.end(), cache.v_sub.data().begin() + dst);
        if (masks.at(ids[a]).bits.size() !=
            static_cast<size_t>(batch.tokens_per_image)) {
            throw ShapeError("build_subset_kv: mask length mismatch");
        }
        cache.masks.push_back(masks.at(ids[a]));
    }
    return cache;
}

void save_subset_kv(const std::filesystem::path& dir, const SubsetKV& cache) {
    std::filesystem::create_directories(dir);
    save_matrix(dir / "k_sub.ssyn", cache.k_sub);
    save_matrix(dir / "v_sub.ssyn", cache.v_sub);
    TensorDump mask_dump;
    mask_dump.dims = {cache.masks.size(),
                      static_cast<uint64_t>(cache.tokens_per_image)};
    for (const auto& m : cache.masks) {
        for (uint8_t b : m.bits) mask_dump.values.push_back(b ? 1.0 : 0.0);
    }
    save_tensor(dir / "masks.ssyn", mask_dump);
    nlohmann::json meta;
    meta["image_ids"] = cache.image_ids;
    meta["tokens_per_image"] = cache.tokens_per_image;
    write_file(dir / "meta.json", meta.dump(2) + "\n");
}

SubsetKV load_subset_kv(const std::filesystem::path& dir) {
    SubsetKV cache;
    cache.k_sub = load_matrix(dir / "k_sub.ssyn");
    cache.v_sub = load_matrix(dir / "v_sub.ssyn");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file(dir / "meta.json"));
        cache.image_ids = meta.at("image_ids").get<std::vector<int>>();
        cache.tokens_per_image = meta.at("tokens_per_image").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("subset cache meta.json: " + std::string(e.what()));
    }
    const TensorDump mask_dump = load_tensor(dir / "masks.ssyn");
    if (mask_dump.dims.size() != 2 ||
        mask_dump.dims[0] != cache.image_ids.size() ||
        mask_dump.dims[1] != static_cast<uint64_t>(cache.tokens_per_image)) {
        throw IoError("subset cache masks.ssyn: unexpected shape");
    }
    for (size_t a = 0; a < cache.image_ids.size(); ++a) {
        SubjectMask m;
        m.image_id = cache.image_ids[a];
        for (int p = 0; p < cache.tokens_per_image; ++p) {
            m.bits.push_back(
                mask_dump.values[a * cache.tokens_per_image + p] != 0.0 ? 1 : 0);
        }
        cache.masks.push_back(std::move(m));
    }
    return cache;
}

std::vector<Matrix> subset_attention(const BatchQKV& batch,
                                     const std::vector<int>& subset,
                                     const std::vector<PropagationMask>& gammas,
                                     double dropout_rate, SplitMix64& stream,
                                     const SubsetKV* cached) {
    check_dropout_rate(dropout_rate);
    if (subset.empty()) throw ConfigError("subset must be non-empty");
    std::vector<int> ids = subset;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.front() < 0 || ids.back() >= batch.num_images) {
        throw ConfigError("subset image id out of range");
    }
    const int tokens = batch.tokens_per_image;
    const std::set<int> member(ids.begin(), ids.end());

    // Subset members attend among themselves: plain cross-image attention
    // on the restricted batch. Their dropout draws come first.
    std::vector<Matrix> sub_q, sub_k, sub_v;
    std::vector<PropagationMask> sub_gammas;
    for (size_t a = 0; a < ids.size(); ++a) {
        sub_q.push_back(batch.q[ids[a]]);
        sub_k.push_back(batch.k[ids[a]]);
        sub_v.push_back(batch.v[ids[a]]);
        PropagationMask g;
        g.image_id = static_cast<int>(a);
        for (int b : ids) {
            const auto& vis = gammas.at(ids[a]).visible;
            g.visible.insert(g.visible.end(), vis.begin() + static_cast<size_t>(b) * tokens,
                             vis.begin() + static_cast<size_t>(b + 1) * tokens);
        }
        sub_gammas.push_back(std::move(g));
    }
    BatchQKV sub_batch = BatchQKV::from_images(std::move(sub_q), std::move(sub_k),
                                               std::move(sub_v), batch.head_count);
    std::vector<Matrix> member_out =
        cross_image_attention(sub_batch, sub_gammas, dropout_rate, stream);

    std::vector<Matrix> out(batch.num_images);
    for (size_t a = 0; a < ids.size(); ++a) out[ids[a]] = std::move(member_out[a]);

    // Non-members: own keys (fully visible) plus subset keys gated by the
    // subset masks, in ascending image order. Dropout applies to the
    // subset segments only.
    struct NonMemberJob {
        int image;
        Matrix keys;
        Matrix values;
        std::vector<int> indices;
    };
    std::vector<NonMemberJob> jobs;
    for (int i = 0; i < batch.num_images; ++i) {
        if (member.count(i)) continue;
        std::vector<int> sources = ids;
        sources.push_back(i);
        std::sort(sources.begin(), sources.end());

        NonMemberJob job;
        job.image = i;
        job.keys = Matrix(static_cast<int>(sources.size()) * tokens, batch.proj_dim);
        job.values = Matrix(job.keys.rows(), batch.proj_dim);
        std::vector<uint8_t> vis;
        vis.reserve(job.keys.rows());
        for (size_t pos = 0; pos < sources.size(); ++pos) {
            const int j = sources[pos];
            const size_t dst = pos * tokens * batch.proj_dim;
            if (j == i) {
                const auto& k = batch.k[i].data();
                const auto& v = batch.v[i].data();
                std::copy(k.begin(), k.end(), job.keys.data().begin() + dst);
                std::copy(v.begin(), v.end(), job.values.data().begin() + dst);
                vis.insert(vis.end(), tokens, uint8_t{1});
            } else {
                const size_t a = static_cast<size_t>(
                    std::lower_bound(ids.begin(), ids.end(), j) - ids.begin());
                if (cached) {
                    const size_t src = a * tokens * batch.proj_dim;
                    std::copy(cached->k_sub.data().begin() + src,
                              cached->k_sub.data().begin() + src + static_cast<size_t>(tokens) * batch.proj_dim,
                              job.keys.data().begin() + dst);
                    std::copy(cached->v_sub.data().begin() + src,
                              cached->v_sub.data().begin() + src + static_cast<size_t>(tokens) * batch.proj_dim,
                              job.values.data().begin() + dst);
                    for (uint8_t b : cached->masks[a].bits) vis.push_back(b);
                } else {
                    const auto& k = batch.k[j].data();
                    const auto& v = batch.v[j].data();
                    std::copy(k.begin(), k.end(), job.keys.data().begin() + dst);
                    std::copy(v.begin(), v.end(), job.values.data().begin() + dst);
                    const auto& g = gammas.at(i).visible;
                    vis.insert(vis.end(), g.begin() + static_cast<size_t>(j) * tokens,
                               g.begin() + static_cast<size_t>(j + 1) * tokens);
                }
            }
        }
        if (dropout_rate > 0.0) {
            for (size_t pos = 0; pos < sources.size(); ++pos) {
                if (sources[pos] == i) continue;
                for (int p = 0; p < tokens; ++p) {
                    auto& bit = vis[pos * tokens + p];
                    if (bit && stream.next_double() < dropout_rate) bit = 0;
                }
            }
        }
        job.indices = visible_indices(vis);
        jobs.push_back(std::move(job));
    }
    parallel_for(static_cast<int>(jobs.size()), [&](int n) {
        const NonMemberJob& job = jobs[n];
        out[job.image] = attend_selected(batch.q[job.image], job.keys, job.values,
                                         batch.head_count, &job.indices);
    });
    return out;
}

} // namespace ssync
