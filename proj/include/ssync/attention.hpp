#pragma once

#include <filesystem>
#include <vector>

#include "ssync/masking.hpp"
#include "ssync/matrix.hpp"
#include "ssync/rng.hpp"

namespace ssync {

/// Q/K/V projection weights for one attention block, d x d_k each, plus
/// the head count the projected space splits into.
struct ProjectionWeights {
    Matrix wq;
    Matrix wk;
    Matrix wv;
    int head_count = 1;

    int proj_dim() const { return wq.cols(); }
    int head_dim() const { return wq.cols() / head_count; }
    void validate() const;
};

/// Per-image Q/K/V of one self-attention layer plus the stacked batch
/// views (keys/values concatenated in image order).
struct BatchQKV {
    int num_images = 0;
    int tokens_per_image = 0;
    int proj_dim = 0;
    int head_count = 1;
    std::vector<Matrix> q;
    std::vector<Matrix> k;
    std::vector<Matrix> v;
    Matrix k_all;
    Matrix v_all;

    static BatchQKV from_images(std::vector<Matrix> q, std::vector<Matrix> k,
                                std::vector<Matrix> v, int head_count);
};

struct QkvTriple {
    Matrix q;
    Matrix k;
    Matrix v;
};

/// Q = X Wq, K = X Wk, V = X Wv.
QkvTriple project_qkv(const Matrix& x, const ProjectionWeights& w);

/// Standard multi-head attention of q against (k, v): per head,
/// softmax(Q_h K_h^T / sqrt(head_dim)) V_h, heads concatenated.
Matrix self_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                      int head_count);

/// Masked cross-image attention: each image's queries attend to the
/// stacked batch keys gated by its propagation mask. With dropout_rate > 0
/// the visible cross-image keys are additionally dropped per
/// (query image, key patch) pair; own-image keys are never dropped, so no
/// row can become fully blocked. Blocked keys get weight exactly 0 and
/// their values cannot influence any output.
std::vector<Matrix> cross_image_attention(const BatchQKV& batch,
                                          const std::vector<PropagationMask>& gammas,
                                          double dropout_rate, SplitMix64& stream);

/// Reference-subset keys/values (stacked over the subset images, in
/// ascending image order) plus the masks gating them.
struct SubsetKV {
    std::vector<int> image_ids;
    int tokens_per_image = 0;
    Matrix k_sub;
    Matrix v_sub;
    std::vector<SubjectMask> masks;
};

SubsetKV build_subset_kv(const BatchQKV& batch,
                         const std::vector<SubjectMask>& masks,
                         const std::vector<int>& subset);

void save_subset_kv(const std::filesystem::path& dir, const SubsetKV& cache);
SubsetKV load_subset_kv(const std::filesystem::path& dir);

/// Scalable variant: subset images run cross-image attention among
/// themselves; every other image attends to its own keys (fully visible)
/// plus the subset keys gated by the subset masks. When `cached` is given
/// its K/V/masks stand in for the subset segments.
std::vector<Matrix> subset_attention(const BatchQKV& batch,
                                     const std::vector<int>& subset,
                                     const std::vector<PropagationMask>& gammas,
                                     double dropout_rate, SplitMix64& stream,
                                     const SubsetKV* cached = nullptr);

} // namespace ssync
