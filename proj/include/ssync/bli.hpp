#pragma once

#include <filesystem>
#include <map>
#include <tuple>
#include <vector>

#include "ssync/matrix.hpp"

namespace ssync {

/// Patch embeddings recorded during the vanilla pass, keyed by
/// (timestep, layer, image). Written once in pass 1, read-only in pass 2.
class EmbeddingCache {
public:
    void record(int t, int l, int i, Matrix x);
    const Matrix& fetch(int t, int l, int i) const;
    bool contains(int t, int l, int i) const;
    size_t size() const { return entries_.size(); }

    void save(const std::filesystem::path& dir) const;
    static EmbeddingCache load(const std::filesystem::path& dir);

private:
    std::map<std::tuple<int, int, int>, Matrix> entries_;
};

/// Which timesteps and layers the base-layout blend applies to, and how
/// strongly.
struct BliSchedule {
    double lambda = 0.0;
    std::vector<int> window;
    std::vector<int> layers;

    bool applies(int t, int l) const;

    /// Default window: the first ceil(fraction * total) timesteps, where
    /// layout forms.
    static std::vector<int> leading_window(double fraction, int total_timesteps);
};

/// Elementwise (1 - lambda) * consist + lambda * cached. lambda 0 and 1
/// return the corresponding input bit-identical.
Matrix interpolate(const Matrix& consist, const Matrix& cached, double lambda);

} // namespace ssync
