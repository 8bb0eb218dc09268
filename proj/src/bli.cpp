#include "ssync/bli.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "json.hpp"

#include "ssync/errors.hpp"
#include "ssync/tensor_io.hpp"

namespace ssync {

namespace {

std::string key_name(int t, int l, int i) {
    return "t" + std::to_string(t) + "_l" + std::to_string(l) + "_img" +
           std::to_string(i);
}

} // namespace

void EmbeddingCache::record(int t, int l, int i, Matrix x) {
    const auto key = std::make_tuple(t, l, i);
    if (entries_.count(key)) {
        throw InvariantError("embedding cache: duplicate entry " + key_name(t, l, i));
    }
    entries_.emplace(key, std::move(x));
}

const Matrix& EmbeddingCache::fetch(int t, int l, int i) const {
    const auto it = entries_.find(std::make_tuple(t, l, i));
    if (it == entries_.end()) {
        throw InvariantError("embedding cache: missing entry " + key_name(t, l, i));
    }
    return it->second;
}

bool EmbeddingCache::contains(int t, int l, int i) const {
    return entries_.count(std::make_tuple(t, l, i)) != 0;
}

void EmbeddingCache::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [key, matrix] : entries_) {
        const auto [t, l, i] = key;
        const std::string name = key_name(t, l, i) + ".ssyn";
        save_matrix(dir / name, matrix);
        manifest.push_back({{"t", t}, {"l", l}, {"i", i}, {"file", name}});
    }
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

EmbeddingCache EmbeddingCache::load(const std::filesystem::path& dir) {
    EmbeddingCache cache;
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
        for (const auto& entry : manifest) {
            cache.record(entry.at("t").get<int>(), entry.at("l").get<int>(),
                         entry.at("i").get<int>(),
                         load_matrix(dir / entry.at("file").get<std::string>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("embedding cache manifest: " + std::string(e.what()));
    }
    return cache;
}

bool BliSchedule::applies(int t, int l) const {
    return std::find(window.begin(), window.end(), t) != window.end() &&
           std::find(layers.begin(), layers.end(), l) != layers.end();
}

std::vector<int> BliSchedule::leading_window(double fraction, int total_timesteps) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw ConfigError("bli window fraction must be in [0, 1]");
    }
    const int count = std::min(
        total_timesteps,
        static_cast<int>(std::ceil(fraction * static_cast<double>(total_timesteps))));
    std::vector<int> window(count);
    for (int t = 0; t < count; ++t) window[t] = t;
    return window;
}

Matrix interpolate(const Matrix& consist, const Matrix& cached, double lambda) {
    if (!consist.same_shape(cached)) {
        throw ShapeError("interpolate: shape mismatch");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("interpolate: lambda must be in [0, 1]");
    }
    if (lambda == 0.0) return consist;
    if (lambda == 1.0) return cached;
    Matrix out(consist.rows(), consist.cols());
    const double keep = 1.0 - lambda;
    for (size_t n = 0; n < out.data().size(); ++n) {
        out.data()[n] = keep * consist.data()[n] + lambda * cached.data()[n];
    }
    return out;
}

} // namespace ssync
