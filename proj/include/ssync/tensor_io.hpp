#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ssync/matrix.hpp"

namespace ssync {

/// Raw tensor dump (.ssyn): magic "SSYN", u32 LE version (1), u32 LE rank,
/// rank x u64 LE dims, then row-major IEEE-754 binary64 payload, little
/// endian. Round-trips are lossless.
struct TensorDump {
    std::vector<uint64_t> dims;
    std::vector<double> values;

    uint64_t element_count() const {
        uint64_t n = 1;
        for (uint64_t d : dims) n *= d;
        return n;
    }
};

std::string encode_tensor(const TensorDump& tensor);
TensorDump decode_tensor(std::span<const unsigned char> bytes);

void save_tensor(const std::filesystem::path& path, const TensorDump& tensor);
TensorDump load_tensor(const std::filesystem::path& path);

/// rank-2 convenience wrappers.
void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

/// Stacks equal-shaped per-image matrices into a rank-3 [N, rows, cols]
/// dump.
TensorDump stack_matrices(const std::vector<Matrix>& mats);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

} // namespace ssync
