#include "ssync/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ssync/errors.hpp"

namespace ssync {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'Y', 'N'};
constexpr uint32_t kVersion = 1;

void append_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32(std::span<const unsigned char> bytes, size_t at) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[at + i]) << (8 * i);
    return v;
}

uint64_t read_u64(std::span<const unsigned char> bytes, size_t at) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[at + i]) << (8 * i);
    return v;
}

} // namespace

std::string encode_tensor(const TensorDump& tensor) {
    if (tensor.element_count() != tensor.values.size()) {
        throw ShapeError("encode_tensor: payload does not match dims product");
    }
    std::string out;
    out.reserve(16 + 8 * tensor.dims.size() + 8 * tensor.values.size());
    out.append(kMagic, 4);
    append_u32(out, kVersion);
    append_u32(out, static_cast<uint32_t>(tensor.dims.size()));
    for (uint64_t d : tensor.dims) append_u64(out, d);
    for (double x : tensor.values) append_u64(out, std::bit_cast<uint64_t>(x));
    return out;
}

TensorDump decode_tensor(std::span<const unsigned char> bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw IoError("tensor dump: bad magic");
    }
    if (read_u32(bytes, 4) != kVersion) {
        throw IoError("tensor dump: unsupported version");
    }
    const uint32_t rank = read_u32(bytes, 8);
    size_t at = 12;
    if (bytes.size() < at + 8ull * rank) throw IoError("tensor dump: truncated dims");
    TensorDump tensor;
    tensor.dims.resize(rank);
    for (uint32_t i = 0; i < rank; ++i, at += 8) tensor.dims[i] = read_u64(bytes, at);
    const uint64_t count = tensor.element_count();
    if (bytes.size() != at + 8 * count) throw IoError("tensor dump: truncated payload");
    tensor.values.resize(count);
    for (uint64_t i = 0; i < count; ++i, at += 8) {
        tensor.values[i] = std::bit_cast<double>(read_u64(bytes, at));
    }
    return tensor;
}

void save_tensor(const std::filesystem::path& path, const TensorDump& tensor) {
    write_file(path, encode_tensor(tensor));
}

TensorDump load_tensor(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    return decode_tensor(
        {reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
    TensorDump t;
    t.dims = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
    t.values = m.data();
    save_tensor(path, t);
}

Matrix load_matrix(const std::filesystem::path& path) {
    const TensorDump t = load_tensor(path);
    if (t.dims.size() != 2) throw IoError("load_matrix: expected rank-2 tensor");
    Matrix m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
    m.data() = t.values;
    return m;
}

TensorDump stack_matrices(const std::vector<Matrix>& mats) {
    if (mats.empty()) throw ShapeError("stack_matrices: empty batch");
    TensorDump t;
    t.dims = {static_cast<uint64_t>(mats.size()),
              static_cast<uint64_t>(mats[0].rows()),
              static_cast<uint64_t>(mats[0].cols())};
    t.values.reserve(t.element_count());
    for (const Matrix& m : mats) {
        if (!m.same_shape(mats[0])) throw ShapeError("stack_matrices: ragged shapes");
        t.values.insert(t.values.end(), m.data().begin(), m.data().end());
    }
    return t;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    return bytes;
}

} // namespace ssync
