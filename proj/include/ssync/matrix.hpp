#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssync/errors.hpp"

namespace ssync {

/// Dense row-major matrix of 64-bit reals. All tensors in the engine are
/// desk-scale, so double precision everywhere and no BLAS.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(int rows, int cols, double fill = 0.0);

    static Matrix identity(int n);

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    double* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
    const double* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }
    std::span<const double> row_span(int r) const { return {row(r), static_cast<size_t>(cols_)}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool operator==(const Matrix& other) const {
        return same_shape(other) && data_ == other.data_;
    }

private:
    int rows_;
    int cols_;
    std::vector<double> data_;
};

/// Per-row key visibility for masked attention: 1 = attend, 0 = blocked.
/// Realizes the log-mask term of masked softmax; blocked entries are
/// skipped outright so their weights come out exactly zero.
struct AdditiveMask {
    std::vector<uint8_t> visible;

    AdditiveMask() = default;
    explicit AdditiveMask(std::vector<uint8_t> v) : visible(std::move(v)) {}
    static AdditiveMask all_visible(int n) {
        return AdditiveMask(std::vector<uint8_t>(static_cast<size_t>(n), 1));
    }

    size_t size() const { return visible.size(); }
    int visible_count() const;
};

/// c = a * b. Accumulation over the inner dimension is in ascending index
/// order for every output element (reproducibility contract).
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

/// Row-wise softmax with hard masking: blocked columns are excluded from
/// the max and the sum and receive weight exactly 0.0. Throws
/// InvariantError on a fully blocked row. Max-subtraction stabilized.
Matrix masked_row_softmax(const Matrix& logits, const AdditiveMask& mask);

/// Plain row-wise softmax (all columns visible).
Matrix softmax_rows(const Matrix& logits);

/// Scales every row to unit L2 norm. Throws InvariantError on a zero row.
Matrix unit_normalize_rows(const Matrix& m);

double dot(std::span<const double> u, std::span<const double> v);
double l2_norm(std::span<const double> v);

/// Normalized inner product, in [-1, 1]. Throws InvariantError if either
/// vector is zero.
double cosine(std::span<const double> u, std::span<const double> v);

} // namespace ssync
