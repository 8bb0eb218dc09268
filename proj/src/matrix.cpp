#include "ssync/matrix.hpp"

#include <cmath>
#include <string>

namespace ssync {

Matrix::Matrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) {
        throw ShapeError("matrix dimensions must be non-negative");
    }
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n, 0.0);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

int AdditiveMask::visible_count() const {
    int n = 0;
    for (uint8_t v : visible) n += (v != 0);
    return n;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()) + ")");
    }
    Matrix c(a.rows(), b.cols(), 0.0);
    const int k_dim = a.cols();
    const int m = b.cols();
    for (int i = 0; i < a.rows(); ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (int k = 0; k < k_dim; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (int j = 0; j < m; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            t(j, i) = m(i, j);
        }
    }
    return t;
}

Matrix masked_row_softmax(const Matrix& logits, const AdditiveMask& mask) {
    if (mask.size() != static_cast<size_t>(logits.cols())) {
        throw ShapeError("masked_row_softmax: mask length " + std::to_string(mask.size()) +
                         " does not match " + std::to_string(logits.cols()) + " columns");
    }
    Matrix out(logits.rows(), logits.cols(), 0.0);
    const int n = logits.cols();
    for (int i = 0; i < logits.rows(); ++i) {
        const double* li = logits.row(i);
        double max_val = -HUGE_VAL;
        bool any = false;
        for (int j = 0; j < n; ++j) {
            if (mask.visible[j] && (!any || li[j] > max_val)) {
                max_val = li[j];
                any = true;
            }
        }
        if (!any) {
            throw InvariantError("masked_row_softmax: row " + std::to_string(i) +
                                 " has no visible entries");
        }
        double* oi = out.row(i);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            if (mask.visible[j]) {
                const double e = std::exp(li[j] - max_val);
                oi[j] = e;
                sum += e;
            }
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) {
            if (mask.visible[j]) oi[j] *= inv;
        }
    }
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols(), 0.0);
    const int n = logits.cols();
    if (n == 0) throw ShapeError("softmax_rows: zero columns");
    for (int i = 0; i < logits.rows(); ++i) {
        const double* li = logits.row(i);
        double max_val = li[0];
        for (int j = 1; j < n; ++j) {
            if (li[j] > max_val) max_val = li[j];
        }
        double* oi = out.row(i);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            const double e = std::exp(li[j] - max_val);
            oi[j] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) oi[j] *= inv;
    }
    return out;
}

Matrix unit_normalize_rows(const Matrix& m) {
    Matrix out = m;
    for (int i = 0; i < m.rows(); ++i) {
        const double norm = l2_norm(m.row_span(i));
        if (norm == 0.0) {
            throw InvariantError("unit_normalize_rows: zero row " + std::to_string(i));
        }
        double* oi = out.row(i);
        const double inv = 1.0 / norm;
        for (int j = 0; j < m.cols(); ++j) oi[j] *= inv;
    }
    return out;
}

double dot(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw ShapeError("dot: length mismatch");
    }
    double s = 0.0;
    for (size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double cosine(std::span<const double> u, std::span<const double> v) {
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    if (nu == 0.0 || nv == 0.0) {
        throw InvariantError("cosine: zero vector");
    }
    const double c = dot(u, v) / (nu * nv);
    // Clamp rounding spill so downstream acos/metrics stay in range.
    if (c > 1.0) return 1.0;
    if (c < -1.0) return -1.0;
    return c;
}

} // namespace ssync
