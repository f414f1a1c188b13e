#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "relnet/errors.hpp"

namespace relnet {

// Row-major dense matrix of doubles. A batch of B feature vectors of width D
// is a [B, D] matrix.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) return Matrix();
        Matrix m(rows.size(), rows[0].size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != m.cols_)
                throw config_error("Matrix::from_rows: ragged rows");
            for (std::size_t j = 0; j < m.cols_; ++j) m(i, j) = rows[i][j];
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_, cols_;
    std::vector<double> data_;
};

// out = a * b, a: [m,k], b: [k,n]
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw config_error("matmul: inner dimensions disagree (" + std::to_string(a.cols()) +
                           " vs " + std::to_string(b.rows()) + ")");
    Matrix out(a.rows(), b.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double s = arow[k];
            if (s == 0.0) continue;
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += s * brow[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

// out = [a | b] row-wise
inline Matrix hconcat(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw config_error("hconcat: row counts disagree");
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ar = a.row(i);
        const double* br = b.row(i);
        double* orw = out.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) orw[j] = ar[j];
        for (std::size_t j = 0; j < b.cols(); ++j) orw[a.cols() + j] = br[j];
    }
    return out;
}

inline void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw config_error("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

inline Matrix vstack(const std::vector<const Matrix*>& parts) {
    if (parts.empty()) return Matrix();
    std::size_t rows = 0, cols = parts[0]->cols();
    for (const Matrix* p : parts) {
        if (p->cols() != cols) throw config_error("vstack: column counts disagree");
        rows += p->rows();
    }
    Matrix out(rows, cols);
    std::size_t at = 0;
    for (const Matrix* p : parts) {
        std::copy(p->data().begin(), p->data().end(), out.data().begin() + at * cols);
        at += p->rows();
    }
    return out;
}

inline Matrix row_block(const Matrix& m, std::size_t start, std::size_t count) {
    if (start + count > m.rows()) throw config_error("row_block: out of range");
    Matrix out(count, m.cols());
    std::copy(m.row(start), m.row(start) + count * m.cols(), out.data().begin());
    return out;
}

} // namespace relnet
