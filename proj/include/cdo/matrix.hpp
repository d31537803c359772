#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdo/errors.hpp"

namespace cdo {

namespace detail {

inline void ensure_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw ValidationError(std::string(what) + ": non-finite entry");
        }
    }
}

}  // namespace detail

/// Dense row-major matrix of doubles. Entries are kept finite: constructors
/// taking data and every producing operation reject NaN/Inf.
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
        if (rows <= 0 || cols <= 0) {
            throw ShapeError("Matrix: dimensions must be positive");
        }
        data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    }

    Matrix(int rows, int cols, std::vector<double> entries)
        : rows_(rows), cols_(cols), data_(std::move(entries)) {
        if (rows <= 0 || cols <= 0) {
            throw ShapeError("Matrix: dimensions must be positive");
        }
        if (data_.size() != static_cast<std::size_t>(rows) * cols) {
            throw ShapeError("Matrix: entry count does not match rows*cols");
        }
        detail::ensure_finite(data_, "Matrix");
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix constant(int rows, int cols, double value) {
        Matrix m(rows, cols);
        if (!std::isfinite(value)) throw ValidationError("Matrix: non-finite fill value");
        for (double& v : m.data_) v = value;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const int r = static_cast<int>(rows.size());
        const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
        Matrix m(r, c);
        int i = 0;
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c) {
                throw ShapeError("Matrix::from_rows: ragged rows");
            }
            int j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        detail::ensure_finite(m.data_, "Matrix::from_rows");
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

/// Product a*b with a fixed left-to-right summation order over the inner
/// dimension, so results are bit-reproducible across runs and platforms.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()) + ")");
    }
    const int m = a.rows(), kk = a.cols(), n = b.cols();
    Matrix out(m, n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    // i-k-j loop order: for each output entry the k terms still accumulate in
    // ascending k, identical to a plain dot product, but row accesses stay
    // contiguous.
    for (int i = 0; i < m; ++i) {
        for (int k = 0; k < kk; ++k) {
            const double aik = pa[static_cast<std::size_t>(i) * kk + k];
            const double* brow = pb + static_cast<std::size_t>(k) * n;
            double* orow = po + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    detail::ensure_finite(out.data(), "matmul");
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    }
    return out;
}

/// Arithmetic mean of all entries, summed in row-major order.
inline double mean_all(const Matrix& a) {
    double sum = 0.0;
    for (double v : a.data()) sum += v;
    return sum / static_cast<double>(a.size());
}

/// Mean of the main diagonal. Requires a square matrix.
inline double mean_diag(const Matrix& a) {
    if (a.rows() != a.cols()) {
        throw ShapeError("mean_diag: matrix is not square");
    }
    double sum = 0.0;
    for (int i = 0; i < a.rows(); ++i) sum += a(i, i);
    return sum / static_cast<double>(a.rows());
}

/// C x H x W tensor of doubles, channel-major storage.
class Tensor3 {
public:
    Tensor3() = default;

    Tensor3(int channels, int height, int width)
        : c_(channels), h_(height), w_(width) {
        if (channels <= 0 || height <= 0 || width <= 0) {
            throw ShapeError("Tensor3: dimensions must be positive");
        }
        data_.assign(static_cast<std::size_t>(channels) * height * width, 0.0);
    }

    Tensor3(int channels, int height, int width, std::vector<double> entries)
        : c_(channels), h_(height), w_(width), data_(std::move(entries)) {
        if (channels <= 0 || height <= 0 || width <= 0) {
            throw ShapeError("Tensor3: dimensions must be positive");
        }
        if (data_.size() != static_cast<std::size_t>(channels) * height * width) {
            throw ShapeError("Tensor3: entry count does not match C*H*W");
        }
        detail::ensure_finite(data_, "Tensor3");
    }

    int channels() const { return c_; }
    int height() const { return h_; }
    int width() const { return w_; }
    std::size_t size() const { return data_.size(); }

    double operator()(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
    }
    double& operator()(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
    }

    /// Channel slice as an H x W matrix.
    Matrix channel(int c) const {
        Matrix m(h_, w_);
        const double* src = data_.data() + static_cast<std::size_t>(c) * h_ * w_;
        std::copy(src, src + static_cast<std::size_t>(h_) * w_, m.data().data());
        return m;
    }

    void set_channel(int c, const Matrix& m) {
        if (m.rows() != h_ || m.cols() != w_) {
            throw ShapeError("Tensor3::set_channel: slice shape mismatch");
        }
        double* dst = data_.data() + static_cast<std::size_t>(c) * h_ * w_;
        std::copy(m.data().begin(), m.data().end(), dst);
    }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    bool operator==(const Tensor3& other) const {
        return c_ == other.c_ && h_ == other.h_ && w_ == other.w_ && data_ == other.data_;
    }

private:
    int c_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<double> data_;
};

}  // namespace cdo
