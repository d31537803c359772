#pragma once

// Test-side reference implementations. These stay independent of the
// library's computation paths: plain triple loops, no shared helpers.

#include <vector>

#include "cdo/maskops.hpp"
#include "cdo/matrix.hpp"
#include "cdo/rng.hpp"

namespace oracle {

inline cdo::Matrix naive_matmul(const cdo::Matrix& a, const cdo::Matrix& b) {
    cdo::Matrix out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

// Row-against-row dot products, straight from the definition.
inline cdo::Matrix naive_cov_horizontal(const cdo::Matrix& s, const cdo::Matrix& m) {
    cdo::Matrix out(s.rows(), s.rows());
    for (int i = 0; i < s.rows(); ++i) {
        for (int j = 0; j < s.rows(); ++j) {
            double acc = 0.0;
            for (int k = 0; k < s.cols(); ++k) acc += s(i, k) * m(j, k);
            out(i, j) = acc;
        }
    }
    return out;
}

// Column-against-column dot products.
inline cdo::Matrix naive_cov_vertical(const cdo::Matrix& s, const cdo::Matrix& m) {
    cdo::Matrix out(s.cols(), s.cols());
    for (int i = 0; i < s.cols(); ++i) {
        for (int j = 0; j < s.cols(); ++j) {
            double acc = 0.0;
            for (int k = 0; k < s.rows(); ++k) acc += s(k, i) * m(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

inline cdo::Matrix random_matrix(cdo::SeededRng& rng, int rows, int cols, double lo = -1.0,
                                 double hi = 1.0) {
    cdo::Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
    }
    return m;
}

inline cdo::Matrix random_binary_matrix(cdo::SeededRng& rng, int rows, int cols,
                                        double density = 0.3) {
    cdo::Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(0.0, 1.0) < density ? 1.0 : 0.0;
    }
    return m;
}

inline cdo::Tensor3 random_tensor(cdo::SeededRng& rng, int c, int h, int w, double lo,
                                  double hi) {
    cdo::Tensor3 t(c, h, w);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline double max_abs_diff(const cdo::Matrix& a, const cdo::Matrix& b) {
    double worst = 0.0;
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
            worst = std::max(worst, std::fabs(a(i, j) - b(i, j)));
        }
    }
    return worst;
}

}  // namespace oracle
