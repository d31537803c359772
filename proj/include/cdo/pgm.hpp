#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cdo/errors.hpp"
#include "cdo/matrix.hpp"

namespace cdo {

/// Writes a [0,1] intensity matrix as binary 8-bit PGM (P5, maxval 255).
/// Values are clamped and quantized with round-half-away.
inline void write_pgm(const std::string& path, const Matrix& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pgm: cannot open " + path);
    out << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
    std::vector<unsigned char> bytes;
    bytes.reserve(image.size());
    for (int r = 0; r < image.rows(); ++r) {
        for (int c = 0; c < image.cols(); ++c) {
            const double v = std::min(1.0, std::max(0.0, image(r, c)));
            bytes.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
        }
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write_pgm: write failed for " + path);
}

/// Min-max normalizes an arbitrary matrix to [0,1] before writing; a
/// constant matrix maps to all zeros.
inline void write_pgm_minmax(const std::string& path, const Matrix& values) {
    double lo = values(0, 0), hi = values(0, 0);
    for (double v : values.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Matrix norm(values.rows(), values.cols());
    if (hi > lo) {
        for (int r = 0; r < values.rows(); ++r) {
            for (int c = 0; c < values.cols(); ++c) {
                norm(r, c) = (values(r, c) - lo) / (hi - lo);
            }
        }
    }
    write_pgm(path, norm);
}

namespace detail {

inline int pgm_next_int(std::basic_istream<char>& in, const std::string& path) {
    // Skip whitespace and '#' comment lines between header tokens.
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    if (ch == EOF || !std::isdigit(ch)) {
        throw FormatError("read_pgm: malformed header in " + path);
    }
    long long value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        if (value > 1'000'000'000LL) throw FormatError("read_pgm: absurd header value in " + path);
        ch = in.get();
    }
    if (ch != EOF) in.unget();
    return static_cast<int>(value);
}

}  // namespace detail

/// Reads a binary P5 PGM with maxval 255; pixel k maps to k/255.
inline Matrix read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_pgm: cannot open " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '5') {
        throw FormatError("read_pgm: not a P5 file: " + path);
    }
    const int width = detail::pgm_next_int(in, path);
    const int height = detail::pgm_next_int(in, path);
    const int maxval = detail::pgm_next_int(in, path);
    if (width <= 0 || height <= 0 || maxval != 255) {
        throw FormatError("read_pgm: unsupported geometry/maxval in " + path);
    }
    in.get();  // single whitespace byte after maxval
    std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw FormatError("read_pgm: truncated pixel data in " + path);
    }
    Matrix image(height, width);
    std::size_t idx = 0;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            image(r, c) = static_cast<double>(bytes[idx++]) / 255.0;
        }
    }
    return image;
}

}  // namespace cdo
