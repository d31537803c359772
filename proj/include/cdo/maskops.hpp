#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cdo/errors.hpp"
#include "cdo/matrix.hpp"

namespace cdo {

struct PolyPoint {
    double row = 0.0;
    double col = 0.0;
    bool operator==(const PolyPoint&) const = default;
};

/// Open polyline in full-resolution image coordinates, ordered by strictly
/// increasing row. thickness is the nominal drawn line width in pixels.
struct Polyline {
    std::vector<PolyPoint> points;
    int thickness = 1;
    bool operator==(const Polyline&) const = default;
};

inline void validate_polyline(const Polyline& line) {
    if (line.points.size() < 2) {
        throw ParamError("Polyline: needs at least 2 points");
    }
    if (line.thickness < 1) {
        throw ParamError("Polyline: thickness must be >= 1");
    }
    for (std::size_t i = 1; i < line.points.size(); ++i) {
        if (!(line.points[i - 1].row < line.points[i].row)) {
            throw ParamError("Polyline: points must have strictly increasing rows");
        }
    }
}

/// Per-lane binary mask. Grid entries are exactly 0 or 1.
struct LaneMask {
    int lane_index = 0;
    Matrix grid;

    LaneMask() = default;
    LaneMask(int index, Matrix g) : lane_index(index), grid(std::move(g)) {
        for (double v : grid.data()) {
            if (v != 0.0 && v != 1.0) {
                throw ValidationError("LaneMask: entries must be exactly 0 or 1");
            }
        }
    }

    int height() const { return grid.rows(); }
    int width() const { return grid.cols(); }
    bool operator==(const LaneMask&) const = default;
};

namespace detail {

// Classic integer Bresenham; plots every pixel of the segment through a
// callback (pixels may fall outside the canvas, the caller clips).
template <typename Plot>
inline void bresenham(long long y0, long long x0, long long y1, long long x1, Plot&& plot) {
    const long long dy = std::llabs(y1 - y0);
    const long long dx = std::llabs(x1 - x0);
    const long long sy = y0 < y1 ? 1 : -1;
    const long long sx = x0 < x1 ? 1 : -1;
    long long err = (dx > dy ? dx : -dy) / 2;
    for (;;) {
        plot(y0, x0);
        if (y0 == y1 && x0 == x1) break;
        const long long e2 = err;
        if (e2 > -dx) {
            err -= dy;
            x0 += sx;
        }
        if (e2 < dy) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace detail

/// Draws the polyline onto a height x width binary mask. Segment endpoints
/// round to the nearest pixel, the Bresenham trace of each segment is then
/// dilated with a square (Chebyshev) structuring element of radius
/// thickness/2. Pixels outside the canvas are clipped.
inline LaneMask rasterize_polyline(const Polyline& line, int height, int width,
                                   int lane_index = 0) {
    validate_polyline(line);
    if (height <= 0 || width <= 0) {
        throw ParamError("rasterize_polyline: canvas dimensions must be positive");
    }
    Matrix grid(height, width);
    const int radius = line.thickness / 2;
    auto stamp = [&](long long y, long long x) {
        const long long r0 = std::max<long long>(y - radius, 0);
        const long long r1 = std::min<long long>(y + radius, height - 1);
        const long long c0 = std::max<long long>(x - radius, 0);
        const long long c1 = std::min<long long>(x + radius, width - 1);
        for (long long r = r0; r <= r1; ++r) {
            for (long long c = c0; c <= c1; ++c) {
                grid(static_cast<int>(r), static_cast<int>(c)) = 1.0;
            }
        }
    };
    for (std::size_t i = 0; i + 1 < line.points.size(); ++i) {
        const long long y0 = std::llround(line.points[i].row);
        const long long x0 = std::llround(line.points[i].col);
        const long long y1 = std::llround(line.points[i + 1].row);
        const long long x1 = std::llround(line.points[i + 1].col);
        detail::bresenham(y0, x0, y1, x1, stamp);
    }
    return LaneMask(lane_index, std::move(grid));
}

/// Nearest-neighbour resize with the index mapping
/// src_index = floor(dst_index * src_dim / dst_dim), clamped to the valid
/// range. Output entries remain exactly 0 or 1.
inline LaneMask resize_nearest(const LaneMask& mask, int new_h, int new_w) {
    if (new_h <= 0 || new_w <= 0) {
        throw ParamError("resize_nearest: target dimensions must be positive");
    }
    const int src_h = mask.height(), src_w = mask.width();
    Matrix out(new_h, new_w);
    for (int i = 0; i < new_h; ++i) {
        const int si = std::min(static_cast<int>(static_cast<std::int64_t>(i) * src_h / new_h),
                                src_h - 1);
        for (int j = 0; j < new_w; ++j) {
            const int sj = std::min(static_cast<int>(static_cast<std::int64_t>(j) * src_w / new_w),
                                    src_w - 1);
            out(i, j) = mask.grid(si, sj);
        }
    }
    return LaneMask(mask.lane_index, std::move(out));
}

/// True iff every entry is 0; this defines exist(n) = 0 for the mask.
inline bool mask_is_empty(const LaneMask& mask) {
    for (double v : mask.grid.data()) {
        if (v != 0.0) return false;
    }
    return true;
}

/// Per-lane existence bits; bit n is 1 iff lane slot n is present.
using ExistenceVector = std::vector<int>;

}  // namespace cdo
