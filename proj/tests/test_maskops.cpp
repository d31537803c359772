#include <catch2/catch_amalgamated.hpp>

#include "cdo/maskops.hpp"
#include "cdo/rng.hpp"

using cdo::LaneMask;
using cdo::Matrix;
using cdo::Polyline;

TEST_CASE("vertical line thickness 1 hits one pixel per row") {
    Polyline line{{{0.0, 5.0}, {9.0, 5.0}}, 1};
    const LaneMask mask = cdo::rasterize_polyline(line, 10, 10);
    for (int r = 0; r < 10; ++r) {
        for (int c = 0; c < 10; ++c) {
            CHECK(mask.grid(r, c) == (c == 5 ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("line fully outside the frame leaves the mask empty") {
    Polyline line{{{0.0, 50.0}, {9.0, 60.0}}, 3};
    const LaneMask mask = cdo::rasterize_polyline(line, 10, 10);
    CHECK(cdo::mask_is_empty(mask));
}

TEST_CASE("diagonal line matches the Bresenham trace") {
    Polyline line{{{0.0, 0.0}, {9.0, 9.0}}, 1};
    const LaneMask mask = cdo::rasterize_polyline(line, 10, 10);
    // Slope-1 segment: the reference trace is exactly the diagonal.
    for (int r = 0; r < 10; ++r) {
        for (int c = 0; c < 10; ++c) {
            CHECK(mask.grid(r, c) == (r == c ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("thickness dilates with a square element") {
    Polyline line{{{2.0, 4.0}, {7.0, 4.0}}, 3};  // radius 1
    const LaneMask mask = cdo::rasterize_polyline(line, 10, 10);
    for (int r = 0; r < 10; ++r) {
        for (int c = 0; c < 10; ++c) {
            const bool inside = r >= 1 && r <= 8 && c >= 3 && c <= 5;
            CHECK(mask.grid(r, c) == (inside ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("rasterize rejects malformed polylines") {
    CHECK_THROWS_AS(cdo::rasterize_polyline(Polyline{{{0, 0}}, 1}, 5, 5), cdo::ParamError);
    CHECK_THROWS_AS(cdo::rasterize_polyline(Polyline{{{3, 0}, {1, 1}}, 1}, 5, 5),
                    cdo::ParamError);
    CHECK_THROWS_AS(cdo::rasterize_polyline(Polyline{{{0, 0}, {0, 5}}, 1}, 5, 5),
                    cdo::ParamError);  // equal rows are out of order too
    CHECK_THROWS_AS(cdo::rasterize_polyline(Polyline{{{0, 0}, {4, 4}}, 0}, 5, 5),
                    cdo::ParamError);
    CHECK_THROWS_AS(cdo::rasterize_polyline(Polyline{{{0, 0}, {4, 4}}, 1}, 0, 5),
                    cdo::ParamError);
}

TEST_CASE("resize_nearest identity and pinned index mapping") {
    cdo::SeededRng rng(100);
    Matrix grid(4, 4);
    for (double& v : grid.data()) v = rng.uniform(0.0, 1.0) < 0.5 ? 1.0 : 0.0;
    const LaneMask mask(0, grid);

    const LaneMask same = cdo::resize_nearest(mask, 4, 4);
    CHECK(same == mask);

    const LaneMask half = cdo::resize_nearest(mask, 2, 2);
    // floor(i * 4 / 2) selects source rows/cols {0, 2}
    CHECK(half.grid(0, 0) == mask.grid(0, 0));
    CHECK(half.grid(0, 1) == mask.grid(0, 2));
    CHECK(half.grid(1, 0) == mask.grid(2, 0));
    CHECK(half.grid(1, 1) == mask.grid(2, 2));
}

TEST_CASE("resize_nearest of constant field stays constant") {
    const LaneMask ones(0, Matrix::constant(8, 8, 1.0));
    const LaneMask out = cdo::resize_nearest(ones, 3, 3);
    for (double v : out.grid.data()) CHECK(v == 1.0);
}

TEST_CASE("resize_nearest output stays binary for arbitrary sizes") {
    cdo::SeededRng rng(200);
    for (int trial = 0; trial < 25; ++trial) {
        const int h = rng.uniform_int(1, 20), w = rng.uniform_int(1, 20);
        Matrix grid(h, w);
        for (double& v : grid.data()) v = rng.uniform(0.0, 1.0) < 0.4 ? 1.0 : 0.0;
        const LaneMask mask(0, grid);
        const int nh = rng.uniform_int(1, 20), nw = rng.uniform_int(1, 20);
        const LaneMask out = cdo::resize_nearest(mask, nh, nw);
        CHECK(out.height() == nh);
        CHECK(out.width() == nw);
        for (double v : out.grid.data()) CHECK((v == 0.0 || v == 1.0));
    }
    CHECK_THROWS_AS(cdo::resize_nearest(LaneMask(0, Matrix(2, 2)), 0, 2), cdo::ParamError);
}

TEST_CASE("mask_is_empty") {
    CHECK(cdo::mask_is_empty(LaneMask(0, Matrix(3, 3))));
    Matrix one(3, 3);
    one(1, 2) = 1.0;
    CHECK_FALSE(cdo::mask_is_empty(LaneMask(0, one)));

    // Any in-frame polyline rasterizes to at least one pixel.
    Polyline line{{{1.0, 1.0}, {3.0, 2.0}}, 1};
    CHECK_FALSE(cdo::mask_is_empty(cdo::rasterize_polyline(line, 5, 5)));
}

TEST_CASE("rasterize then resize is deterministic") {
    Polyline line{{{0.0, 3.0}, {31.0, 20.0}}, 4};
    const LaneMask a = cdo::resize_nearest(cdo::rasterize_polyline(line, 32, 32), 8, 8);
    const LaneMask b = cdo::resize_nearest(cdo::rasterize_polyline(line, 32, 32), 8, 8);
    CHECK(a == b);
}

TEST_CASE("lane mask rejects non-binary grids") {
    Matrix bad(2, 2);
    bad(0, 0) = 0.5;
    CHECK_THROWS_AS(LaneMask(0, bad), cdo::ValidationError);
}
