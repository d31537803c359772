#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "cdo/forward.hpp"
#include "cdo/rng.hpp"
#include "oracles.hpp"

using cdo::CdoConfig;
using cdo::LaneMask;
using cdo::Matrix;
using cdo::ScoreNorm;
using cdo::Tensor3;

namespace {

LaneMask binary_mask(const Matrix& m, int index = 0) { return LaneMask(index, m); }

Tensor3 tensor_from_channel(const Matrix& m) {
    Tensor3 t(1, m.rows(), m.cols());
    t.set_channel(0, m);
    return t;
}

}  // namespace

TEST_CASE("cov_horizontal hand values") {
    const Matrix i2 = Matrix::identity(2);
    CHECK(cdo::cov_horizontal(i2, binary_mask(i2)) == i2);

    const Matrix s = Matrix::from_rows({{1, 2}, {3, 4}});
    const Matrix m = Matrix::from_rows({{1, 0}, {1, 0}});
    CHECK(cdo::cov_horizontal(s, binary_mask(m)) == Matrix::from_rows({{1, 1}, {3, 3}}));

    const LaneMask empty(0, Matrix(2, 2));
    const Matrix zero = cdo::cov_horizontal(s, empty);
    for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("cov_vertical hand values") {
    const Matrix i2 = Matrix::identity(2);
    CHECK(cdo::cov_vertical(i2, binary_mask(i2)) == i2);

    const Matrix s = Matrix::from_rows({{1, 2}, {3, 4}});
    const Matrix m = Matrix::from_rows({{1, 0}, {1, 0}});
    CHECK(cdo::cov_vertical(s, binary_mask(m)) == Matrix::from_rows({{4, 0}, {6, 0}}));

    const LaneMask empty(0, Matrix(2, 2));
    const Matrix zero = cdo::cov_vertical(s, empty);
    for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("covariances reject shape mismatches") {
    const Matrix s(3, 4);
    const LaneMask m(0, Matrix(4, 3));
    CHECK_THROWS_AS(cdo::cov_horizontal(s, m), cdo::ShapeError);
    CHECK_THROWS_AS(cdo::cov_vertical(s, m), cdo::ShapeError);
}

TEST_CASE("covariances match naive oracle on random pairs") {
    cdo::SeededRng rng(31415);
    for (int trial = 0; trial < 120; ++trial) {
        const int h = rng.uniform_int(1, 16), w = rng.uniform_int(1, 16);
        const Matrix s = oracle::random_matrix(rng, h, w, -2.0, 2.0);
        const Matrix m = oracle::random_binary_matrix(rng, h, w);
        const LaneMask mask(0, m);
        CHECK(oracle::max_abs_diff(cdo::cov_horizontal(s, mask),
                                   oracle::naive_cov_horizontal(s, m)) < 1e-12);
        CHECK(oracle::max_abs_diff(cdo::cov_vertical(s, mask),
                                   oracle::naive_cov_vertical(s, m)) < 1e-12);
    }
}

TEST_CASE("transposing both operands swaps the covariance directions") {
    cdo::SeededRng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const int h = rng.uniform_int(1, 10), w = rng.uniform_int(1, 10);
        const Matrix s = oracle::random_matrix(rng, h, w);
        const Matrix m = oracle::random_binary_matrix(rng, h, w);
        const Matrix swapped =
            cdo::cov_horizontal(cdo::transpose(s), binary_mask(cdo::transpose(m)));
        CHECK(swapped == cdo::cov_vertical(s, binary_mask(m)));
    }
}

TEST_CASE("rif hand values") {
    // d = 1, a = 0.5 -> |0.5| / max(1, 0.5)
    CHECK(cdo::rif(Matrix::identity(2), 1e-12) == 0.5);
    CHECK(cdo::rif(Matrix(3, 3), 1e-12) == 0.0);
    CHECK(cdo::rif(Matrix::constant(4, 4, 2.75), 1e-12) == 0.0);
    CHECK_THROWS_AS(cdo::rif(Matrix(2, 3), 1e-12), cdo::ShapeError);
    CHECK_THROWS_AS(cdo::rif(Matrix(2, 2), 0.0), cdo::ParamError);
}

TEST_CASE("rif is bounded for nonnegative covariances") {
    cdo::SeededRng rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(1, 10);
        const Matrix cov = oracle::random_matrix(rng, n, n, 0.0, 3.0);
        const double r = cdo::rif(cov, 1e-12);
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
    }
}

TEST_CASE("rif is invariant to positive scaling") {
    cdo::SeededRng rng(321);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = rng.uniform_int(2, 10);
        const Matrix cov = oracle::random_matrix(rng, n, n, 0.0, 2.0);
        const double base = cdo::rif(cov, 1e-12);
        for (double c : {0.5, 2.0, 10.0}) {
            Matrix scaled = cov;
            for (double& v : scaled.data()) v *= c;
            const double r = cdo::rif(scaled, 1e-12);
            CHECK(std::fabs(r - base) <= 1e-12 * std::max(std::fabs(base), 1.0));
        }
    }
}

TEST_CASE("rif handles signed covariances without blowing up") {
    // max(d, a) <= 0 exercises the epsilon-floor branch.
    const Matrix neg = Matrix::constant(2, 2, -1.0);
    CHECK(cdo::rif(neg, 1e-12) == 0.0);  // constant: d == a
    Matrix mixed = Matrix::from_rows({{-2, 0}, {0, -2}});
    // d = -2, a = -1 -> |d-a| / max(|d|,|a|,eps) = 1/2
    CHECK(cdo::rif(mixed, 1e-12) == 0.5);
}

TEST_CASE("cdo_score hand values") {
    const Matrix i2 = Matrix::identity(2);
    const Tensor3 f = tensor_from_channel(i2);
    const LaneMask mask(0, i2);

    CHECK(cdo::cdo_score(f, mask, CdoConfig{}) == 0.25);
    CHECK(cdo::cdo_score(f, mask, CdoConfig(1.0, 0.0, 1e-12)) == 0.25);

    const LaneMask empty(0, Matrix(2, 2));
    cdo::SeededRng rng(4);
    const cdo::Tensor3 any = oracle::random_tensor(rng, 3, 2, 2, -1.0, 1.0);
    CHECK(cdo::cdo_score(any, empty, CdoConfig{}) == 0.0);
}

TEST_CASE("cdo_score bounds under the verbatim normalization") {
    cdo::SeededRng rng(246);
    for (int trial = 0; trial < 100; ++trial) {
        const int c = rng.uniform_int(1, 4);
        const int h = rng.uniform_int(2, 10), w = rng.uniform_int(2, 10);
        const Tensor3 f = oracle::random_tensor(rng, c, h, w, 0.0, 2.0);
        const LaneMask mask(0, oracle::random_binary_matrix(rng, h, w));
        const double s = cdo::cdo_score(f, mask, CdoConfig{});
        CHECK(s >= 0.0);
        CHECK(s <= 0.5);
        const double s1 = cdo::cdo_score(f, mask, CdoConfig(0.5, 0.5, 1e-12, ScoreNorm::ChannelMean));
        CHECK(s1 >= 0.0);
        CHECK(s1 <= 1.0);
        CHECK_THAT(s1, Catch::Matchers::WithinRel(2.0 * s, 1e-12) ||
                           Catch::Matchers::WithinAbs(0.0, 1e-15));
    }
}

TEST_CASE("single-row mask: column permutations keep the horizontal diagonal") {
    Matrix m(4, 6);
    for (int q = 0; q < 6; ++q) m(2, q) = 1.0;  // full single-row mask
    const LaneMask mask(0, m);

    cdo::SeededRng rng(88);
    const Matrix s = oracle::random_matrix(rng, 4, 6);
    Matrix permuted(4, 6);
    const int perm[6] = {3, 0, 5, 1, 4, 2};
    for (int r = 0; r < 4; ++r) {
        for (int q = 0; q < 6; ++q) permuted(r, q) = s(r, perm[q]);
    }

    const double diag_before = cdo::mean_diag(cdo::cov_horizontal(s, mask));
    const double diag_after = cdo::mean_diag(cdo::cov_horizontal(permuted, mask));
    CHECK_THAT(diag_after, Catch::Matchers::WithinAbs(diag_before, 1e-12));

    const Matrix v_before = cdo::cov_vertical(s, mask);
    const Matrix v_after = cdo::cov_vertical(permuted, mask);
    CHECK(oracle::max_abs_diff(v_before, v_after) > 1e-9);
}

TEST_CASE("cdo_loss hand values and validation") {
    const Matrix i2 = Matrix::identity(2);
    const Tensor3 f = tensor_from_channel(i2);

    SECTION("all lanes absent") {
        const std::vector<LaneMask> masks{LaneMask(0, Matrix(2, 2)), LaneMask(1, Matrix(2, 2))};
        CHECK(cdo::cdo_loss(f, masks, {0, 0}, CdoConfig{}) == 0.0);
    }

    SECTION("single existing lane with score 0.25") {
        const std::vector<LaneMask> masks{LaneMask(0, i2)};
        CHECK(cdo::cdo_loss(f, masks, {1}, CdoConfig{}) == 0.5625);  // (0.25 - 1)^2
    }

    SECTION("two existing lanes average their squared errors") {
        cdo::SeededRng rng(5150);
        const Tensor3 feat = oracle::random_tensor(rng, 2, 5, 5, 0.0, 1.0);
        const LaneMask m0(0, oracle::random_binary_matrix(rng, 5, 5, 0.5));
        const LaneMask m1(1, oracle::random_binary_matrix(rng, 5, 5, 0.5));
        if (!cdo::mask_is_empty(m0) && !cdo::mask_is_empty(m1)) {
            const double s0 = cdo::cdo_score(feat, m0, CdoConfig{});
            const double s1 = cdo::cdo_score(feat, m1, CdoConfig{});
            const double expected = ((s0 - 1) * (s0 - 1) + (s1 - 1) * (s1 - 1)) / 2.0;
            CHECK(cdo::cdo_loss(feat, {m0, m1}, {1, 1}, CdoConfig{}) == expected);
        }
    }

    SECTION("existence/mask inconsistency is rejected") {
        const std::vector<LaneMask> masks{LaneMask(0, i2)};
        CHECK_THROWS_AS(cdo::cdo_loss(f, masks, {0}, CdoConfig{}), cdo::ValidationError);
        const std::vector<LaneMask> empties{LaneMask(0, Matrix(2, 2))};
        CHECK_THROWS_AS(cdo::cdo_loss(f, empties, {1}, CdoConfig{}), cdo::ValidationError);
    }

    SECTION("length mismatch and empty slot list are shape errors") {
        const std::vector<LaneMask> masks{LaneMask(0, i2)};
        CHECK_THROWS_AS(cdo::cdo_loss(f, masks, {1, 0}, CdoConfig{}), cdo::ShapeError);
        CHECK_THROWS_AS(cdo::cdo_loss(f, {}, {}, CdoConfig{}), cdo::ShapeError);
    }
}

TEST_CASE("cdo config validation") {
    CHECK_THROWS_AS(CdoConfig(0.7, 0.7, 1e-12), cdo::ParamError);
    CHECK_THROWS_AS(CdoConfig(-0.1, 1.1, 1e-12), cdo::ParamError);
    CHECK_THROWS_AS(CdoConfig(0.5, 0.5, 0.0), cdo::ParamError);
    const CdoConfig c = CdoConfig::with_alpha(0.3);
    CHECK(c.beta == 0.7);
}

TEST_CASE("covariance_pair carries indices and both matrices") {
    cdo::SeededRng rng(64);
    const Tensor3 f = oracle::random_tensor(rng, 3, 4, 6, -1.0, 1.0);
    const LaneMask mask(2, oracle::random_binary_matrix(rng, 4, 6));
    const cdo::CovariancePair pair = cdo::covariance_pair(f, 1, mask);
    CHECK(pair.lane_index == 2);
    CHECK(pair.channel_index == 1);
    CHECK(pair.cov_h.rows() == 4);
    CHECK(pair.cov_h.cols() == 4);
    CHECK(pair.cov_v.rows() == 6);
    CHECK(pair.cov_v.cols() == 6);
    CHECK(pair.cov_h == cdo::cov_horizontal(f.channel(1), mask));
    CHECK(pair.cov_v == cdo::cov_vertical(f.channel(1), mask));
}
