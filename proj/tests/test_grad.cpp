#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "cdo/grad.hpp"
#include "cdo/rng.hpp"
#include "oracles.hpp"

using cdo::CdoConfig;
using cdo::GradTensor;
using cdo::LaneMask;
using cdo::Matrix;
using cdo::Tensor3;

namespace {

// Random instance with strictly positive features and rasterized lane-ish
// masks: keeps RIF in its main branch so the loss is smooth.
struct Instance {
    Tensor3 f;
    std::vector<LaneMask> masks;
    cdo::ExistenceVector exist;
};

Instance random_instance(cdo::SeededRng& rng, int max_c = 4, int max_hw = 8) {
    const int c = rng.uniform_int(1, max_c);
    const int h = rng.uniform_int(4, max_hw), w = rng.uniform_int(4, max_hw);
    Instance inst{oracle::random_tensor(rng, c, h, w, 0.1, 1.1), {}, {}};
    const int lanes = rng.uniform_int(1, 2);
    for (int n = 0; n < lanes; ++n) {
        Matrix grid = oracle::random_binary_matrix(rng, h, w, 0.35);
        inst.masks.emplace_back(n, grid);
        inst.exist.push_back(cdo::mask_is_empty(inst.masks.back()) ? 0 : 1);
    }
    return inst;
}

}  // namespace

TEST_CASE("gradient is identically zero when every mask is empty") {
    cdo::SeededRng rng(1);
    const Tensor3 f = oracle::random_tensor(rng, 2, 5, 6, -1.0, 1.0);
    const std::vector<LaneMask> masks{LaneMask(0, Matrix(5, 6)), LaneMask(1, Matrix(5, 6))};
    const GradTensor g = cdo::cdo_loss_backward(f, masks, {0, 0}, CdoConfig{});
    for (double v : g.data()) CHECK(v == 0.0);

    const GradTensor fd = cdo::finite_diff_grad(f, masks, {0, 0}, CdoConfig{});
    for (double v : fd.data()) CHECK(std::fabs(v) < 1e-10);
}

TEST_CASE("1x1 feature map has a constant loss") {
    // With a single entry the diagonal mean equals the overall mean, so the
    // RIF chain collapses: L(s) = (0 - 1)^2 = 1 and dL/ds = 0.
    for (double s : {0.25, 1.0, -3.5}) {
        Tensor3 f(1, 1, 1, {s});
        Matrix m(1, 1);
        m(0, 0) = 1.0;
        const std::vector<LaneMask> masks{LaneMask(0, m)};
        CHECK(cdo::cdo_loss(f, masks, {1}, CdoConfig{}) == 1.0);
        const GradTensor g = cdo::cdo_loss_backward(f, masks, {1}, CdoConfig{});
        CHECK(g(0, 0, 0) == 0.0);
        const GradTensor fd = cdo::finite_diff_grad(f, masks, {1}, CdoConfig{});
        CHECK(std::fabs(fd(0, 0, 0)) < 1e-10);
    }
}

TEST_CASE("analytic gradient matches finite differences on random instances") {
    cdo::SeededRng rng(0xABCDEF);
    for (int trial = 0; trial < 50; ++trial) {
        const Instance inst = random_instance(rng);
        const cdo::GradCheckReport rep =
            cdo::grad_check(inst.f, inst.masks, inst.exist, CdoConfig{});
        INFO("trial " << trial << " worst at (" << rep.worst_c << "," << rep.worst_y << ","
                      << rep.worst_x << ")");
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("gradient check works under the 1/C normalization too") {
    cdo::SeededRng rng(0xFEDCBA);
    const CdoConfig cfg(0.5, 0.5, 1e-12, cdo::ScoreNorm::ChannelMean);
    for (int trial = 0; trial < 10; ++trial) {
        const Instance inst = random_instance(rng);
        const cdo::GradCheckReport rep = cdo::grad_check(inst.f, inst.masks, inst.exist, cfg);
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("gradient scales inversely with a positive feature scaling") {
    cdo::SeededRng rng(404);
    Instance inst = random_instance(rng, 2, 6);
    // single existing lane keeps the outer MSE factor identical at both scales
    inst.masks.resize(1);
    inst.exist.resize(1);
    if (inst.exist[0] == 0) return;

    const double c = 3.0;
    Tensor3 scaled = inst.f;
    for (double& v : scaled.data()) v *= c;

    const GradTensor g = cdo::cdo_loss_backward(inst.f, inst.masks, inst.exist, CdoConfig{});
    const GradTensor gs = cdo::cdo_loss_backward(scaled, inst.masks, inst.exist, CdoConfig{});
    for (int ch = 0; ch < g.channels(); ++ch) {
        for (int y = 0; y < g.height(); ++y) {
            for (int x = 0; x < g.width(); ++x) {
                CHECK_THAT(gs(ch, y, x), Catch::Matchers::WithinAbs(g(ch, y, x) / c, 1e-12));
            }
        }
    }
}

TEST_CASE("gradient sparsity follows the mask row/column support") {
    // Mask occupies rows {1,2} and columns {3,4}: entries whose row and
    // column are both untouched must have zero gradient.
    Matrix grid(6, 6);
    grid(1, 3) = 1.0;
    grid(1, 4) = 1.0;
    grid(2, 3) = 1.0;
    const std::vector<LaneMask> masks{LaneMask(0, grid)};

    cdo::SeededRng rng(77);
    const Tensor3 f = oracle::random_tensor(rng, 2, 6, 6, 0.1, 1.1);
    const GradTensor g = cdo::cdo_loss_backward(f, masks, {1}, CdoConfig{});
    for (int c = 0; c < 2; ++c) {
        for (int y = 0; y < 6; ++y) {
            for (int x = 0; x < 6; ++x) {
                const bool row_used = (y == 1 || y == 2);
                const bool col_used = (x == 3 || x == 4);
                if (!row_used && !col_used) {
                    CHECK(g(c, y, x) == 0.0);
                }
            }
        }
    }
}

TEST_CASE("compare_grads pinpoints an injected fault") {
    cdo::SeededRng rng(999);
    const Instance inst = random_instance(rng, 2, 6);
    const GradTensor g = cdo::cdo_loss_backward(inst.f, inst.masks, inst.exist, CdoConfig{});
    GradTensor corrupted = g;
    const int cc = 1 % corrupted.channels(), yy = 2, xx = 3;
    corrupted(cc, yy, xx) += 0.1;
    const cdo::GradCheckReport rep = cdo::compare_grads(g, corrupted);
    CHECK(rep.worst_c == cc);
    CHECK(rep.worst_y == yy);
    CHECK(rep.worst_x == xx);
    CHECK_THAT(rep.max_abs_err, Catch::Matchers::WithinAbs(0.1, 1e-12));

    const cdo::GradCheckReport self = cdo::compare_grads(g, g);
    CHECK(self.max_abs_err == 0.0);
    CHECK(self.max_rel_err == 0.0);
}

TEST_CASE("finite_diff_grad validates its step") {
    Tensor3 f(1, 2, 2);
    const std::vector<LaneMask> masks{LaneMask(0, Matrix(2, 2))};
    CHECK_THROWS_AS(cdo::finite_diff_grad(f, masks, {0}, CdoConfig{}, 0.0), cdo::ParamError);
}
