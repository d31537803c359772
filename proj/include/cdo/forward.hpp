#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cdo/errors.hpp"
#include "cdo/maskops.hpp"
#include "cdo/matrix.hpp"

namespace cdo {

// Covariance distribution optimization, forward path.
//
// For a feature channel S (H x W) and a binary lane mask M of the same
// shape, two cross-correlation ("covariance") matrices are formed:
//
//   horizontal:  S * M^T   (H x H)  -- row i of S against row j of M
//   vertical:    S^T * M   (W x W)  -- column i of S against column j of M
//
// The relative intensity function (RIF) measures how much the diagonal of
// such a matrix stands out against its overall mean:
//
//   RIF = |DIAG - AVG| / max(DIAG, AVG)
//
// where DIAG is the diagonal mean and AVG the mean over all entries. The
// per-lane score averages RIF over channels in both directions, weighted by
// alpha (horizontal) and beta (vertical), and the loss is the mean squared
// deviation of that score from the lane-existence bit.

/// Normalization of the per-lane score across channels.
enum class ScoreNorm {
    /// 1/(2C) prefactor: with alpha+beta = 1 the score is bounded by 1/2,
    /// so an existence target of 1 is unreachable and the per-lane loss
    /// floor is 1/4.
    HalfChannelMean,
    /// 1/C prefactor: the score of a perfectly aligned lane can reach 1.
    ChannelMean,
};

struct CdoConfig {
    double alpha = 0.5;
    double beta = 0.5;
    double epsilon = 1e-12;
    ScoreNorm norm = ScoreNorm::HalfChannelMean;

    CdoConfig() = default;
    CdoConfig(double a, double b, double eps, ScoreNorm n = ScoreNorm::HalfChannelMean)
        : alpha(a), beta(b), epsilon(eps), norm(n) {
        validate();
    }

    static CdoConfig with_alpha(double a, double eps = 1e-12,
                                ScoreNorm n = ScoreNorm::HalfChannelMean) {
        return CdoConfig(a, 1.0 - a, eps, n);
    }

    void validate() const {
        if (alpha < 0.0 || beta < 0.0) {
            throw ParamError("CdoConfig: alpha and beta must be >= 0");
        }
        if (std::fabs(alpha + beta - 1.0) > 1e-9) {
            throw ParamError("CdoConfig: alpha + beta must equal 1");
        }
        if (!(epsilon > 0.0)) {
            throw ParamError("CdoConfig: epsilon must be > 0");
        }
    }
};

/// The two covariance matrices of one (channel, lane) pair.
struct CovariancePair {
    Matrix cov_h;  // H x H
    Matrix cov_v;  // W x W
    int lane_index = 0;
    int channel_index = 0;
};

namespace detail {

inline void require_same_shape(const Matrix& s, const LaneMask& m, const char* what) {
    if (s.rows() != m.height() || s.cols() != m.width()) {
        throw ShapeError(std::string(what) + ": feature channel is " + std::to_string(s.rows()) +
                         "x" + std::to_string(s.cols()) + " but mask is " +
                         std::to_string(m.height()) + "x" + std::to_string(m.width()));
    }
}

/// RIF from precomputed diagonal/overall means; shared with the backward
/// pass so both sides branch identically. An all-zero covariance matrix has
/// d == a and maps to exactly 0. When max(d, a) <= 0 (possible for signed
/// features) the denominator falls back to max(|d|, |a|, epsilon).
inline double rif_from_stats(double d, double a, double epsilon) {
    if (d == a) return 0.0;
    const double m = std::max(d, a);
    const double denom = m > 0.0 ? m : std::max({std::fabs(d), std::fabs(a), epsilon});
    return std::fabs(d - a) / denom;
}

inline double score_norm_factor(ScoreNorm norm, int channels) {
    const double c = static_cast<double>(channels);
    return norm == ScoreNorm::HalfChannelMean ? 1.0 / (2.0 * c) : 1.0 / c;
}

inline void validate_loss_inputs(const Tensor3& f, const std::vector<LaneMask>& masks,
                                 const ExistenceVector& exist) {
    if (masks.empty()) {
        throw ShapeError("cdo_loss: at least one lane slot required");
    }
    if (masks.size() != exist.size()) {
        throw ShapeError("cdo_loss: masks and existence vector lengths differ");
    }
    for (std::size_t n = 0; n < masks.size(); ++n) {
        if (masks[n].height() != f.height() || masks[n].width() != f.width()) {
            throw ShapeError("cdo_loss: mask " + std::to_string(n) +
                             " does not match feature map dimensions");
        }
        if (exist[n] != 0 && exist[n] != 1) {
            throw ValidationError("cdo_loss: existence bits must be 0 or 1");
        }
        const bool empty = mask_is_empty(masks[n]);
        if (empty && exist[n] == 1) {
            throw ValidationError("cdo_loss: lane " + std::to_string(n) +
                                  " marked existing but its mask is empty");
        }
        if (!empty && exist[n] == 0) {
            throw ValidationError("cdo_loss: lane " + std::to_string(n) +
                                  " marked absent but its mask has pixels");
        }
    }
}

}  // namespace detail

/// Horizontal covariance matrix S * M^T (H x H). Entry (i, j) is the dot
/// product of row i of S with row j of M.
inline Matrix cov_horizontal(const Matrix& s, const LaneMask& m) {
    detail::require_same_shape(s, m, "cov_horizontal");
    return matmul(s, transpose(m.grid));
}

/// Vertical covariance matrix S^T * M (W x W). Entry (i, j) is the dot
/// product of column i of S with column j of M.
inline Matrix cov_vertical(const Matrix& s, const LaneMask& m) {
    detail::require_same_shape(s, m, "cov_vertical");
    return matmul(transpose(s), m.grid);
}

inline CovariancePair covariance_pair(const Tensor3& f, int channel, const LaneMask& m) {
    const Matrix s = f.channel(channel);
    return CovariancePair{cov_horizontal(s, m), cov_vertical(s, m), m.lane_index, channel};
}

/// Relative intensity of the diagonal of a (square) covariance matrix.
/// For nonnegative inputs the value lies in [0, 1].
inline double rif(const Matrix& cov, double epsilon) {
    if (cov.rows() != cov.cols()) {
        throw ShapeError("rif: covariance matrix must be square");
    }
    if (!(epsilon > 0.0)) {
        throw ParamError("rif: epsilon must be > 0");
    }
    return detail::rif_from_stats(mean_diag(cov), mean_all(cov), epsilon);
}

/// Per-lane score: channel-mean of RIF in both directions,
///   norm * [alpha * sum_i RIF_h(i) + beta * sum_i RIF_v(i)]
/// with norm = 1/(2C) (default) or 1/C. An empty mask scores exactly 0.
inline double cdo_score(const Tensor3& f, const LaneMask& mask, const CdoConfig& cfg) {
    cfg.validate();
    if (mask.height() != f.height() || mask.width() != f.width()) {
        throw ShapeError("cdo_score: mask does not match feature map dimensions");
    }
    const Matrix mt = transpose(mask.grid);
    double sum_h = 0.0, sum_v = 0.0;
    for (int c = 0; c < f.channels(); ++c) {
        const Matrix s = f.channel(c);
        const Matrix ch = matmul(s, mt);
        const Matrix cv = matmul(transpose(s), mask.grid);
        sum_h += detail::rif_from_stats(mean_diag(ch), mean_all(ch), cfg.epsilon);
        sum_v += detail::rif_from_stats(mean_diag(cv), mean_all(cv), cfg.epsilon);
    }
    const double norm = detail::score_norm_factor(cfg.norm, f.channels());
    return norm * (cfg.alpha * sum_h + cfg.beta * sum_v);
}

/// Mean squared error between per-lane scores and existence bits:
///   (1/N) * sum_n (score(n) - exist(n))^2
/// Requires exist(n) == 0 exactly when mask n is empty.
inline double cdo_loss(const Tensor3& f, const std::vector<LaneMask>& masks,
                       const ExistenceVector& exist, const CdoConfig& cfg) {
    cfg.validate();
    detail::validate_loss_inputs(f, masks, exist);
    double acc = 0.0;
    for (std::size_t n = 0; n < masks.size(); ++n) {
        const double diff = cdo_score(f, masks[n], cfg) - static_cast<double>(exist[n]);
        acc += diff * diff;
    }
    return acc / static_cast<double>(masks.size());
}

}  // namespace cdo
