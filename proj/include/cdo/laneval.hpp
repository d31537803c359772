#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "cdo/errors.hpp"
#include "cdo/maskops.hpp"

namespace cdo {

// Evaluation metrics for polyline lane predictions: IoU-matched F1 over
// rasterized thick lines, and point-accuracy / FP / FN ratios scored at
// requested image rows.

/// Outcome of matching predictions against ground truth at one IoU
/// threshold: tp + fn == |gt| and tp + fp == |preds|.
struct MatchResult {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::vector<std::vector<double>> iou;   // iou[pred][gt], kept for diagnostics
    std::vector<int> gt_for_pred;           // matched gt index or -1
    std::vector<int> pred_for_gt;           // matched pred index or -1
};

struct F1Stats {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct TusimpleCounts {
    long long c_clip = 0;  // correct points
    long long s_clip = 0;  // requested points
    int f_pred = 0;        // unmatched predictions
    int n_pred = 0;        // total predictions
    int m_pred = 0;        // missed ground-truth lanes
    int n_gt = 0;          // total ground-truth lanes
};

struct TusimpleMetrics {
    double accuracy = 0.0;
    double fp_ratio = 0.0;
    double fn_ratio = 0.0;
    TusimpleCounts counts;
};

/// Default rasterized line width for IoU: 30 px at 800-wide images, scaled
/// proportionally to the evaluated width.
inline int default_line_width(int image_width) {
    return std::max(1, static_cast<int>(std::lround(30.0 * image_width / 800.0)));
}

/// IoU of the two polylines rasterized `width` pixels wide on an h x w
/// canvas. An empty union gives 0.
inline double lane_iou(const Polyline& pred, const Polyline& gt, int width, int h, int w) {
    if (width < 1) throw ParamError("lane_iou: width must be >= 1");
    Polyline a = pred, b = gt;
    a.thickness = width;
    b.thickness = width;
    const LaneMask ma = rasterize_polyline(a, h, w);
    const LaneMask mb = rasterize_polyline(b, h, w);
    long long inter = 0, uni = 0;
    for (std::size_t i = 0; i < ma.grid.size(); ++i) {
        const bool pa = ma.grid.data()[i] == 1.0;
        const bool pb = mb.grid.data()[i] == 1.0;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Greedy matching by descending IoU; ties break toward the lower pred
/// index, then the lower gt index. Pairs with IoU >= threshold become TPs.
inline MatchResult match_and_count(const std::vector<Polyline>& preds,
                                   const std::vector<Polyline>& gts, double iou_threshold,
                                   int width, int h, int w) {
    if (!(iou_threshold > 0.0) || iou_threshold > 1.0) {
        throw ParamError("match_and_count: threshold must lie in (0, 1]");
    }
    MatchResult res;
    res.iou.assign(preds.size(), std::vector<double>(gts.size(), 0.0));
    res.gt_for_pred.assign(preds.size(), -1);
    res.pred_for_gt.assign(gts.size(), -1);

    struct Pair {
        double iou;
        int p, g;
    };
    std::vector<Pair> pairs;
    for (std::size_t p = 0; p < preds.size(); ++p) {
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double v = lane_iou(preds[p], gts[g], width, h, w);
            res.iou[p][g] = v;
            if (v >= iou_threshold) {
                pairs.push_back({v, static_cast<int>(p), static_cast<int>(g)});
            }
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.p != b.p) return a.p < b.p;
        return a.g < b.g;
    });
    for (const Pair& pr : pairs) {
        if (res.gt_for_pred[static_cast<std::size_t>(pr.p)] != -1 ||
            res.pred_for_gt[static_cast<std::size_t>(pr.g)] != -1) {
            continue;
        }
        res.gt_for_pred[static_cast<std::size_t>(pr.p)] = pr.g;
        res.pred_for_gt[static_cast<std::size_t>(pr.g)] = pr.p;
        ++res.tp;
    }
    res.fp = static_cast<int>(preds.size()) - res.tp;
    res.fn = static_cast<int>(gts.size()) - res.tp;
    return res;
}

/// Precision/recall/F1 with every 0/0 pinned to 0.
inline F1Stats f1_from_counts(const MatchResult& m) {
    F1Stats s;
    s.precision = (m.tp + m.fp) == 0 ? 0.0 : static_cast<double>(m.tp) / (m.tp + m.fp);
    s.recall = (m.tp + m.fn) == 0 ? 0.0 : static_cast<double>(m.tp) / (m.tp + m.fn);
    const double denom = s.precision + s.recall;
    s.f1 = denom == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / denom;
    return s;
}

/// Column of the polyline at an exact row, linearly interpolated between
/// vertices; nullopt outside the covered row span.
inline std::optional<double> polyline_col_at(const Polyline& line, double row) {
    if (line.points.size() < 2) return std::nullopt;
    if (row < line.points.front().row || row > line.points.back().row) return std::nullopt;
    for (std::size_t i = 0; i + 1 < line.points.size(); ++i) {
        const PolyPoint& a = line.points[i];
        const PolyPoint& b = line.points[i + 1];
        if (row <= b.row) {
            const double t = (row - a.row) / (b.row - a.row);
            return a.col + t * (b.col - a.col);
        }
    }
    return std::nullopt;
}

/// Point accuracy plus FP/FN ratios. Lanes are first matched by IoU (the
/// same greedy matcher as the F1 path); every requested row covered by a
/// ground-truth lane counts toward s_clip, and a matched prediction whose
/// column at that row lies within point_threshold scores a correct point.
/// Ratios: fp = unmatched preds / total preds, fn = missed gts / total gts,
/// each 0 when its denominator is 0.
inline TusimpleMetrics tusimple_metrics(const std::vector<Polyline>& preds,
                                        const std::vector<Polyline>& gts,
                                        double point_threshold, const std::vector<int>& rows,
                                        double iou_threshold, int width, int h, int w) {
    if (!(point_threshold > 0.0)) {
        throw ParamError("tusimple_metrics: point_threshold must be > 0");
    }
    for (int r : rows) {
        if (r < 0 || r >= h) throw ParamError("tusimple_metrics: requested row outside image");
    }
    const MatchResult match = match_and_count(preds, gts, iou_threshold, width, h, w);

    TusimpleMetrics out;
    out.counts.n_pred = static_cast<int>(preds.size());
    out.counts.n_gt = static_cast<int>(gts.size());
    out.counts.f_pred = match.fp;
    out.counts.m_pred = match.fn;

    for (std::size_t g = 0; g < gts.size(); ++g) {
        const int p = match.pred_for_gt[g];
        for (int r : rows) {
            const auto gt_col = polyline_col_at(gts[g], r);
            if (!gt_col) continue;
            ++out.counts.s_clip;
            if (p < 0) continue;
            const auto pred_col = polyline_col_at(preds[static_cast<std::size_t>(p)], r);
            if (pred_col && std::fabs(*pred_col - *gt_col) <= point_threshold) {
                ++out.counts.c_clip;
            }
        }
    }
    out.accuracy = out.counts.s_clip == 0
                       ? 0.0
                       : static_cast<double>(out.counts.c_clip) / static_cast<double>(out.counts.s_clip);
    out.fp_ratio = out.counts.n_pred == 0
                       ? 0.0
                       : static_cast<double>(out.counts.f_pred) / out.counts.n_pred;
    out.fn_ratio = out.counts.n_gt == 0
                       ? 0.0
                       : static_cast<double>(out.counts.m_pred) / out.counts.n_gt;
    return out;
}

}  // namespace cdo
