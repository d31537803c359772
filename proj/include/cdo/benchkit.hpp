#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdo/errors.hpp"
#include "cdo/forward.hpp"
#include "cdo/maskops.hpp"
#include "cdo/rng.hpp"
#include "cdo/trainer.hpp"

namespace cdo {

// Timing harness for the covariance computation. Two variants over the
// same inputs: "naive_loops" (direct row/column dot products) and "matmul"
// (the library path via transpose + matrix product). Outputs are checked
// for agreement before anything is timed.

struct BenchShape {
    int c = 0, h = 0, w = 0;
};

struct BenchReport {
    BenchShape shape;
    std::string variant;
    int reps = 0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
    double madds = 0.0;         // multiply-adds per pass over all channels
    double gmadd_per_s = 0.0;   // derived from the median
};

/// Multiply-add count for one pass: per channel, H*H*W for the horizontal
/// product plus W*W*H for the vertical one.
inline double cov_madd_count(const BenchShape& s) {
    const double h = s.h, w = s.w;
    return static_cast<double>(s.c) * (h * h * w + w * w * h);
}

namespace detail {

// Deterministic bench inputs: positive feature tensor plus one rasterized
// sloped lane mask at the feature resolution.
inline Tensor3 bench_feature(const BenchShape& s) {
    SeededRng rng(0xBE9C0000u + static_cast<std::uint64_t>(s.c * 131 + s.h * 17 + s.w));
    Tensor3 f(s.c, s.h, s.w);
    for (double& v : f.data()) v = rng.uniform(0.0, 1.0);
    return f;
}

inline LaneMask bench_mask(const BenchShape& s) {
    Polyline line;
    line.thickness = std::max(1, s.w / 16);
    const double c0 = s.w * 0.3, c1 = s.w * 0.7;
    for (int r = 0; r < s.h; ++r) {
        line.points.push_back({static_cast<double>(r),
                               c0 + (c1 - c0) * r / std::max(1, s.h - 1)});
    }
    return rasterize_polyline(line, s.h, s.w);
}

struct CovOutputs {
    std::vector<Matrix> cov_h, cov_v;
    std::vector<double> rif_h, rif_v;
};

inline CovOutputs run_naive(const Tensor3& f, const LaneMask& mask, double eps) {
    CovOutputs out;
    const Matrix& m = mask.grid;
    const int h = f.height(), w = f.width();
    for (int c = 0; c < f.channels(); ++c) {
        Matrix ch(h, h);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < h; ++j) {
                double acc = 0.0;
                for (int k = 0; k < w; ++k) acc += f(c, i, k) * m(j, k);
                ch(i, j) = acc;
            }
        }
        Matrix cv(w, w);
        for (int i = 0; i < w; ++i) {
            for (int j = 0; j < w; ++j) {
                double acc = 0.0;
                for (int k = 0; k < h; ++k) acc += f(c, k, i) * m(k, j);
                cv(i, j) = acc;
            }
        }
        out.rif_h.push_back(rif(ch, eps));
        out.rif_v.push_back(rif(cv, eps));
        out.cov_h.push_back(std::move(ch));
        out.cov_v.push_back(std::move(cv));
    }
    return out;
}

inline CovOutputs run_matmul(const Tensor3& f, const LaneMask& mask, double eps) {
    CovOutputs out;
    for (int c = 0; c < f.channels(); ++c) {
        const Matrix s = f.channel(c);
        Matrix ch = cov_horizontal(s, mask);
        Matrix cv = cov_vertical(s, mask);
        out.rif_h.push_back(rif(ch, eps));
        out.rif_v.push_back(rif(cv, eps));
        out.cov_h.push_back(std::move(ch));
        out.cov_v.push_back(std::move(cv));
    }
    return out;
}

inline double outputs_max_diff(const CovOutputs& a, const CovOutputs& b) {
    double worst = 0.0;
    for (std::size_t c = 0; c < a.cov_h.size(); ++c) {
        for (std::size_t i = 0; i < a.cov_h[c].size(); ++i) {
            worst = std::max(worst, std::fabs(a.cov_h[c].data()[i] - b.cov_h[c].data()[i]));
        }
        for (std::size_t i = 0; i < a.cov_v[c].size(); ++i) {
            worst = std::max(worst, std::fabs(a.cov_v[c].data()[i] - b.cov_v[c].data()[i]));
        }
        worst = std::max(worst, std::fabs(a.rif_h[c] - b.rif_h[c]));
        worst = std::max(worst, std::fabs(a.rif_v[c] - b.rif_v[c]));
    }
    return worst;
}

inline double quantile_ms(std::vector<double> samples, double q) {
    std::sort(samples.begin(), samples.end());
    const std::size_t idx = std::min(
        samples.size() - 1,
        static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size()))) -
            (q > 0.0 ? 1 : 0));
    return samples[idx];
}

}  // namespace detail

/// Times cov_horizontal + cov_vertical + rif over all channels for each
/// shape and variant. Variant outputs are compared first; a disagreement
/// beyond 1e-9 aborts before any timing happens.
inline std::vector<BenchReport> bench_cov(const std::vector<BenchShape>& shapes,
                                          const std::vector<std::string>& variants, int reps) {
    if (reps < 10) throw ParamError("bench_cov: reps must be >= 10");
    for (const std::string& v : variants) {
        if (v != "naive_loops" && v != "matmul") {
            throw ParamError("bench_cov: unknown variant '" + v + "'");
        }
    }
    for (const BenchShape& s : shapes) {
        if (s.c <= 0 || s.h <= 0 || s.w <= 0) {
            throw ParamError("bench_cov: shape dims must be positive");
        }
    }

    std::vector<BenchReport> reports;
    double sink = 0.0;
    for (const BenchShape& shape : shapes) {
        const Tensor3 f = detail::bench_feature(shape);
        const LaneMask mask = detail::bench_mask(shape);
        const double eps = 1e-12;

        const detail::CovOutputs ref_naive = detail::run_naive(f, mask, eps);
        const detail::CovOutputs ref_matmul = detail::run_matmul(f, mask, eps);
        const double diff = detail::outputs_max_diff(ref_naive, ref_matmul);
        if (diff > 1e-9) {
            throw Error("bench_cov: variants disagree by " + std::to_string(diff) +
                        "; correctness precedes speed");
        }

        for (const std::string& variant : variants) {
            auto run = [&]() {
                const detail::CovOutputs out = variant == "matmul"
                                                   ? detail::run_matmul(f, mask, eps)
                                                   : detail::run_naive(f, mask, eps);
                for (double r : out.rif_h) sink += r;
                for (double r : out.rif_v) sink += r;
            };
            run();  // warmup
            run();
            std::vector<double> times_ms;
            times_ms.reserve(static_cast<std::size_t>(reps));
            for (int r = 0; r < reps; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                run();
                const auto t1 = std::chrono::steady_clock::now();
                times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
            BenchReport rep;
            rep.shape = shape;
            rep.variant = variant;
            rep.reps = reps;
            rep.median_ms = detail::quantile_ms(times_ms, 0.5);
            rep.p95_ms = detail::quantile_ms(times_ms, 0.95);
            rep.madds = cov_madd_count(shape);
            rep.gmadd_per_s = rep.median_ms > 0.0 ? rep.madds / (rep.median_ms * 1e6) : 0.0;
            reports.push_back(std::move(rep));
        }
    }
    if (sink == 42.0) throw Error("bench_cov: unreachable");  // keep `run` observable
    return reports;
}

inline void to_json(nlohmann::json& j, const BenchReport& r) {
    j = nlohmann::json{{"shape", {{"c", r.shape.c}, {"h", r.shape.h}, {"w", r.shape.w}}},
                       {"variant", r.variant},
                       {"reps", r.reps},
                       {"median_ms", r.median_ms},
                       {"p95_ms", r.p95_ms},
                       {"madds", r.madds},
                       {"gmadd_per_s", r.gmadd_per_s}};
}

inline nlohmann::json bench_report_json(const std::vector<BenchReport>& reports) {
    nlohmann::json j{{"format_version", 1}, {"reports", reports}};
    return j;
}

/// Compares the inference path of two trained checkpoints: parameter
/// counts must match and the recorded op traces must be identical and free
/// of covariance-loss operations. Timing medians are reported, not
/// asserted.
inline nlohmann::json bench_inference_delta(const TrainState& with_cdo,
                                            const TrainState& without_cdo,
                                            const std::vector<TrainingPair>& sample, int reps,
                                            double decode_threshold = 0.25) {
    if (reps < 1) throw ParamError("bench_inference_delta: reps must be >= 1");
    if (sample.empty()) throw ParamError("bench_inference_delta: sample set is empty");

    const std::size_t params_a = with_cdo.model.parameter_count();
    const std::size_t params_b = without_cdo.model.parameter_count();
    if (params_a != params_b) {
        throw Error("bench_inference_delta: parameter counts differ (" + std::to_string(params_a) +
                    " vs " + std::to_string(params_b) + ")");
    }

    constexpr int stride = 4;  // two stride-2 convolutions
    auto trace_of = [&](const ToyModel& model) {
        OpTrace trace;
        const ForwardResult fwd = forward(model, sample.front().image, &trace);
        decode_lanes(fwd.seg_probs, decode_threshold, stride, &trace);
        return trace.ops;
    };
    const std::vector<std::string> trace_a = trace_of(with_cdo.model);
    const std::vector<std::string> trace_b = trace_of(without_cdo.model);
    if (trace_a != trace_b) {
        throw Error("bench_inference_delta: inference op traces differ between checkpoints");
    }
    for (const std::string& op : trace_a) {
        if (op.find("cdo") != std::string::npos) {
            throw Error("bench_inference_delta: inference trace contains covariance op '" + op +
                        "'");
        }
    }

    auto time_model = [&](const ToyModel& model) {
        std::vector<double> times_ms;
        std::size_t lanes_sink = 0;
        for (int r = 0; r < reps; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            for (const TrainingPair& pair : sample) {
                const ForwardResult fwd = forward(model, pair.image);
                lanes_sink += decode_lanes(fwd.seg_probs, decode_threshold, stride).size();
            }
            const auto t1 = std::chrono::steady_clock::now();
            times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        return std::pair<double, std::size_t>(detail::quantile_ms(times_ms, 0.5), lanes_sink);
    };
    const auto [median_a, sink_a] = time_model(with_cdo.model);
    const auto [median_b, sink_b] = time_model(without_cdo.model);

    return nlohmann::json{{"format_version", 1},
                          {"parameter_count", params_a},
                          {"parameter_counts_equal", true},
                          {"inference_ops", trace_a},
                          {"trace_cdo_free", true},
                          {"reps", reps},
                          {"median_ms_with_cdo", median_a},
                          {"median_ms_without_cdo", median_b},
                          {"median_delta_ms", median_a - median_b},
                          {"decoded_lanes_with_cdo", sink_a},
                          {"decoded_lanes_without_cdo", sink_b}};
}

}  // namespace cdo
