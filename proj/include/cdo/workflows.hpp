#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "cdo/benchkit.hpp"
#include "cdo/errors.hpp"
#include "cdo/forward.hpp"
#include "cdo/grad.hpp"
#include "cdo/lanesynth.hpp"
#include "cdo/laneval.hpp"
#include "cdo/pgm.hpp"
#include "cdo/rng.hpp"
#include "cdo/trainer.hpp"

namespace cdo {

// Reproducible end-to-end workflows behind the CLI subcommands. Every
// workflow echoes its full effective configuration as config.json into the
// output directory; re-running with the same configuration reproduces every
// artifact byte for byte (nothing here writes timestamps).

struct RunConfig {
    std::string subcommand;
    std::string data_dir;
    std::string out_dir;
    std::string checkpoint;
    std::string resume;
    std::uint64_t seed = 1;

    // gen-data
    int scenes = 200;
    SceneParams scene{};

    // train (train.seed is overwritten by `seed` when the workflow runs)
    TrainConfig train{};

    // eval
    double iou = 0.5;
    bool iou75 = false;
    double decode_threshold = 0.25;
    double point_threshold = 2.0;
    int line_width = 0;  // 0 = scale 30 px @ 800-wide proportionally

    // gradcheck
    int trials = 50;
    bool inject_fault = false;

    // rif-demo
    int demo_iters = 200;
    double demo_lr = 2.0;
    int demo_channels = 4;

    // bench
    std::vector<std::string> bench_shapes = {"128x36x100", "128x45x80", "8x16x16"};
    int bench_reps = 20;
    std::vector<std::string> bench_variants = {"naive_loops", "matmul"};
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"subcommand", c.subcommand},
                       {"data_dir", c.data_dir},
                       {"out_dir", c.out_dir},
                       {"checkpoint", c.checkpoint},
                       {"resume", c.resume},
                       {"seed", c.seed},
                       {"scenes", c.scenes},
                       {"scene", c.scene},
                       {"train", c.train},
                       {"iou", c.iou},
                       {"iou75", c.iou75},
                       {"decode_threshold", c.decode_threshold},
                       {"point_threshold", c.point_threshold},
                       {"line_width", c.line_width},
                       {"trials", c.trials},
                       {"inject_fault", c.inject_fault},
                       {"demo_iters", c.demo_iters},
                       {"demo_lr", c.demo_lr},
                       {"demo_channels", c.demo_channels},
                       {"bench_shapes", c.bench_shapes},
                       {"bench_reps", c.bench_reps},
                       {"bench_variants", c.bench_variants}};
}

/// Partial update: only keys present in the JSON override the struct, so a
/// config file composes with defaults and command-line flags.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
    auto opt = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    opt("subcommand", c.subcommand);
    opt("data_dir", c.data_dir);
    opt("out_dir", c.out_dir);
    opt("checkpoint", c.checkpoint);
    opt("resume", c.resume);
    opt("seed", c.seed);
    opt("scenes", c.scenes);
    opt("scene", c.scene);
    opt("train", c.train);
    opt("iou", c.iou);
    opt("iou75", c.iou75);
    opt("decode_threshold", c.decode_threshold);
    opt("point_threshold", c.point_threshold);
    opt("line_width", c.line_width);
    opt("trials", c.trials);
    opt("inject_fault", c.inject_fault);
    opt("demo_iters", c.demo_iters);
    opt("demo_lr", c.demo_lr);
    opt("demo_channels", c.demo_channels);
    opt("bench_shapes", c.bench_shapes);
    opt("bench_reps", c.bench_reps);
    opt("bench_variants", c.bench_variants);
}

namespace detail {

inline void ensure_out_dir(const std::string& dir) {
    if (dir.empty()) throw ParamError("output directory not set");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

inline void write_config_echo(const RunConfig& cfg, const std::string& dir) {
    write_json_file(nlohmann::json(cfg), dir + "/config.json");
}

inline std::string ckpt_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%05d.json", epoch);
    return buf;
}

}  // namespace detail

// -- gen-data -------------------------------------------------------------

inline int run_gen_data(RunConfig cfg) {
    cfg.subcommand = "gen-data";
    if (cfg.scenes < 0) throw ParamError("gen-data: --scenes must be >= 0");
    detail::ensure_out_dir(cfg.out_dir);
    const Dataset ds = generate_dataset(cfg.scene, cfg.scenes, cfg.seed);
    write_dataset(ds, cfg.out_dir);
    detail::write_config_echo(cfg, cfg.out_dir);
    std::cout << "wrote " << ds.scenes.size() << " scenes to " << cfg.out_dir << "\n";
    return 0;
}

// -- train ------------------------------------------------------------------

inline int run_train(RunConfig cfg) {
    cfg.subcommand = "train";
    detail::ensure_out_dir(cfg.out_dir);
    const Dataset ds = read_dataset(cfg.data_dir);
    if (ds.scenes.empty()) throw ParamError("train: dataset at " + cfg.data_dir + " is empty");

    std::optional<TrainState> resume;
    if (!cfg.resume.empty()) {
        resume = load_checkpoint(cfg.resume);
        // Continue with the checkpoint's hyperparameters; only the target
        // epoch count may be overridden (epochs < 0 keeps the original).
        TrainConfig tc = resume->config;
        if (cfg.train.epochs >= 0) tc.epochs = cfg.train.epochs;
        cfg.train = tc;
    } else {
        if (cfg.train.epochs < 0) throw ParamError("train: --epochs must be >= 0");
        cfg.train.seed = cfg.seed;
    }
    cfg.train.validate();
    detail::write_config_echo(cfg, cfg.out_dir);

    const std::string out_dir = cfg.out_dir;
    const TrainState final_state =
        train(cfg.train, ds, std::move(resume), [&out_dir](const TrainState& state) {
            save_checkpoint(state, out_dir + "/" + detail::ckpt_name(state.completed_epochs - 1));
        });
    save_checkpoint(final_state, out_dir + "/ckpt_final.json");
    write_epoch_log(final_state.log, out_dir + "/epoch_log.csv");
    std::cout << "trained " << final_state.completed_epochs << " epochs; final total loss "
              << (final_state.log.empty() ? 0.0 : final_state.log.back().total) << "\n";
    return 0;
}

// -- eval ---------------------------------------------------------------

struct EvalAccumulator {
    long long tp = 0, fp = 0, fn = 0;
};

inline nlohmann::json eval_counts_json(const EvalAccumulator& acc) {
    MatchResult m;
    m.tp = static_cast<int>(acc.tp);
    m.fp = static_cast<int>(acc.fp);
    m.fn = static_cast<int>(acc.fn);
    const F1Stats f1 = f1_from_counts(m);
    return nlohmann::json{{"tp", acc.tp},         {"fp", acc.fp},       {"fn", acc.fn},
                          {"precision", f1.precision}, {"recall", f1.recall}, {"f1", f1.f1}};
}

/// Shared by run_eval and the ablation harness: decodes every scene with
/// the model and aggregates metrics at one IoU threshold.
inline nlohmann::json evaluate_model_on_dataset(const ToyModel& model, const Dataset& ds,
                                                double iou_threshold, double decode_threshold,
                                                double point_threshold, int line_width) {
    constexpr int stride = 4;
    EvalAccumulator acc;
    TusimpleCounts ts;
    long long scenes = 0;
    for (const SyntheticScene& scene : ds.scenes) {
        const int h = scene.image.rows(), w = scene.image.cols();
        const int width = line_width > 0 ? line_width : default_line_width(w);
        const ForwardResult fwd = forward(model, scene.image);
        const std::vector<Polyline> preds = decode_lanes(fwd.seg_probs, decode_threshold, stride);
        std::vector<Polyline> gts;
        for (const auto& lane : scene.lanes) {
            if (lane) gts.push_back(*lane);
        }
        const MatchResult m = match_and_count(preds, gts, iou_threshold, width, h, w);
        acc.tp += m.tp;
        acc.fp += m.fp;
        acc.fn += m.fn;
        std::vector<int> rows;
        for (int r = 0; r < h; r += stride) rows.push_back(r);
        const TusimpleMetrics tm =
            tusimple_metrics(preds, gts, point_threshold, rows, iou_threshold, width, h, w);
        ts.c_clip += tm.counts.c_clip;
        ts.s_clip += tm.counts.s_clip;
        ts.f_pred += tm.counts.f_pred;
        ts.n_pred += tm.counts.n_pred;
        ts.m_pred += tm.counts.m_pred;
        ts.n_gt += tm.counts.n_gt;
        ++scenes;
    }
    nlohmann::json out{{"scene_count", scenes}, {"counts", eval_counts_json(acc)}};
    out["tusimple"] = {
        {"accuracy", ts.s_clip == 0 ? 0.0 : static_cast<double>(ts.c_clip) / static_cast<double>(ts.s_clip)},
        {"fp_ratio", ts.n_pred == 0 ? 0.0 : static_cast<double>(ts.f_pred) / ts.n_pred},
        {"fn_ratio", ts.n_gt == 0 ? 0.0 : static_cast<double>(ts.m_pred) / ts.n_gt},
        {"c_clip", ts.c_clip},
        {"s_clip", ts.s_clip},
        {"f_pred", ts.f_pred},
        {"n_pred", ts.n_pred},
        {"m_pred", ts.m_pred},
        {"n_gt", ts.n_gt}};
    return out;
}

inline int run_eval(RunConfig cfg) {
    cfg.subcommand = "eval";
    detail::ensure_out_dir(cfg.out_dir);
    if (cfg.checkpoint.empty()) throw ParamError("eval: --ckpt is required");
    const Dataset ds = read_dataset(cfg.data_dir);
    if (ds.scenes.empty()) throw ParamError("eval: dataset at " + cfg.data_dir + " is empty");
    const TrainState state = load_checkpoint(cfg.checkpoint);
    detail::write_config_echo(cfg, cfg.out_dir);

    nlohmann::json metrics{{"format_version", 1}};
    char key[16];
    std::snprintf(key, sizeof(key), "iou_%.2f", cfg.iou);
    metrics[key] = evaluate_model_on_dataset(state.model, ds, cfg.iou, cfg.decode_threshold,
                                             cfg.point_threshold, cfg.line_width);
    if (cfg.iou75) {
        metrics["iou_0.75"] = evaluate_model_on_dataset(
            state.model, ds, 0.75, cfg.decode_threshold, cfg.point_threshold, cfg.line_width);
    }
    detail::write_json_file(metrics, cfg.out_dir + "/metrics.json");
    std::cout << metrics.dump(2) << "\n";
    return 0;
}

// -- gradcheck -------------------------------------------------------------

/// Random smooth instance for a gradcheck trial: positive features, one or
/// two random binary masks.
inline std::tuple<Tensor3, std::vector<LaneMask>, ExistenceVector> gradcheck_instance(
    SeededRng& rng) {
    const int c = rng.uniform_int(1, 4);
    const int h = rng.uniform_int(4, 8), w = rng.uniform_int(4, 8);
    Tensor3 f(c, h, w);
    for (double& v : f.data()) v = rng.uniform(0.1, 1.1);
    std::vector<LaneMask> masks;
    ExistenceVector exist;
    const int lanes = rng.uniform_int(1, 2);
    for (int n = 0; n < lanes; ++n) {
        Matrix grid(h, w);
        for (double& v : grid.data()) v = rng.uniform(0.0, 1.0) < 0.35 ? 1.0 : 0.0;
        masks.emplace_back(n, grid);
        exist.push_back(mask_is_empty(masks.back()) ? 0 : 1);
    }
    return {std::move(f), std::move(masks), std::move(exist)};
}

inline int run_gradcheck(RunConfig cfg) {
    cfg.subcommand = "gradcheck";
    if (cfg.trials < 1) throw ParamError("gradcheck: --trials must be >= 1");
    const double tolerance = 1e-4;
    double worst = 0.0;
    int worst_trial = -1;
    for (int t = 0; t < cfg.trials; ++t) {
        SeededRng rng = SeededRng::derive(cfg.seed, static_cast<std::uint64_t>(t));
        auto [f, masks, exist] = gradcheck_instance(rng);
        GradCheckReport rep;
        if (cfg.inject_fault && t == 0) {
            GradTensor analytic = cdo_loss_backward(f, masks, exist, CdoConfig{});
            analytic(0, 0, 0) += 0.1;
            rep = compare_grads(analytic, finite_diff_grad(f, masks, exist, CdoConfig{}));
        } else {
            rep = grad_check(f, masks, exist, CdoConfig{});
        }
        if (rep.max_rel_err > worst) {
            worst = rep.max_rel_err;
            worst_trial = t;
        }
    }
    const bool pass = worst < tolerance;
    nlohmann::json report{{"format_version", 1},
                          {"trials", cfg.trials},
                          {"max_rel_err", worst},
                          {"worst_trial", worst_trial},
                          {"tolerance", tolerance},
                          {"pass", pass}};
    if (!cfg.out_dir.empty()) {
        detail::ensure_out_dir(cfg.out_dir);
        detail::write_config_echo(cfg, cfg.out_dir);
        detail::write_json_file(report, cfg.out_dir + "/gradcheck.json");
    }
    std::cout << report.dump(2) << "\n";
    return pass ? 0 : 1;
}

// -- rif-demo ---------------------------------------------------------

/// Gradient descent on a free feature map (no model) against a fixed
/// synthetic mask set; writes a per-iteration RIF trace and covariance
/// heatmaps at the first, middle and final iterations.
inline int run_rif_demo(RunConfig cfg) {
    cfg.subcommand = "rif-demo";
    if (cfg.demo_iters < 1) throw ParamError("rif-demo: --iters must be >= 1");
    if (cfg.demo_channels < 1) throw ParamError("rif-demo: --channels must be >= 1");
    detail::ensure_out_dir(cfg.out_dir);
    detail::write_config_echo(cfg, cfg.out_dir);

    const SyntheticScene scene = gen_scene(cfg.scene, SeededRng::derive(cfg.seed, 0).state());
    const int feat_h = cfg.scene.feat_height > 0 ? cfg.scene.feat_height : cfg.scene.height / 4;
    const int feat_w = cfg.scene.feat_width > 0 ? cfg.scene.feat_width : cfg.scene.width / 4;
    const TrainingPair pair = scene_to_training_pair(scene, feat_h, feat_w);

    SeededRng init = SeededRng::derive(cfg.seed, 1);
    Tensor3 feature(cfg.demo_channels, feat_h, feat_w);
    for (double& v : feature.data()) v = init.uniform(0.0, 0.5);

    const CdoConfig& cc = cfg.train.cdo;
    std::vector<int> snapshot_iters{0, cfg.demo_iters / 2, cfg.demo_iters};
    auto snapshot = [&](int iter) {
        if (std::find(snapshot_iters.begin(), snapshot_iters.end(), iter) == snapshot_iters.end()) {
            return;
        }
        for (std::size_t n = 0; n < pair.masks.size(); ++n) {
            if (pair.exist[n] == 0) continue;
            const CovariancePair cov = covariance_pair(feature, 0, pair.masks[n]);
            char name[96];
            std::snprintf(name, sizeof(name), "/cov_h_lane%d_iter%05d.pgm",
                          static_cast<int>(n), iter);
            write_pgm_minmax(cfg.out_dir + name, cov.cov_h);
            std::snprintf(name, sizeof(name), "/cov_v_lane%d_iter%05d.pgm",
                          static_cast<int>(n), iter);
            write_pgm_minmax(cfg.out_dir + name, cov.cov_v);
        }
    };

    std::ofstream csv(cfg.out_dir + "/rif_demo.csv");
    if (!csv) throw IoError("rif-demo: cannot write CSV in " + cfg.out_dir);
    csv << "iteration,loss,mean_rif_h,mean_rif_v\n";
    char buf[160];
    auto log_row = [&](int iter) {
        double sum_h = 0.0, sum_v = 0.0;
        long long count = 0;
        cdo::detail::accumulate_rif(feature, pair.masks, pair.exist, ChannelPairing::AllChannels,
                                    cc.epsilon, sum_h, sum_v, count);
        const double loss = cdo_loss(feature, pair.masks, pair.exist, cc);
        const double rh = count > 0 ? sum_h / static_cast<double>(count) : 0.0;
        const double rv = count > 0 ? sum_v / static_cast<double>(count) : 0.0;
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", iter, loss, rh, rv);
        csv << buf;
    };

    for (int iter = 0; iter < cfg.demo_iters; ++iter) {
        log_row(iter);
        snapshot(iter);
        const GradTensor grad = cdo_loss_backward(feature, pair.masks, pair.exist, cc);
        double max_abs = 0.0;
        for (double g : grad.data()) max_abs = std::max(max_abs, std::fabs(g));
        if (max_abs == 0.0) {
            std::cerr << "rif-demo: gradient identically zero at iteration " << iter
                      << " (no existing lanes); stopping early\n";
            return 0;
        }
        for (std::size_t i = 0; i < feature.size(); ++i) {
            feature.data()[i] -= cfg.demo_lr * grad.data()[i];
        }
    }
    log_row(cfg.demo_iters);
    snapshot(cfg.demo_iters);
    std::cout << "rif-demo: wrote " << cfg.out_dir << "/rif_demo.csv\n";
    return 0;
}

// -- bench ------------------------------------------------------------

inline BenchShape parse_bench_shape(const std::string& text) {
    BenchShape s;
    char extra = 0;
    if (std::sscanf(text.c_str(), "%dx%dx%d%c", &s.c, &s.h, &s.w, &extra) != 3 || s.c <= 0 ||
        s.h <= 0 || s.w <= 0) {
        throw ParamError("bench: bad shape '" + text + "' (expected CxHxW)");
    }
    return s;
}

inline int run_bench(RunConfig cfg) {
    cfg.subcommand = "bench";
    std::vector<BenchShape> shapes;
    for (const std::string& t : cfg.bench_shapes) shapes.push_back(parse_bench_shape(t));
    const std::vector<BenchReport> reports = bench_cov(shapes, cfg.bench_variants, cfg.bench_reps);
    const nlohmann::json j = bench_report_json(reports);
    if (!cfg.out_dir.empty()) {
        detail::ensure_out_dir(cfg.out_dir);
        detail::write_config_echo(cfg, cfg.out_dir);
        detail::write_json_file(j, cfg.out_dir + "/bench.json");
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace cdo
