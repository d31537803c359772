// Command-line front end: gen-data | train | eval | gradcheck | rif-demo |
// bench. Config precedence is defaults < --config file < explicit flags;
// every run echoes the effective settings as config.json in its output
// directory. Exit codes: 0 success, 1 check/validation failure, 2 usage
// error.

#include <cstring>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdo/workflows.hpp"

namespace {

void load_config_file(const std::string& path, cdo::RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw cdo::ParamError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
        j.get_to(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw cdo::ParamError("bad config file " + path + ": " + e.what());
    }
}

// The config file must be applied before flag defaults bind, so scan for
// --config ahead of CLI11.
std::string prescan_config_path(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) return argv[i + 1];
        if (std::strncmp(argv[i], "--config=", 9) == 0) return argv[i] + 9;
    }
    return {};
}

void add_scene_options(CLI::App* cmd, cdo::SceneParams& scene) {
    cmd->add_option("--height", scene.height, "image height in pixels");
    cmd->add_option("--width", scene.width, "image width in pixels");
    cmd->add_option("--lane-slots", scene.lane_slots, "fixed lane slot count");
    cmd->add_option("--min-lanes", scene.min_lanes, "minimum lanes per scene");
    cmd->add_option("--max-lanes", scene.max_lanes, "maximum lanes per scene");
    cmd->add_option("--slope-min", scene.slope_min, "lane slope range lower bound");
    cmd->add_option("--slope-max", scene.slope_max, "lane slope range upper bound");
    cmd->add_option("--curv-min", scene.curvature_min, "lane curvature range lower bound");
    cmd->add_option("--curv-max", scene.curvature_max, "lane curvature range upper bound");
    cmd->add_option("--thickness", scene.thickness, "lane line thickness in pixels");
    cmd->add_option("--min-separation", scene.min_separation, "minimum lane gap per row");
    cmd->add_option("--occl-count-min", scene.occlusion_count_min, "occlusion count minimum");
    cmd->add_option("--occl-count-max", scene.occlusion_count_max, "occlusion count maximum");
    cmd->add_option("--occl-size-min", scene.occlusion_size_min, "occlusion size minimum");
    cmd->add_option("--occl-size-max", scene.occlusion_size_max, "occlusion size maximum");
    cmd->add_option("--noise-std", scene.noise_std, "additive Gaussian noise std");
    cmd->add_option("--brightness-min", scene.lane_brightness_min, "lane brightness minimum");
    cmd->add_option("--brightness-max", scene.lane_brightness_max, "lane brightness maximum");
    cmd->add_option("--background", scene.background_level, "background intensity");
    cmd->add_option("--feat-height", scene.feat_height, "declared feature map height");
    cmd->add_option("--feat-width", scene.feat_width, "declared feature map width");
}

}  // namespace

int main(int argc, char** argv) {
    cdo::RunConfig cfg;
    std::string config_path;

    try {
        config_path = prescan_config_path(argc, argv);
        if (!config_path.empty()) load_config_file(config_path, cfg);
    } catch (const cdo::ParamError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    CLI::App app{"covariance-alignment lane detection toolkit"};
    app.require_subcommand(1);
    app.add_option("--config", config_path, "JSON config file (applied before flags)");

    std::string norm = cfg.train.cdo.norm == cdo::ScoreNorm::HalfChannelMean ? "half" : "unit";
    std::string pairing =
        cfg.train.pairing == cdo::ChannelPairing::AllChannels ? "all" : "per-slot";

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic lane dataset");
    gen->add_option("--config", config_path, "JSON config file");
    gen->add_option("--out", cfg.out_dir, "output dataset directory")->required();
    gen->add_option("--scenes", cfg.scenes, "number of scenes")->check(CLI::NonNegativeNumber);
    gen->add_option("--seed", cfg.seed, "master seed");
    add_scene_options(gen, cfg.scene);

    CLI::App* train = app.add_subcommand("train", "train the toy segmentation model");
    train->add_option("--config", config_path, "JSON config file");
    train->add_option("--data", cfg.data_dir, "dataset directory")->required();
    train->add_option("--out", cfg.out_dir, "output directory")->required();
    train->add_option("--seed", cfg.seed, "training seed");
    CLI::Option* epochs_opt = train->add_option("--epochs", cfg.train.epochs, "total epochs");
    train->add_option("--lr", cfg.train.lr, "SGD learning rate");
    train->add_option("--batch", cfg.train.batch_size, "batch size")->check(CLI::PositiveNumber);
    train->add_option("--hidden", cfg.train.hidden_channels, "hidden conv channels")
        ->check(CLI::PositiveNumber);
    train->add_option("--f-seg", cfg.train.loss.f_seg, "segmentation loss coefficient");
    train->add_option("--f-exist", cfg.train.loss.f_exist, "existence loss coefficient");
    train->add_option("--f-cdo", cfg.train.loss.f_cdo, "covariance loss coefficient");
    CLI::Option* alpha_opt =
        train->add_option("--alpha", cfg.train.cdo.alpha, "horizontal direction weight");
    CLI::Option* beta_opt =
        train->add_option("--beta", cfg.train.cdo.beta, "vertical direction weight");
    train->add_option("--epsilon", cfg.train.cdo.epsilon, "RIF denominator floor");
    train->add_option("--norm", norm, "score normalization: half (1/2C) or unit (1/C)")
        ->check(CLI::IsMember({"half", "unit"}));
    train->add_option("--cdo-at", cfg.train.cdo_enable_fraction,
                      "fraction of epochs after which the covariance loss joins");
    train->add_option("--pairing", pairing, "channel pairing: all or per-slot")
        ->check(CLI::IsMember({"all", "per-slot"}));
    train->add_option("--resume", cfg.resume, "checkpoint to continue from");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--config", config_path, "JSON config file");
    eval->add_option("--data", cfg.data_dir, "dataset directory")->required();
    eval->add_option("--ckpt", cfg.checkpoint, "checkpoint file")->required();
    eval->add_option("--out", cfg.out_dir, "output directory")->required();
    eval->add_option("--iou", cfg.iou, "IoU threshold for lane matching");
    eval->add_flag("--iou75", cfg.iou75, "also report metrics at IoU 0.75");
    eval->add_option("--decode-threshold", cfg.decode_threshold, "decode probability threshold");
    eval->add_option("--point-threshold", cfg.point_threshold,
                     "point accuracy column tolerance in pixels");
    eval->add_option("--line-width", cfg.line_width,
                     "rasterized line width for IoU (0 = proportional default)");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients");
    gradcheck->add_option("--config", config_path, "JSON config file");
    gradcheck->add_option("--trials", cfg.trials, "number of random instances")
        ->check(CLI::PositiveNumber);
    gradcheck->add_option("--seed", cfg.seed, "instance seed");
    gradcheck->add_option("--out", cfg.out_dir, "optional output directory");
    gradcheck->add_flag("--inject-fault", cfg.inject_fault)->group("");  // test hook

    CLI::App* rif =
        app.add_subcommand("rif-demo", "gradient descent on a free feature map; RIF trace");
    rif->add_option("--config", config_path, "JSON config file");
    rif->add_option("--out", cfg.out_dir, "output directory")->required();
    rif->add_option("--seed", cfg.seed, "demo seed");
    rif->add_option("--iters", cfg.demo_iters, "gradient descent iterations")
        ->check(CLI::PositiveNumber);
    rif->add_option("--lr", cfg.demo_lr, "descent step size");
    rif->add_option("--channels", cfg.demo_channels, "free feature map channels")
        ->check(CLI::PositiveNumber);
    add_scene_options(rif, cfg.scene);

    CLI::App* bench = app.add_subcommand("bench", "covariance computation microbenchmark");
    bench->add_option("--config", config_path, "JSON config file");
    bench->add_option("--shape", cfg.bench_shapes, "shape CxHxW (repeatable)");
    bench->add_option("--reps", cfg.bench_reps, "timed repetitions");
    bench->add_option("--variant", cfg.bench_variants, "variant name (repeatable)")
        ->check(CLI::IsMember({"naive_loops", "matmul"}));
    bench->add_option("--out", cfg.out_dir, "optional output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    cfg.train.cdo.norm =
        norm == "half" ? cdo::ScoreNorm::HalfChannelMean : cdo::ScoreNorm::ChannelMean;
    cfg.train.pairing =
        pairing == "all" ? cdo::ChannelPairing::AllChannels : cdo::ChannelPairing::PerSlot;
    if (alpha_opt->count() > 0 && beta_opt->count() == 0) {
        cfg.train.cdo.beta = 1.0 - cfg.train.cdo.alpha;
    }
    // Resuming keeps the checkpoint's epoch target unless --epochs says
    // otherwise.
    if (!cfg.resume.empty() && epochs_opt->count() == 0) cfg.train.epochs = -1;

    try {
        if (app.got_subcommand(gen)) return cdo::run_gen_data(cfg);
        if (app.got_subcommand(train)) return cdo::run_train(cfg);
        if (app.got_subcommand(eval)) return cdo::run_eval(cfg);
        if (app.got_subcommand(gradcheck)) return cdo::run_gradcheck(cfg);
        if (app.got_subcommand(rif)) return cdo::run_rif_demo(cfg);
        if (app.got_subcommand(bench)) return cdo::run_bench(cfg);
    } catch (const cdo::ParamError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const cdo::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
