#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdo/errors.hpp"
#include "cdo/maskops.hpp"
#include "cdo/matrix.hpp"
#include "cdo/pgm.hpp"
#include "cdo/rng.hpp"

namespace cdo {

/// Knobs for the synthetic lane-scene generator. Lanes are quadratics
/// col(row) = curvature*(row - h/2)^2 + slope*(row - h/2) + base. A scene
/// draws one slope and one curvature from the configured ranges; each lane
/// deviates from them by at most the jitter amounts, so lanes stay roughly
/// parallel and the per-row separation constraint remains satisfiable.
/// Rendering: bright thick lines on a dark noisy background with optional
/// occlusion rectangles.
struct SceneParams {
    int height = 64;
    int width = 64;
    int lane_slots = 4;  // fixed slot count per dataset
    int min_lanes = 1;
    int max_lanes = 4;
    double slope_min = -0.25;
    double slope_max = 0.25;
    double slope_jitter = 0.04;
    double curvature_min = -0.003;
    double curvature_max = 0.003;
    double curvature_jitter = 0.0005;
    int thickness = 4;
    double min_separation = 8.0;  // horizontal gap between lanes at every row
    int occlusion_count_min = 0;
    int occlusion_count_max = 2;
    int occlusion_size_min = 4;
    int occlusion_size_max = 12;
    double noise_std = 0.03;
    double lane_brightness_min = 0.7;
    double lane_brightness_max = 1.0;
    double background_level = 0.1;
    // Declared feature resolution; when nonzero the thickness must be at
    // least ceil(src/dst) in both axes so downscaled masks stay non-empty.
    int feat_height = 16;
    int feat_width = 16;

    void validate() const {
        if (height <= 0 || width <= 0) throw ParamError("SceneParams: image dims must be positive");
        if (lane_slots <= 0) throw ParamError("SceneParams: lane_slots must be positive");
        if (min_lanes < 0 || max_lanes < min_lanes || max_lanes > lane_slots) {
            throw ParamError("SceneParams: lane count range invalid");
        }
        if (!(slope_min <= slope_max) || !(curvature_min <= curvature_max)) {
            throw ParamError("SceneParams: slope/curvature ranges invalid");
        }
        if (slope_jitter < 0.0 || curvature_jitter < 0.0) {
            throw ParamError("SceneParams: jitters must be >= 0");
        }
        if (thickness < 1) throw ParamError("SceneParams: thickness must be >= 1");
        if (!(min_separation > 0.0)) throw ParamError("SceneParams: min_separation must be > 0");
        if (occlusion_count_min < 0 || occlusion_count_max < occlusion_count_min) {
            throw ParamError("SceneParams: occlusion count range invalid");
        }
        if (occlusion_size_min < 1 || occlusion_size_max < occlusion_size_min) {
            throw ParamError("SceneParams: occlusion size range invalid");
        }
        if (noise_std < 0.0) throw ParamError("SceneParams: noise_std must be >= 0");
        if (!(lane_brightness_min <= lane_brightness_max)) {
            throw ParamError("SceneParams: brightness range invalid");
        }
        if (background_level < 0.0 || background_level > 1.0) {
            throw ParamError("SceneParams: background_level must be in [0,1]");
        }
        if ((feat_height > 0) != (feat_width > 0)) {
            throw ParamError("SceneParams: declare both feature dims or neither");
        }
        if (feat_height > 0) {
            const int need_h = (height + feat_height - 1) / feat_height;
            const int need_w = (width + feat_width - 1) / feat_width;
            if (thickness < std::max(need_h, need_w)) {
                throw ParamError(
                    "SceneParams: thickness too thin for the declared feature resolution; "
                    "downscaled masks could vanish");
            }
        }
    }

    bool operator==(const SceneParams&) const = default;
};

struct SyntheticScene {
    Matrix image;                                // intensities in [0,1], 1/255 steps
    std::vector<std::optional<Polyline>> lanes;  // one slot per lane, left to right
    ExistenceVector existence;                   // length lane_slots
    std::uint64_t seed = 0;
};

namespace detail {

struct LaneCurve {
    double base, slope, curvature;
    double col_at(double row, double mid) const {
        const double t = row - mid;
        return curvature * t * t + slope * t + base;
    }
};

// Parameter ranges may be degenerate (lo == hi pins the value).
inline double draw_range(SeededRng& rng, double lo, double hi) {
    return lo == hi ? lo : rng.uniform(lo, hi);
}

}  // namespace detail

/// Generates one scene, fully determined by (params, scene_seed). Lane
/// geometry is re-drawn up to a bounded number of attempts until every lane
/// stays inside the frame and every pair keeps min_separation at every row;
/// an infeasible configuration raises GenerationError.
inline SyntheticScene gen_scene(const SceneParams& params, std::uint64_t scene_seed) {
    params.validate();
    SeededRng rng(scene_seed);
    const int h = params.height, w = params.width;
    const double mid = h / 2.0;
    const double margin = params.thickness / 2 + 1.0;
    const int lane_count = rng.uniform_int(params.min_lanes, params.max_lanes);
    const double usable = w - 1.0 - 2.0 * margin;
    if (lane_count > 0 && usable <= 0.0) {
        throw GenerationError("gen_scene: image too narrow for the lane margin");
    }

    const double scene_slope = detail::draw_range(rng, params.slope_min, params.slope_max);
    const double scene_curv = detail::draw_range(rng, params.curvature_min, params.curvature_max);

    // Base columns come from jittered strata so lanes spread across the
    // frame; lanes may drift out at extreme rows (the rasterizer clips) but
    // every lane is in-frame at mid-height. Only per-row separation can
    // fail, hence the bounded retry.
    std::vector<detail::LaneCurve> curves;
    bool ok = lane_count == 0;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        curves.clear();
        const double stratum = usable / lane_count;
        for (int n = 0; n < lane_count; ++n) {
            const double center = margin + stratum * (n + 0.5);
            curves.push_back(
                {center + rng.uniform(-0.2, 0.2) * stratum,
                 scene_slope + detail::draw_range(rng, -params.slope_jitter, params.slope_jitter),
                 scene_curv + detail::draw_range(rng, -params.curvature_jitter,
                                                 params.curvature_jitter)});
        }
        ok = true;
        for (int r = 0; r < h && ok; ++r) {
            for (int i = 0; i + 1 < lane_count && ok; ++i) {
                for (int j = i + 1; j < lane_count && ok; ++j) {
                    if (std::fabs(curves[static_cast<std::size_t>(i)].col_at(r, mid) -
                                  curves[static_cast<std::size_t>(j)].col_at(r, mid)) <
                        params.min_separation) {
                        ok = false;
                    }
                }
            }
        }
    }
    if (!ok) {
        throw GenerationError("gen_scene: could not satisfy lane separation after 200 attempts");
    }

    SyntheticScene scene;
    scene.seed = scene_seed;
    scene.lanes.resize(static_cast<std::size_t>(params.lane_slots));
    scene.existence.assign(static_cast<std::size_t>(params.lane_slots), 0);

    Matrix image = Matrix::constant(h, w, params.background_level);
    for (int n = 0; n < lane_count; ++n) {
        Polyline line;
        line.thickness = params.thickness;
        for (int r = 0; r < h; ++r) {
            line.points.push_back({static_cast<double>(r), curves[static_cast<std::size_t>(n)].col_at(r, mid)});
        }
        const double brightness =
            detail::draw_range(rng, params.lane_brightness_min, params.lane_brightness_max);
        const LaneMask mask = rasterize_polyline(line, h, w, n);
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                if (mask.grid(r, c) == 1.0) image(r, c) = brightness;
            }
        }
        scene.lanes[static_cast<std::size_t>(n)] = std::move(line);
        scene.existence[static_cast<std::size_t>(n)] = 1;
    }

    const int occlusions = rng.uniform_int(params.occlusion_count_min, params.occlusion_count_max);
    for (int k = 0; k < occlusions; ++k) {
        const int sh = std::min(rng.uniform_int(params.occlusion_size_min, params.occlusion_size_max), h);
        const int sw = std::min(rng.uniform_int(params.occlusion_size_min, params.occlusion_size_max), w);
        const int r0 = rng.uniform_int(0, h - sh);
        const int c0 = rng.uniform_int(0, w - sw);
        for (int r = r0; r < r0 + sh; ++r) {
            for (int c = c0; c < c0 + sw; ++c) image(r, c) = params.background_level;
        }
    }

    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double noisy = image(r, c) + rng.normal(0.0, params.noise_std);
            const double clamped = std::min(1.0, std::max(0.0, noisy));
            image(r, c) = static_cast<double>(std::lround(clamped * 255.0)) / 255.0;
        }
    }
    scene.image = std::move(image);
    return scene;
}

struct Dataset {
    SceneParams params;
    std::uint64_t master_seed = 0;
    std::vector<SyntheticScene> scenes;
};

/// Scene i draws from the sub-stream derive(master_seed, i), so any scene
/// can be regenerated in isolation.
inline Dataset generate_dataset(const SceneParams& params, int count, std::uint64_t master_seed) {
    params.validate();
    if (count < 0) throw ParamError("generate_dataset: count must be >= 0");
    Dataset ds{params, master_seed, {}};
    ds.scenes.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        ds.scenes.push_back(gen_scene(params, SeededRng::derive(master_seed, static_cast<std::uint64_t>(i)).state()));
    }
    return ds;
}

inline void to_json(nlohmann::json& j, const SceneParams& p) {
    j = nlohmann::json{{"height", p.height},
                       {"width", p.width},
                       {"lane_slots", p.lane_slots},
                       {"min_lanes", p.min_lanes},
                       {"max_lanes", p.max_lanes},
                       {"slope_min", p.slope_min},
                       {"slope_max", p.slope_max},
                       {"curvature_min", p.curvature_min},
                       {"curvature_max", p.curvature_max},
                       {"thickness", p.thickness},
                       {"min_separation", p.min_separation},
                       {"occlusion_count_min", p.occlusion_count_min},
                       {"occlusion_count_max", p.occlusion_count_max},
                       {"occlusion_size_min", p.occlusion_size_min},
                       {"occlusion_size_max", p.occlusion_size_max},
                       {"noise_std", p.noise_std},
                       {"lane_brightness_min", p.lane_brightness_min},
                       {"lane_brightness_max", p.lane_brightness_max},
                       {"background_level", p.background_level},
                       {"feat_height", p.feat_height},
                       {"feat_width", p.feat_width}};
}

inline void from_json(const nlohmann::json& j, SceneParams& p) {
    j.at("height").get_to(p.height);
    j.at("width").get_to(p.width);
    j.at("lane_slots").get_to(p.lane_slots);
    j.at("min_lanes").get_to(p.min_lanes);
    j.at("max_lanes").get_to(p.max_lanes);
    j.at("slope_min").get_to(p.slope_min);
    j.at("slope_max").get_to(p.slope_max);
    j.at("curvature_min").get_to(p.curvature_min);
    j.at("curvature_max").get_to(p.curvature_max);
    j.at("thickness").get_to(p.thickness);
    j.at("min_separation").get_to(p.min_separation);
    j.at("occlusion_count_min").get_to(p.occlusion_count_min);
    j.at("occlusion_count_max").get_to(p.occlusion_count_max);
    j.at("occlusion_size_min").get_to(p.occlusion_size_min);
    j.at("occlusion_size_max").get_to(p.occlusion_size_max);
    j.at("noise_std").get_to(p.noise_std);
    j.at("lane_brightness_min").get_to(p.lane_brightness_min);
    j.at("lane_brightness_max").get_to(p.lane_brightness_max);
    j.at("background_level").get_to(p.background_level);
    j.at("feat_height").get_to(p.feat_height);
    j.at("feat_width").get_to(p.feat_width);
}

namespace detail {

inline std::string scene_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%05d", index);
    return buf;
}

}  // namespace detail

/// Layout: manifest.json plus per scene scene_%05d.pgm (P5 image) and
/// scene_%05d.lanes.json (polylines, thickness, existence bits, seed).
inline void write_dataset(const Dataset& ds, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("write_dataset: cannot create " + dir + ": " + ec.message());

    nlohmann::json manifest{{"format_version", 1},
                            {"master_seed", ds.master_seed},
                            {"scene_count", ds.scenes.size()},
                            {"lane_slots", ds.params.lane_slots},
                            {"params", ds.params}};
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("write_dataset: cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";

    for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
        const SyntheticScene& scene = ds.scenes[i];
        const std::string stem = dir + "/" + detail::scene_stem(static_cast<int>(i));
        write_pgm(stem + ".pgm", scene.image);

        nlohmann::json lanes = nlohmann::json::array();
        int thickness = 1;
        for (const auto& lane : scene.lanes) {
            nlohmann::json pts = nlohmann::json::array();
            if (lane) {
                thickness = lane->thickness;
                for (const PolyPoint& p : lane->points) {
                    pts.push_back(nlohmann::json::array({p.row, p.col}));
                }
            }
            lanes.push_back(std::move(pts));
        }
        nlohmann::json meta{{"format_version", 1},
                            {"existence", scene.existence},
                            {"lanes", std::move(lanes)},
                            {"thickness", thickness},
                            {"seed", scene.seed}};
        std::ofstream lf(stem + ".lanes.json");
        if (!lf) throw IoError("write_dataset: cannot write " + stem + ".lanes.json");
        lf << meta.dump(2) << "\n";
    }
}

inline Dataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir)) throw IoError("read_dataset: no such directory: " + dir);
    const std::string manifest_path = dir + "/manifest.json";
    if (!fs::exists(manifest_path)) {
        // An empty directory is a valid empty dataset.
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() == ".pgm") {
                throw FormatError("read_dataset: scenes present but manifest.json missing in " + dir);
            }
        }
        return Dataset{};
    }

    std::ifstream mf(manifest_path);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_dataset: bad manifest.json in " + dir + ": " + e.what());
    }
    Dataset ds;
    int count = 0;
    try {
        if (manifest.at("format_version").get<int>() != 1) {
            throw FormatError("read_dataset: unsupported format_version in " + manifest_path);
        }
        ds.master_seed = manifest.at("master_seed").get<std::uint64_t>();
        ds.params = manifest.at("params").get<SceneParams>();
        count = manifest.at("scene_count").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_dataset: manifest field error in " + manifest_path + ": " + e.what());
    }

    for (int i = 0; i < count; ++i) {
        const std::string stem = dir + "/" + detail::scene_stem(i);
        SyntheticScene scene;
        scene.image = read_pgm(stem + ".pgm");

        const std::string meta_path = stem + ".lanes.json";
        std::ifstream lf(meta_path);
        if (!lf) throw IoError("read_dataset: cannot open " + meta_path);
        nlohmann::json meta;
        try {
            lf >> meta;
            scene.existence = meta.at("existence").get<ExistenceVector>();
            scene.seed = meta.at("seed").get<std::uint64_t>();
            const int thickness = meta.at("thickness").get<int>();
            for (const auto& pts : meta.at("lanes")) {
                if (pts.empty()) {
                    scene.lanes.emplace_back(std::nullopt);
                    continue;
                }
                Polyline line;
                line.thickness = thickness;
                for (const auto& p : pts) {
                    line.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
                }
                scene.lanes.emplace_back(std::move(line));
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("read_dataset: bad scene file " + meta_path + ": " + e.what());
        }
        if (scene.existence.size() != scene.lanes.size()) {
            throw FormatError("read_dataset: existence/lanes length mismatch in " + meta_path);
        }
        for (std::size_t n = 0; n < scene.lanes.size(); ++n) {
            if (scene.existence[n] != (scene.lanes[n] ? 1 : 0)) {
                throw FormatError("read_dataset: existence bit disagrees with lanes in " + meta_path);
            }
        }
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

/// One training sample: full-resolution image, per-slot masks at feature
/// resolution, existence bits.
struct TrainingPair {
    Matrix image;
    std::vector<LaneMask> masks;
    ExistenceVector exist;
};

inline TrainingPair scene_to_training_pair(const SyntheticScene& scene, int feat_h, int feat_w) {
    if (feat_h <= 0 || feat_w <= 0) {
        throw ParamError("scene_to_training_pair: feature dims must be positive");
    }
    TrainingPair pair;
    pair.image = scene.image;
    pair.exist = scene.existence;
    const int h = scene.image.rows(), w = scene.image.cols();
    for (std::size_t n = 0; n < scene.lanes.size(); ++n) {
        if (scene.lanes[n]) {
            pair.masks.push_back(resize_nearest(
                rasterize_polyline(*scene.lanes[n], h, w, static_cast<int>(n)), feat_h, feat_w));
        } else {
            pair.masks.emplace_back(static_cast<int>(n), Matrix(feat_h, feat_w));
        }
    }
    return pair;
}

}  // namespace cdo
