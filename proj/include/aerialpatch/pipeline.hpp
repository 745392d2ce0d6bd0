// SPDX-License-Identifier: Apache-2.0
#pragma once

// The CLI subcommands as library calls. Each reads a Config, writes its
// artifacts into output_dir and a manifest-<command>.json beside them.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aerialpatch/augmentation.hpp"
#include "aerialpatch/config.hpp"
#include "aerialpatch/core_types.hpp"
#include "aerialpatch/detector.hpp"
#include "aerialpatch/embedding.hpp"
#include "aerialpatch/error.hpp"
#include "aerialpatch/io/dataset.hpp"
#include "aerialpatch/io/image_io.hpp"
#include "aerialpatch/io/serialize.hpp"
#include "aerialpatch/loss.hpp"
#include "aerialpatch/metrics.hpp"
#include "aerialpatch/optimize.hpp"
#include "aerialpatch/plot.hpp"
#include "aerialpatch/rng.hpp"
#include "aerialpatch/synthetic.hpp"
#include "aerialpatch/toy_detector.hpp"
#include "aerialpatch/weather.hpp"

namespace aerialpatch {

inline constexpr const char* kVersion = "0.1.0";

// Stream ids for derive_seed so each consumer of the master seed is independent.
inline constexpr std::uint64_t kStreamTrainScenes = 1;
inline constexpr std::uint64_t kStreamTestScenes = 2;
inline constexpr std::uint64_t kStreamEval = 3;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

inline std::string file_digest(const std::string& path) {
    const auto bytes = read_text_file(path);
    return fnv1a_hex(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

inline std::filesystem::path prepare_output_dir(const Config& cfg) {
    const std::filesystem::path dir = cfg.require_path("output_dir");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
    return dir;
}

/// Manifest: command, version, full config echo, seeds, detector checksum and
/// digests of input/output files. Contains nothing run-specific beyond that.
inline void write_manifest(const std::filesystem::path& dir, const std::string& command, const Config& cfg,
                           const std::optional<std::string>& detector_checksum, const OrderedJson& files) {
    OrderedJson m;
    m["command"] = command;
    m["version"] = kVersion;
    m["config"] = cfg.to_json();
    m["seeds"] = {{"seed", cfg.str("seed")}, {"detector.seed", cfg.str("detector.seed")}};
    m["detector_checksum"] = detector_checksum ? Json(*detector_checksum) : Json(nullptr);
    m["files"] = files;
    write_file_atomic((dir / ("manifest-" + command + ".json")).string(), m.dump(2) + "\n");
}

inline ToyDetector load_detector(const Config& cfg) {
    const auto& path = cfg.str("detector.path");
    if (path.empty()) throw ValidationError("detector.path must point to a detector checkpoint");
    if (!std::filesystem::exists(path)) throw ValidationError("missing detector checkpoint: " + path);
    return ToyDetector::load(path);
}

inline std::string csv_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline Image piece_preview(const Image& piece) {
    Image out = piece;
    out.clamp();
    return out;
}

inline std::vector<std::string> piece_names(PatchDesign design) {
    if (design == PatchDesign::On) return {""};
    return {"_left", "_top", "_right"};
}

// ---------------------------------------------------------------------------
// gen-synthetic
// ---------------------------------------------------------------------------

inline void run_gen_synthetic(const Config& cfg) {
    const auto dir = prepare_output_dir(cfg);
    const auto params = scene_params_from(cfg);
    const auto seed = cfg.unsigned_integer("seed");
    const long counts[2] = {cfg.integer("gen.train_count"), cfg.integer("gen.test_count")};
    if (counts[0] < 1 || counts[1] < 1) throw ValidationError("gen.train_count and gen.test_count must be >= 1");
    OrderedJson files = OrderedJson::object();
    const char* splits[2] = {"train", "test"};
    const std::uint64_t streams[2] = {kStreamTrainScenes, kStreamTestScenes};
    for (int s = 0; s < 2; ++s) {
        std::filesystem::create_directories(dir / splits[s]);
        Rng rng(derive_seed(seed, streams[s]));
        DetectionSet truth;
        for (long i = 0; i < counts[s]; ++i) {
            const auto scene = gen_synthetic_scene(params, rng);
            char name[32];
            std::snprintf(name, sizeof name, "%s_%05ld.png", splits[s], i);
            write_png((dir / splits[s] / name).string(), scene.image);
            auto& dets = truth.per_image[name];
            for (const auto& b : scene.boxes) dets.push_back({b, 1.0});
        }
        const auto path = dir / (std::string(splits[s]) + "_boxes.json");
        save_detection_set(path.string(), truth);
        files[path.filename().string()] = file_digest(path.string());
    }
    write_manifest(dir, "gen-synthetic", cfg, std::nullopt, files);
    std::cout << "wrote " << counts[0] << " train / " << counts[1] << " test scenes to " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// train-detector
// ---------------------------------------------------------------------------

inline void run_train_detector(const Config& cfg) {
    const auto dir = prepare_output_dir(cfg);
    const auto& scene = cfg.require_path("scene");
    std::string truth_path = cfg.str("annotations.train");
    if (truth_path.empty()) truth_path = (std::filesystem::path(scene) / "train_boxes.json").string();
    const auto truth = load_detection_set(truth_path);
    const auto dcfg = detector_config_from(cfg);
    const auto tcfg = detector_train_config_from(cfg);

    std::vector<LabeledImage> data;
    for (const auto& p : list_images(std::filesystem::path(scene) / "train")) {
        const auto id = p.filename().string();
        if (!truth.per_image.contains(id)) throw ValidationError("no ground truth for " + id);
        const Image img = read_image(p.string());
        const auto lb = Letterbox::fit(img.width(), img.height(), dcfg.input_size);
        LabeledImage li{apply_letterbox(img, lb), {}};
        for (const auto& d : truth.at(id)) li.boxes.push_back(lb.to_canvas(d.box));
        data.push_back(std::move(li));
    }
    if (data.empty()) throw ValidationError("empty split");

    ToyDetector det(dcfg);
    det.initialize(tcfg.seed);
    std::string curve = "epoch,loss\n";
    train_toy_detector(det, data, tcfg, [&](const DetectorEpochStats& s) {
        curve += std::to_string(s.epoch) + "," + csv_number(s.loss) + "\n";
        std::cout << "epoch " << s.epoch << " loss " << s.loss << "\n";
    });
    const auto path = dir / "detector.bin";
    det.save(path.string());
    write_file_atomic((dir / "detector_loss.csv").string(), curve);
    write_manifest(dir, "train-detector", cfg, det.checksum(),
                   {{"detector.bin", file_digest(path.string())}, {"ground_truth", file_digest(truth_path)}});
    std::cout << "detector checksum " << det.checksum() << "\n";
}

// ---------------------------------------------------------------------------
// annotate
// ---------------------------------------------------------------------------

struct AnnotationResult {
    DetectionSet train;
    DetectionSet test;
};

/// Runs the detector over both splits at the annotation thresholds.
inline AnnotationResult build_annotations(const SceneDataset& dataset, const Detector& detector, double threshold = 0.5,
                                          double nms_iou = 0.4) {
    validate_dataset(dataset);
    if (threshold < 0.5) throw ValidationError("annotation threshold must be >= 0.5");
    AnnotationResult r;
    r.train.annotation_threshold = r.test.annotation_threshold = threshold;
    for (const auto& img : dataset.train) r.train.per_image[img.id] = detect(detector, img.pixels, threshold, nms_iou);
    for (const auto& img : dataset.test) r.test.per_image[img.id] = detect(detector, img.pixels, threshold, nms_iou);
    r.train.validate();
    r.test.validate();
    return r;
}

inline void run_annotate(const Config& cfg) {
    const auto dir = prepare_output_dir(cfg);
    const auto det = load_detector(cfg);
    const auto dataset = load_scene(cfg.require_path("scene"));
    const auto report = validate_dataset(dataset);
    const auto ann = build_annotations(dataset, det, cfg.num("annotate.threshold"), cfg.num("annotate.nms"));
    const auto train_path = dir / "annotations_train.json", test_path = dir / "annotations_test.json";
    save_detection_set(train_path.string(), ann.train);
    save_detection_set(test_path.string(), ann.test);

    const double review_below = cfg.num("annotate.review_below");
    std::string review = "split,image,x_min,y_min,x_max,y_max,objectness\n";
    for (const auto& [split, set] : {std::pair{"train", &ann.train}, std::pair{"test", &ann.test}})
        for (const auto& [id, dets] : set->per_image)
            for (const auto& d : dets)
                if (d.objectness < review_below)
                    review += std::string(split) + "," + id + "," + csv_number(d.box.x_min) + "," + csv_number(d.box.y_min) +
                              "," + csv_number(d.box.x_max) + "," + csv_number(d.box.y_max) + "," +
                              csv_number(d.objectness) + "\n";
    write_file_atomic((dir / "annotation_review.csv").string(), review);

    OrderedJson rep;
    rep["scene"] = dataset.scene_name;
    rep["train_images"] = report.train_count;
    rep["test_images"] = report.test_count;
    rep["train_detections"] = ann.train.total();
    rep["test_detections"] = ann.test.total();
    rep["unreadable"] = dataset.unreadable;
    OrderedJson res = OrderedJson::array();
    for (const auto& [wh, n] : report.resolutions) res.push_back({{"width", wh.first}, {"height", wh.second}, {"count", n}});
    rep["resolutions"] = res;
    write_file_atomic((dir / "annotation_report.json").string(), rep.dump(2) + "\n");
    write_manifest(dir, "annotate", cfg, det.checksum(),
                   {{"annotations_train.json", file_digest(train_path.string())},
                    {"annotations_test.json", file_digest(test_path.string())}});
    std::cout << "annotated " << ann.train.total() << " train / " << ann.test.total() << " test cars\n";
}

// ---------------------------------------------------------------------------
// train-patch
// ---------------------------------------------------------------------------

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
    std::string s = "epoch,mean_loss,mean_max_objectness,nps,tv\n";
    for (const auto& p : curve)
        s += std::to_string(p.epoch) + "," + csv_number(p.mean_loss) + "," + csv_number(p.mean_max_objectness) + "," +
             csv_number(p.nps) + "," + csv_number(p.tv) + "\n";
    return s;
}

inline SceneDataset load_train_split(const std::string& scene_dir) {
    SceneDataset ds;
    ds.scene_name = std::filesystem::path(scene_dir).filename().string();
    for (const auto& p : list_images(std::filesystem::path(scene_dir) / "train"))
        ds.train.push_back({p.filename().string(), read_image(p.string())});
    if (ds.train.empty()) throw ValidationError("empty split");
    return ds;
}

inline void run_train_patch(const Config& cfg) {
    const auto dir = prepare_output_dir(cfg);
    const auto det = load_detector(cfg);
    const auto checksum_before = det.checksum();
    const auto dataset = load_train_split(cfg.require_path("scene"));
    const auto ann_path = cfg.require_path("annotations.train");
    const auto ann = load_detection_set(ann_path, 0.5);
    const auto design = design_from(cfg);
    const auto dims = piece_dims_from(cfg);
    const auto settings = loss_settings_from(cfg);
    const auto tcfg = train_config_from(cfg);
    const auto colors = load_color_set(cfg.str("colors.path"));

    OptimizeHooks hooks;
    hooks.output_dir = dir.string();
    hooks.config_json = cfg.to_json().dump();
    if (!cfg.str("train.resume").empty()) {
        hooks.resume = decode_checkpoint(read_text_file(cfg.str("train.resume")));
        if (hooks.resume->config_json != hooks.config_json)
            std::cerr << "warning: resuming from a checkpoint written with a different configuration\n";
    }
    const int every = std::max(1, tcfg.epochs / 20);
    hooks.on_epoch = [&](const CurvePoint& p) {
        if (p.epoch % every == 0 || p.epoch == tcfg.epochs)
            std::cout << "epoch " << p.epoch << " loss " << p.mean_loss << " max_obj " << p.mean_max_objectness << "\n";
    };
    const auto result = optimize_patch(dataset, ann, design, dims, settings, tcfg, det, colors, hooks);
    if (det.checksum() != checksum_before) throw Error("detector parameters changed during patch optimisation");

    save_patch((dir / "patch.bin").string(), result.patch);
    save_patch((dir / "patch_initial.bin").string(), result.initial);
    write_file_atomic((dir / "loss_curve.csv").string(), curve_csv(result.curve));
    const auto names = piece_names(design);
    for (int p = 0; p < result.patch.piece_count(); ++p)
        write_png((dir / ("patch" + names[static_cast<std::size_t>(p)] + ".png")).string(), piece_preview(result.patch.piece(p)));
    write_manifest(dir, "train-patch", cfg, det.checksum(),
                   {{"annotations.train", file_digest(ann_path)},
                    {"patch.bin", file_digest((dir / "patch.bin").string())},
                    {"loss_curve.csv", file_digest((dir / "loss_curve.csv").string())}});
}

// ---------------------------------------------------------------------------
// eval-digital
// ---------------------------------------------------------------------------

struct DigitalEvalResult {
    double aorr = 0.0;
    PrResult pr;
    std::size_t images = 0;
    std::size_t detections = 0;
    std::map<std::string, std::vector<MatchedPair>> pairs;
    DetectionSet attacked;
};

struct DigitalEvalOptions {
    bool weather = false;  // STD_W
    bool augment = false;
    double retrieval_threshold = kRetrievalThreshold;
    double nms_iou = 0.4;
    double min_iou = 0.5;
    double pr_iou = 0.5;
    bool reverse_compose = false;
    AorrNormalization normalization = AorrNormalization::TotalDetections;
    std::uint64_t seed = 0;
};

/// Embeds `patch` (or nothing, for the no-op patch) at every annotated car
/// of every test image, optionally adds one weather effect per image, and
/// scores the attacked detections against the clean annotations.
inline DigitalEvalResult evaluate_digital(const std::vector<SceneImage>& test, const DetectionSet& clean,
                                          const std::optional<Patch>& patch, const LossSettings& settings,
                                          const Detector& detector, const DigitalEvalOptions& opt) {
    if (opt.weather && settings.augmentation.weather_effects.empty())
        throw ValidationError("regime STD_W needs at least one weather effect");
    DigitalEvalResult r;
    const AugmentationConfig placement = opt.augment ? settings.augmentation : AugmentationConfig::identity();
    AugmentationConfig weather_cfg = settings.augmentation;
    weather_cfg.weather_enabled = true;
    std::vector<std::vector<MatchedPair>> grouped;
    for (std::size_t j = 0; j < test.size(); ++j) {
        const auto& img = test[j];
        if (!clean.per_image.contains(img.id)) throw ValidationError("annotations do not cover test image " + img.id);
        const auto& dets = clean.at(img.id);
        Rng rng(derive_seed(opt.seed, derive_seed(kStreamEval, j)));
        Image frame = img.pixels;
        if (patch && !dets.empty()) {
            std::vector<Box> boxes;
            for (const auto& d : dets) boxes.push_back(d.box);
            if (opt.reverse_compose) std::reverse(boxes.begin(), boxes.end());
            const auto rule = settings.geometry.scale_rule(patch->dims());
            std::vector<AugmentationSpec> specs;
            for (const auto& b : boxes) specs.push_back(sample_augmentation(rng, placement, b, rule));
            frame = embed_patch(frame, *patch, boxes, specs, settings.geometry).image;
        }
        if (opt.weather) frame = apply_weather(frame, sample_weather(rng, weather_cfg), settings.weather);
        auto attacked = detect(detector, frame, opt.retrieval_threshold, opt.nms_iou);
        auto pairs = match_detections(dets, attacked, opt.min_iou);
        r.detections += pairs.size();
        ++r.images;
        grouped.push_back(pairs);
        r.pairs[img.id] = std::move(pairs);
        r.attacked.per_image[img.id] = std::move(attacked);
    }
    r.aorr = aorr(grouped, opt.normalization);
    r.pr = pr_ap(clean, r.attacked, opt.pr_iou);
    return r;
}

inline DigitalEvalOptions eval_options_from(const Config& cfg) {
    DigitalEvalOptions o;
    const auto& regime = cfg.str("eval.regime");
    if (regime != "STD" && regime != "STD_W" && regime != "STD-W") throw ValidationError("eval.regime must be STD or STD_W");
    o.weather = regime != "STD";
    if (o.weather && !weather_available(cfg)) throw ValidationError("regime STD_W needs aug.weather.enabled and effects");
    o.augment = cfg.flag("eval.augment");
    o.retrieval_threshold = cfg.num("eval.retrieval_threshold");
    o.nms_iou = cfg.num("eval.nms");
    o.min_iou = cfg.num("eval.min_iou");
    o.pr_iou = cfg.num("eval.pr_iou");
    o.reverse_compose = cfg.str("embed.compose_order") == "reverse";
    const auto& norm = cfg.str("eval.aorr_norm");
    if (norm != "total" && norm != "per_image") throw ValidationError("eval.aorr_norm must be total or per_image");
    o.normalization = norm == "total" ? AorrNormalization::TotalDetections : AorrNormalization::PerImageMean;
    o.seed = cfg.unsigned_integer("seed");
    return o;
}

inline std::vector<SceneImage> load_test_split(const std::string& scene_dir) {
    std::vector<SceneImage> out;
    for (const auto& p : list_images(std::filesystem::path(scene_dir) / "test"))
        out.push_back({p.filename().string(), read_image(p.string())});
    if (out.empty()) throw ValidationError("empty split");
    return out;
}

inline void run_eval_digital(const Config& cfg) {
    const auto dir = prepare_output_dir(cfg);
    const auto det = load_detector(cfg);
    const auto test = load_test_split(cfg.require_path("scene"));
    const auto ann_path = cfg.require_path("annotations.test");
    const auto clean = load_detection_set(ann_path, 0.5);
    const auto& patch_path = cfg.require_path("eval.patch");
    std::optional<Patch> patch;
    if (patch_path != "none") patch = load_patch(patch_path);

    Config effective = cfg;
    if (patch) effective.set("patch.design", std::string(to_string(patch->design())));
    auto settings = loss_settings_from(effective);
    const auto opt = eval_options_from(cfg);
    const auto r = evaluate_digital(test, clean, patch, settings, det, opt);

    std::string rows = "image,x_min,y_min,x_max,y_max,clean_score,attacked_score,reduction\n";
    for (const auto& [id, pairs] : r.pairs)
        for (const auto& p : pairs)
            rows += id + "," + csv_number(p.clean.box.x_min) + "," + csv_number(p.clean.box.y_min) + "," +
                    csv_number(p.clean.box.x_max) + "," + csv_number(p.clean.box.y_max) + "," +
                    csv_number(p.clean.objectness) + "," + csv_number(p.attacked_score) + "," +
                    csv_number((p.clean.objectness - p.attacked_score) / p.clean.objectness) + "\n";
    write_file_atomic((dir / "detections.csv").string(), rows);

    LinePlot pr{"PRECISION-RECALL", "RECALL", "PRECISION", {}, 0.0, 1.0, "AP=" + detail::format_tick(r.pr.ap)};
    PlotSeries s{"attacked", {}, {}, {0.8, 0.2, 0.1}};
    for (const auto& p : r.pr.curve) {
        s.x.push_back(p.recall);
        s.y.push_back(p.precision);
    }
    pr.series.push_back(s);
    save_plot((dir / "pr_curve.png").string(), pr);

    OrderedJson m;
    m["regime"] = opt.weather ? "STD_W" : "STD";
    m["patch"] = patch_path == "none" ? Json("none") : Json(file_digest(patch_path));
    m["aorr"] = r.aorr;
    m["aorr_normalization"] = cfg.str("eval.aorr_norm");
    m["ap"] = r.pr.ap;
    m["pr_iou"] = opt.pr_iou;
    m["images"] = r.images;
    m["detections"] = r.detections;
    m["true_positives"] = r.pr.true_positives;
    m["config"] = cfg.to_json();
    const auto metrics_path = dir / "metrics.json";
    write_file_atomic(metrics_path.string(), m.dump(2) + "\n");
    write_manifest(dir, "eval-digital", cfg, det.checksum(),
                   {{"annotations.test", file_digest(ann_path)}, {"metrics.json", file_digest(metrics_path.string())}});
    std::cout << "AORR " << r.aorr << "  AP " << r.pr.ap << "  (" << r.detections << " cars, " << r.images << " images)\n";
}

// ---------------------------------------------------------------------------
// eval-physical
// ---------------------------------------------------------------------------

inline LinePlot score_plot(const TrackedScoreSeries& s) {
    LinePlot p{"OBJECT " + s.object_id, "FRAME INDEX", "OBJECTNESS", {}, 0.0, 1.0,
               "OSR=" + [&] {
                   char b[32];
                   std::snprintf(b, sizeof b, "%.3f", osr(s));
                   return std::string(b);
               }()};
    PlotSeries patched{"patched", {}, s.patched_scores, {0.8, 0.2, 0.1}};
    PlotSeries clean{"clean", {}, s.clean_scores, {0.1, 0.4, 0.8}};
    for (std::size_t i = 0; i < s.patched_scores.size(); ++i) patched.x.push_back(static_cast<double>(i));
    for (std::size_t i = 0; i < s.clean_scores.size(); ++i) clean.x.push_back(static_cast<double>(i));
    p.series = {patched, clean};
    return p;
}

inline void run_eval_physical(const Config& cfg) {
    const auto dir = prepare_output_dir(cfg);
    PhysicalRunSource patched{cfg.require_path("physical.patched_tracks"), cfg.str("physical.patched_scores"),
                              cfg.str("physical.patched_frames")};
    PhysicalRunSource clean{cfg.require_path("physical.clean_tracks"), cfg.str("physical.clean_scores"),
                            cfg.str("physical.clean_frames")};
    std::optional<ToyDetector> det;
    if (patched.score_csv.empty() || clean.score_csv.empty()) det = load_detector(cfg);
    std::map<std::string, ObjectConditions> conditions;
    if (!cfg.str("physical.conditions").empty()) conditions = parse_conditions(read_text_file(cfg.str("physical.conditions")));
    const auto ingest =
        ingest_physical_run(patched, clean, conditions, det ? &*det : nullptr, cfg.num("physical.min_iou"));

    const auto grid = default_tau_grid();
    OrderedJson objects = OrderedJson::array();
    std::string ndr_rows = "object_id,tau,ndr\n";
    LinePlot ndr_plot{"NDR", "THRESHOLD", "NDR", {}, 0.0, std::nullopt, ""};
    std::vector<double> mean_sum(grid.size(), 0.0);
    std::vector<int> mean_n(grid.size(), 0);
    double osr_sum = 0.0;
    const Rgb palette[] = {{0.8, 0.2, 0.1}, {0.1, 0.4, 0.8}, {0.2, 0.6, 0.2}, {0.6, 0.3, 0.7}, {0.9, 0.6, 0.1}};
    for (std::size_t k = 0; k < ingest.series.size(); ++k) {
        const auto& s = ingest.series[k];
        const double o = osr(s);
        osr_sum += o;
        const auto curve = ndr_curve(s, grid);
        OrderedJson nd = OrderedJson::array();
        PlotSeries ps{s.object_id, {}, {}, palette[k % 5]};
        for (std::size_t g = 0; g < curve.size(); ++g) {
            nd.push_back({{"tau", curve[g].tau}, {"ndr", curve[g].value ? Json(*curve[g].value) : Json(nullptr)}});
            ndr_rows += s.object_id + "," + csv_number(curve[g].tau) + "," + (curve[g].value ? csv_number(*curve[g].value) : "") + "\n";
            ps.x.push_back(curve[g].tau);
            ps.y.push_back(curve[g].value.value_or(std::nan("")));
            if (curve[g].value) {
                mean_sum[g] += *curve[g].value;
                ++mean_n[g];
            }
        }
        ndr_plot.series.push_back(ps);
        objects.push_back({{"object_id", s.object_id},
                           {"lighting", std::string(to_string(s.lighting))},
                           {"motion", std::string(to_string(s.motion))},
                           {"alpha", s.patched_scores.size()},
                           {"beta", s.clean_scores.size()},
                           {"osr", o},
                           {"ndr", nd}});
        write_file_atomic((dir / ("series_" + s.object_id + ".json")).string(), to_json(s).dump(1) + "\n");
        save_plot((dir / ("scores_" + s.object_id + ".png")).string(), score_plot(s));
    }
    PlotSeries mean{"mean", {}, {}, {0, 0, 0}};
    OrderedJson mean_json = OrderedJson::array();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const std::optional<double> v = mean_n[g] ? std::optional(mean_sum[g] / mean_n[g]) : std::nullopt;
        mean.x.push_back(grid[g]);
        mean.y.push_back(v.value_or(std::nan("")));
        mean_json.push_back({{"tau", grid[g]}, {"ndr", v ? Json(*v) : Json(nullptr)}});
    }
    ndr_plot.series.push_back(mean);
    save_plot((dir / "ndr_plot.png").string(), ndr_plot);
    write_file_atomic((dir / "ndr_curve.csv").string(), ndr_rows);

    OrderedJson gaps = OrderedJson::array();
    for (const auto& g : ingest.gaps)
        gaps.push_back({{"object_id", g.object_id}, {"run", g.patched ? "patched" : "clean"}, {"frame_index", g.frame_index},
                        {"reason", g.reason}});
    OrderedJson m;
    m["objects"] = objects;
    m["mean_osr"] = osr_sum / static_cast<double>(ingest.series.size());
    m["mean_ndr"] = mean_json;
    m["gaps"] = gaps;
    m["unpaired_objects"] = ingest.unpaired;
    m["config"] = cfg.to_json();
    const auto metrics_path = dir / "physical_metrics.json";
    write_file_atomic(metrics_path.string(), m.dump(2) + "\n");
    write_manifest(dir, "eval-physical", cfg, det ? std::optional(det->checksum()) : std::nullopt,
                   {{"physical.patched_tracks", file_digest(patched.track_csv)},
                    {"physical.clean_tracks", file_digest(clean.track_csv)},
                    {"physical_metrics.json", file_digest(metrics_path.string())}});
    if (!ingest.gaps.empty()) std::cerr << "warning: " << ingest.gaps.size() << " frame gaps filled with score 0\n";
    std::cout << "mean OSR " << osr_sum / static_cast<double>(ingest.series.size()) << " over " << ingest.series.size()
              << " objects\n";
}

// ---------------------------------------------------------------------------
// export-patch
// ---------------------------------------------------------------------------

/// Bilinear resample of a piece onto `width` x `height` print pixels,
/// pixel-centre aligned.
inline Image resample_piece(const Image& piece, int width, int height) {
    Image out(3, height, width);
    const double sx = static_cast<double>(piece.width()) / width, sy = static_cast<double>(piece.height()) / height;
    for (int y = 0; y < height; ++y) {
        const double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, piece.height() - 1.0);
        const int y0 = static_cast<int>(v), y1 = std::min(y0 + 1, piece.height() - 1);
        const double fy = v - y0;
        for (int x = 0; x < width; ++x) {
            const double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, piece.width() - 1.0);
            const int x0 = static_cast<int>(u), x1 = std::min(x0 + 1, piece.width() - 1);
            const double fx = u - x0;
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = (1 - fy) * ((1 - fx) * piece.at(c, y0, x0) + fx * piece.at(c, y0, x1)) +
                                  fy * ((1 - fx) * piece.at(c, y1, x0) + fx * piece.at(c, y1, x1));
        }
    }
    return out;
}

struct ExportedPiece {
    std::string file;
    int width_px = 0;
    int height_px = 0;
    double width_mm = 0.0;
    double height_mm = 0.0;
};

/// Writes print-ready PNGs whose pHYs chunk states px_per_mm * 1000 pixels
/// per metre, so size_px * 1000 / ppm recovers the physical size in mm.
inline std::vector<ExportedPiece> export_patch(const Patch& patch, const std::filesystem::path& dir, int px_per_mm) {
    if (px_per_mm < 1 || px_per_mm > 100) throw ValidationError("export.px_per_mm must lie in [1,100]");
    const auto names = piece_names(patch.design());
    std::vector<ExportedPiece> out;
    std::string sidecar = "# print at 100% scale; one line per piece\n";
    for (int p = 0; p < patch.piece_count(); ++p) {
        ExportedPiece e;
        e.file = "patch_print" + names[static_cast<std::size_t>(p)] + ".png";
        e.width_mm = patch.dims().width_mm;
        e.height_mm = patch.dims().height_mm;
        e.width_px = static_cast<int>(std::lround(e.width_mm * px_per_mm));
        e.height_px = static_cast<int>(std::lround(e.height_mm * px_per_mm));
        PngMetadata meta;
        meta.pixels_per_metre = static_cast<std::uint32_t>(px_per_mm) * 1000u;
        char size[96];
        std::snprintf(size, sizeof size, "%g x %g mm", e.width_mm, e.height_mm);
        meta.text["PhysicalSize"] = size;
        meta.text["Design"] = std::string(to_string(patch.design()));
        write_png((dir / e.file).string(), resample_piece(patch.piece(p), e.width_px, e.height_px), meta);
        char line[256];
        std::snprintf(line, sizeof line, "%s: %d x %d px, %g x %g mm, %d px/mm (%.1f dpi)\n", e.file.c_str(), e.width_px,
                      e.height_px, e.width_mm, e.height_mm, px_per_mm, px_per_mm * 25.4);
        sidecar += line;
        out.push_back(e);
    }
    write_file_atomic((dir / "patch_print.txt").string(), sidecar);
    return out;
}

inline void run_export_patch(const Config& cfg) {
    const auto dir = prepare_output_dir(cfg);
    const auto& path = cfg.require_path("patch.path");
    const auto patch = load_patch(path);
    const auto pieces = export_patch(patch, dir, static_cast<int>(cfg.integer("export.px_per_mm")));
    OrderedJson files = {{"patch.path", file_digest(path)}};
    for (const auto& e : pieces) files[e.file] = file_digest((dir / e.file).string());
    write_manifest(dir, "export-patch", cfg, std::nullopt, files);
    for (const auto& e : pieces)
        std::cout << e.file << ": " << e.width_px << " x " << e.height_px << " px = " << e.width_mm << " x " << e.height_mm
                  << " mm\n";
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

inline void run_plot(const Config& cfg) {
    const auto dir = prepare_output_dir(cfg);
    const auto& kind = cfg.str("plot.kind");
    const auto& input = cfg.require_path("plot.input");
    const std::string output = cfg.str("plot.output").empty() ? (dir / (kind + ".png")).string() : cfg.str("plot.output");
    LinePlot plot;
    if (kind == "loss") {
        const auto t = detail::CsvTable::parse(read_text_file(input), {"epoch", "mean_loss", "mean_max_objectness"}, input);
        plot = {"TRAINING LOSS", "EPOCH", "LOSS", {}, std::nullopt, std::nullopt, ""};
        PlotSeries loss{"loss", {}, {}, {0.1, 0.3, 0.8}}, obj{"max objectness", {}, {}, {0.8, 0.2, 0.1}};
        for (const auto& r : t.rows) {
            const double e = detail::parse_double(t.get(r, "epoch"), input);
            loss.x.push_back(e);
            obj.x.push_back(e);
            loss.y.push_back(detail::parse_double(t.get(r, "mean_loss"), input));
            obj.y.push_back(detail::parse_double(t.get(r, "mean_max_objectness"), input));
        }
        plot.series = {loss, obj};
    } else if (kind == "ndr") {
        const auto t = detail::CsvTable::parse(read_text_file(input), {"object_id", "tau", "ndr"}, input);
        plot = {"NDR", "THRESHOLD", "NDR", {}, 0.0, std::nullopt, ""};
        std::map<std::string, PlotSeries> by_object;
        for (const auto& r : t.rows) {
            auto& s = by_object[t.get(r, "object_id")];
            s.name = t.get(r, "object_id");
            s.x.push_back(detail::parse_double(t.get(r, "tau"), input));
            const auto& v = t.get(r, "ndr");
            s.y.push_back(v.empty() ? std::nan("") : detail::parse_double(v, input));
        }
        const Rgb palette[] = {{0.8, 0.2, 0.1}, {0.1, 0.4, 0.8}, {0.2, 0.6, 0.2}, {0.6, 0.3, 0.7}, {0.9, 0.6, 0.1}};
        std::size_t k = 0;
        for (auto& [id, s] : by_object) {
            s.color = palette[k++ % 5];
            plot.series.push_back(s);
        }
    } else if (kind == "scores") {
        Json j;
        try {
            j = Json::parse(read_text_file(input));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("malformed score series " + input + ": " + e.what());
        }
        plot = score_plot(series_from_json(j));
    } else if (kind == "pr") {
        const auto t = detail::CsvTable::parse(read_text_file(input), {"series", "x", "y"}, input);
        plot = {"PRECISION-RECALL", "RECALL", "PRECISION", {}, 0.0, 1.0, ""};
        PlotSeries s{"attacked", {}, {}, {0.8, 0.2, 0.1}};
        for (const auto& r : t.rows) {
            s.x.push_back(detail::parse_double(t.get(r, "x"), input));
            s.y.push_back(detail::parse_double(t.get(r, "y"), input));
        }
        plot.series = {s};
    } else {
        throw ValidationError("plot.kind must be loss, ndr, scores or pr");
    }
    if (!cfg.str("plot.title").empty()) plot.title = cfg.str("plot.title");
    save_plot(output, plot);
    write_manifest(dir, "plot", cfg, std::nullopt, {{"plot.input", file_digest(input)}});
    std::cout << "wrote " << output << "\n";
}

}  // namespace aerialpatch
