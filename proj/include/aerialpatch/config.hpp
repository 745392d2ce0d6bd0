// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: a fixed registry of dotted keys with defaults, read
// from "key = value" text files and overridden by --key=value flags.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aerialpatch/augmentation.hpp"
#include "aerialpatch/core_types.hpp"
#include "aerialpatch/embedding.hpp"
#include "aerialpatch/error.hpp"
#include "aerialpatch/io/serialize.hpp"
#include "aerialpatch/loss.hpp"
#include "aerialpatch/optimize.hpp"
#include "aerialpatch/synthetic.hpp"
#include "aerialpatch/toy_detector.hpp"
#include "aerialpatch/weather.hpp"

namespace aerialpatch {

struct ConfigKey {
    const char* name;
    const char* default_value;
    const char* help;
};

// clang-format off
inline constexpr ConfigKey kConfigKeys[] = {
    {"seed", "0", "master seed for data generation, patch initialisation and evaluation sampling"},
    {"output_dir", "out", "directory for every artifact of the run"},
    {"scene", "", "scene directory holding train/ and test/ images"},

    {"detector.path", "", "toy detector checkpoint"},
    {"detector.input_size", "96", "detector input side in pixels"},
    {"detector.anchor", "24", "anchor side in pixels"},
    {"detector.epochs", "30", "detector training epochs"},
    {"detector.batch_size", "8", "detector training batch size"},
    {"detector.learning_rate", "0.002", "detector Adam learning rate"},
    {"detector.seed", "7", "detector initialisation and training seed"},
    {"detector.objectness_target", "0.9", "BCE target for cells owning a car"},
    {"detector.occluder_probability", "0", "probability of a random roof occluder per car during training"},

    {"gen.train_count", "200", "synthetic training images"},
    {"gen.test_count", "50", "synthetic test images"},
    {"gen.width", "96", "synthetic image width"},
    {"gen.height", "96", "synthetic image height"},
    {"gen.min_cars", "1", "minimum cars per image"},
    {"gen.max_cars", "4", "maximum cars per image"},
    {"gen.car_length_min", "24", "minimum car length in pixels"},
    {"gen.car_length_max", "34", "maximum car length in pixels"},

    {"annotate.threshold", "0.5", "objectness threshold for annotations"},
    {"annotate.nms", "0.4", "NMS IoU threshold for annotations"},
    {"annotate.review_below", "0.7", "detections under this score are listed in the review file"},
    {"annotations.train", "", "training-split annotation JSON"},
    {"annotations.test", "", "test-split annotation JSON"},

    {"colors.path", "", "printable palette file (empty: bundled palette)"},

    {"patch.design", "ON", "patch design: ON or OFF"},
    {"patch.width", "0", "digital piece width in pixels (0: design default)"},
    {"patch.height", "0", "digital piece height in pixels (0: design default)"},
    {"patch.width_mm", "0", "physical piece width in mm (0: design default)"},
    {"patch.height_mm", "0", "physical piece height in mm (0: design default)"},
    {"patch.path", "", "patch file to export"},

    {"embed.ratio", "0", "patch-to-car ratio (0: design default)"},
    {"embed.off_gap", "0.1", "OFF gap as a fraction of the box width"},
    {"embed.off_gap_px", "", "OFF gap in pixels; overrides embed.off_gap when set"},
    {"embed.compose_order", "box", "overlap order: box (later boxes win) or reverse"},

    {"aug.rotation_deg", "20", "maximum absolute rotation in degrees"},
    {"aug.brightness", "0.1", "maximum absolute brightness shift"},
    {"aug.contrast_min", "0.8", "minimum contrast factor"},
    {"aug.contrast_max", "1.2", "maximum contrast factor"},
    {"aug.noise", "0.1", "uniform noise amplitude"},
    {"aug.scale_jitter", "0.1", "relative scale jitter"},
    {"aug.translation", "0", "placement jitter as a fraction of the box size"},
    {"aug.weather.enabled", "true", "allow weather effects (GCW training, STD_W evaluation)"},
    {"aug.weather.effects", "sun_brightness,snow,rain,fog,autumn_leaves", "comma-separated weather effects"},
    {"aug.weather.intensity_min", "0.3", "minimum weather intensity"},
    {"aug.weather.intensity_max", "1.0", "maximum weather intensity"},

    {"loss.delta", "0.01", "NPS weight"},
    {"loss.gamma", "2.5", "TV weight"},
    {"loss.normalize_regularizers", "false", "divide NPS and TV by their term counts"},
    {"loss.max_mode", "hard", "objectness maximum: hard or soft"},
    {"loss.soft_temperature", "0.05", "soft maximum temperature"},
    {"loss.restrict_to_boxes", "false", "take the maximum over cells overlapping car boxes only"},
    {"loss.spec_per_box", "true", "draw one augmentation per box instead of per image"},

    {"train.variant", "GC", "pipeline variant: GC, GCW or CONTROL"},
    {"train.epochs", "500", "patch optimisation epochs"},
    {"train.batch_size", "8", "images per optimiser step"},
    {"train.learning_rate", "0.03", "Adam learning rate"},
    {"train.checkpoint_interval", "0", "epochs between checkpoints (0: none)"},
    {"train.resume", "", "checkpoint to resume from"},

    {"eval.patch", "", "patch file to evaluate; 'none' for the no-op patch"},
    {"eval.regime", "STD", "testing regime: STD or STD_W"},
    {"eval.augment", "false", "apply training augmentations when embedding test patches"},
    {"eval.retrieval_threshold", "0.001", "objectness threshold for attacked detections"},
    {"eval.nms", "0.4", "NMS IoU threshold for attacked detections"},
    {"eval.min_iou", "0.5", "IoU needed to match a clean and an attacked detection"},
    {"eval.pr_iou", "0.5", "IoU threshold for precision/recall"},
    {"eval.aorr_norm", "total", "AORR normalisation: total or per_image"},

    {"physical.patched_tracks", "", "track CSV of the patched video"},
    {"physical.clean_tracks", "", "track CSV of the clean video"},
    {"physical.patched_scores", "", "score CSV of the patched video"},
    {"physical.clean_scores", "", "score CSV of the clean video"},
    {"physical.patched_frames", "", "frame directory of the patched video"},
    {"physical.clean_frames", "", "frame directory of the clean video"},
    {"physical.conditions", "", "JSON sidecar with lighting/motion tags per object"},
    {"physical.min_iou", "0.5", "IoU needed to tie a detection to a track box"},

    {"export.px_per_mm", "1", "print resolution in pixels per millimetre (integer)"},

    {"plot.kind", "loss", "plot type: loss, ndr, scores or pr"},
    {"plot.input", "", "CSV or JSON to plot"},
    {"plot.output", "", "PNG path (default: <output_dir>/plot.png)"},
    {"plot.title", "", "figure title (default per kind)"},
};
// clang-format on

inline std::string valid_keys_text() {
    std::string s;
    for (const auto& k : kConfigKeys) s += std::string("  ") + k.name + "\n";
    return s;
}

class Config {
public:
    Config() {
        for (const auto& k : kConfigKeys) values_[k.name] = k.default_value;
    }

    static bool known(const std::string& key) {
        return std::any_of(std::begin(kConfigKeys), std::end(kConfigKeys), [&](const ConfigKey& k) { return key == k.name; });
    }

    void set(const std::string& key, const std::string& value) {
        if (!known(key)) throw ValidationError("unknown config key '" + key + "'; valid keys:\n" + valid_keys_text());
        values_[key] = value;
    }

    /// "key = value" per line; '#' starts a comment.
    void load_text(const std::string& text, const std::string& source = "config") {
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ValidationError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void load_file(const std::string& path) { load_text(read_text_file(path), path); }

    /// Accepts "--key=value" and "--key value".
    void apply_args(const std::vector<std::string>& args) {
        for (std::size_t i = 0; i < args.size(); ++i) {
            const auto& a = args[i];
            if (a.rfind("--", 0) != 0) throw ValidationError("unexpected argument '" + a + "'");
            const auto eq = a.find('=');
            if (eq != std::string::npos) {
                set(a.substr(2, eq - 2), a.substr(eq + 1));
            } else {
                if (i + 1 >= args.size()) throw ValidationError("flag " + a + " needs a value");
                set(a.substr(2), args[++i]);
            }
        }
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
        return it->second;
    }

    double num(const std::string& key) const {
        const auto& s = str(key);
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used == s.size()) return v;
        } catch (const std::exception&) {
        }
        throw ValidationError(key + ": expected a number, got '" + s + "'");
    }

    long integer(const std::string& key) const {
        const auto& s = str(key);
        try {
            std::size_t used = 0;
            const long v = std::stol(s, &used);
            if (used == s.size()) return v;
        } catch (const std::exception&) {
        }
        throw ValidationError(key + ": expected an integer, got '" + s + "'");
    }

    std::uint64_t unsigned_integer(const std::string& key) const {
        const auto& s = str(key);
        try {
            std::size_t used = 0;
            if (!s.empty() && s[0] != '-') {
                const auto v = std::stoull(s, &used);
                if (used == s.size()) return v;
            }
        } catch (const std::exception&) {
        }
        throw ValidationError(key + ": expected a non-negative integer, got '" + s + "'");
    }

    bool flag(const std::string& key) const {
        const auto& s = str(key);
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        throw ValidationError(key + ": expected true or false, got '" + s + "'");
    }

    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> out;
        std::istringstream is(str(key));
        std::string item;
        while (std::getline(is, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    const std::string& require_path(const std::string& key) const {
        const auto& s = str(key);
        if (s.empty()) throw ValidationError(key + " must be set");
        return s;
    }

    /// Every key in registry order, as strings.
    OrderedJson to_json() const {
        OrderedJson j = OrderedJson::object();
        for (const auto& k : kConfigKeys) j[k.name] = values_.at(k.name);
        return j;
    }

    std::string to_text() const {
        std::string s;
        for (const auto& k : kConfigKeys) s += std::string(k.name) + " = " + values_.at(k.name) + "\n";
        return s;
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Typed views
// ---------------------------------------------------------------------------

inline PatchDesign design_from(const Config& c) { return parse_design(c.str("patch.design")); }

inline PieceDims piece_dims_from(const Config& c) {
    PieceDims d = default_piece_dims(design_from(c));
    if (c.integer("patch.width") != 0) d.width = static_cast<int>(c.integer("patch.width"));
    if (c.integer("patch.height") != 0) d.height = static_cast<int>(c.integer("patch.height"));
    if (c.num("patch.width_mm") != 0.0) d.width_mm = c.num("patch.width_mm");
    if (c.num("patch.height_mm") != 0.0) d.height_mm = c.num("patch.height_mm");
    if (d.width < 2 || d.height < 2) throw ValidationError("patch.width and patch.height must be at least 2");
    if (!(d.width_mm > 0.0) || !(d.height_mm > 0.0)) throw ValidationError("physical patch size must be positive");
    return d;
}

inline PlacementGeometry geometry_from(const Config& c) {
    auto g = PlacementGeometry::defaults(design_from(c));
    if (c.num("embed.ratio") != 0.0) g.patch_to_car_ratio = c.num("embed.ratio");
    g.off_gap_fraction = c.num("embed.off_gap");
    if (!c.str("embed.off_gap_px").empty()) g.off_gap_px = c.num("embed.off_gap_px");
    const auto& order = c.str("embed.compose_order");
    if (order != "box" && order != "reverse") throw ValidationError("embed.compose_order must be box or reverse");
    g.validate();
    return g;
}

inline AugmentationConfig augmentation_from(const Config& c) {
    AugmentationConfig a;
    a.rotation_deg = c.num("aug.rotation_deg");
    a.brightness = c.num("aug.brightness");
    a.contrast_min = c.num("aug.contrast_min");
    a.contrast_max = c.num("aug.contrast_max");
    a.noise = c.num("aug.noise");
    a.scale_jitter = c.num("aug.scale_jitter");
    a.translation_jitter = c.num("aug.translation");
    a.weather_effects.clear();
    for (const auto& e : c.list("aug.weather.effects")) a.weather_effects.push_back(parse_weather_effect(e));
    a.weather_intensity_min = c.num("aug.weather.intensity_min");
    a.weather_intensity_max = c.num("aug.weather.intensity_max");
    a.weather_enabled = false;
    a.validate();
    return a;
}

inline bool weather_available(const Config& c) { return c.flag("aug.weather.enabled") && !c.list("aug.weather.effects").empty(); }

inline LossSettings loss_settings_from(const Config& c) {
    LossSettings s;
    s.weights = {c.num("loss.delta"), c.num("loss.gamma")};
    s.weights.validate();
    s.variant = parse_variant(c.str("train.variant"));
    if (s.variant == PipelineVariant::GCW && !weather_available(c))
        throw ValidationError("train.variant=GCW needs aug.weather.enabled and at least one effect");
    s.augmentation = augmentation_from(c);
    s.geometry = geometry_from(c);
    const auto& mode = c.str("loss.max_mode");
    if (mode != "hard" && mode != "soft") throw ValidationError("loss.max_mode must be hard or soft");
    s.max_mode = mode == "hard" ? MaxMode::Hard : MaxMode::Soft;
    s.soft_temperature = c.num("loss.soft_temperature");
    if (!(s.soft_temperature > 0.0)) throw ValidationError("loss.soft_temperature must be positive");
    s.restrict_to_boxes = c.flag("loss.restrict_to_boxes");
    s.spec_per_box = c.flag("loss.spec_per_box");
    s.normalize_regularizers = c.flag("loss.normalize_regularizers");
    return s;
}

inline TrainConfig train_config_from(const Config& c) {
    TrainConfig t;
    t.variant = parse_variant(c.str("train.variant"));
    t.epochs = static_cast<int>(c.integer("train.epochs"));
    t.batch_size = static_cast<int>(c.integer("train.batch_size"));
    t.learning_rate = c.num("train.learning_rate");
    t.rng_seed = c.unsigned_integer("seed");
    t.checkpoint_interval = static_cast<int>(c.integer("train.checkpoint_interval"));
    t.validate();
    return t;
}

inline SyntheticSceneParams scene_params_from(const Config& c) {
    SyntheticSceneParams p;
    p.width = static_cast<int>(c.integer("gen.width"));
    p.height = static_cast<int>(c.integer("gen.height"));
    p.min_cars = static_cast<int>(c.integer("gen.min_cars"));
    p.max_cars = static_cast<int>(c.integer("gen.max_cars"));
    p.car_length_min = c.num("gen.car_length_min");
    p.car_length_max = c.num("gen.car_length_max");
    return p;
}

inline ToyDetectorConfig detector_config_from(const Config& c) {
    ToyDetectorConfig d;
    d.input_size = static_cast<int>(c.integer("detector.input_size"));
    d.anchor = c.num("detector.anchor");
    if (d.input_size < 16 || d.input_size % 8 != 0) throw ValidationError("detector.input_size must be a multiple of 8, at least 16");
    if (!(d.anchor > 0.0)) throw ValidationError("detector.anchor must be positive");
    return d;
}

inline DetectorTrainConfig detector_train_config_from(const Config& c) {
    DetectorTrainConfig t;
    t.epochs = static_cast<int>(c.integer("detector.epochs"));
    t.batch_size = static_cast<int>(c.integer("detector.batch_size"));
    t.learning_rate = c.num("detector.learning_rate");
    t.seed = c.unsigned_integer("detector.seed");
    t.objectness_target = c.num("detector.objectness_target");
    t.occluder_probability = c.num("detector.occluder_probability");
    if (t.epochs < 1 || t.batch_size < 1 || !(t.learning_rate > 0.0))
        throw ValidationError("detector training needs positive epochs, batch size and learning rate");
    if (!(t.objectness_target > 0.5 && t.objectness_target <= 1.0))
        throw ValidationError("detector.objectness_target must lie in (0.5, 1]");
    if (!(t.occluder_probability >= 0.0 && t.occluder_probability <= 1.0))
        throw ValidationError("detector.occluder_probability must lie in [0,1]");
    return t;
}

}  // namespace aerialpatch
