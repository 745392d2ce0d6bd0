// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aerialpatch/error.hpp"
#include "aerialpatch/image.hpp"
#include "aerialpatch/rng.hpp"

namespace aerialpatch {

// ---------------------------------------------------------------------------
// Boxes and detections
// ---------------------------------------------------------------------------

/// Axis-aligned box in pixel units, corner representation.
struct Box {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double centre_x() const { return 0.5 * (x_min + x_max); }
    double centre_y() const { return 0.5 * (y_min + y_max); }
    bool valid() const { return x_min < x_max && y_min < y_max; }

    static Box from_centre(double cx, double cy, double w, double h) {
        return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    }

    friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
    const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

struct Detection {
    Box box;
    double objectness = 0.0;

    bool valid() const { return box.valid() && objectness >= 0.0 && objectness <= 1.0; }
    friend bool operator==(const Detection&, const Detection&) = default;
};

/// Per-image detections keyed by image id (file name).
struct DetectionSet {
    std::map<std::string, std::vector<Detection>> per_image;
    /// Set when the set was produced in annotation mode; every score is then
    /// at least this value.
    std::optional<double> annotation_threshold;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& [id, dets] : per_image) n += dets.size();
        return n;
    }

    const std::vector<Detection>& at(const std::string& id) const {
        static const std::vector<Detection> kEmpty;
        auto it = per_image.find(id);
        return it == per_image.end() ? kEmpty : it->second;
    }

    void validate() const {
        for (const auto& [id, dets] : per_image) {
            for (const auto& d : dets) {
                if (!d.valid()) throw ValidationError("invalid detection in image '" + id + "'");
                if (annotation_threshold && d.objectness < *annotation_threshold)
                    throw ValidationError("annotation below objectness threshold in image '" + id + "'");
            }
        }
    }

    friend bool operator==(const DetectionSet&, const DetectionSet&) = default;
};

// ---------------------------------------------------------------------------
// Patch
// ---------------------------------------------------------------------------

enum class PatchDesign { On, Off };

inline std::string_view to_string(PatchDesign d) { return d == PatchDesign::On ? "ON" : "OFF"; }

inline PatchDesign parse_design(std::string_view s) {
    if (s == "ON" || s == "on") return PatchDesign::On;
    if (s == "OFF" || s == "off") return PatchDesign::Off;
    throw ValidationError("unknown patch design '" + std::string(s) + "' (expected ON or OFF)");
}

/// Digital and physical size of one patch piece (the whole patch for ON,
/// one strip for OFF).
struct PieceDims {
    int width = 0;
    int height = 0;
    double width_mm = 0.0;
    double height_mm = 0.0;

    friend bool operator==(const PieceDims&, const PieceDims&) = default;
};

inline PieceDims default_piece_dims(PatchDesign design) {
    if (design == PatchDesign::On) return {200, 160, 1189.0, 841.0};
    return {400, 25, 3200.0, 200.0};
}

inline int piece_count(PatchDesign design) { return design == PatchDesign::On ? 1 : 3; }

/// The optimised pixel grid. OFF patches hold three strips ordered left, top,
/// right; ON patches hold a single piece.
class Patch {
public:
    Patch() = default;
    Patch(PatchDesign design, PieceDims dims, std::vector<Image> pieces)
        : design_(design), dims_(dims), pieces_(std::move(pieces)) {
        if (dims_.width < 1 || dims_.height < 1) throw ValidationError("patch dimensions must be positive");
        if (static_cast<int>(pieces_.size()) != aerialpatch::piece_count(design_))
            throw ValidationError("OFF patches have exactly three strips, ON patches one piece");
        for (const auto& p : pieces_) {
            if (p.channels() != 3 || p.width() != dims_.width || p.height() != dims_.height)
                throw ValidationError("patch piece does not match declared dimensions");
            for (double v : p.data())
                if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("patch pixel outside [0,1]");
        }
    }

    static Patch filled(PatchDesign design, PieceDims dims, double value) {
        std::vector<Image> pieces(aerialpatch::piece_count(design), Image(3, dims.height, dims.width, value));
        return Patch(design, dims, std::move(pieces));
    }

    /// Pixels drawn uniformly from [0, 1].
    static Patch random(PatchDesign design, PieceDims dims, Rng& rng) {
        std::vector<Image> pieces;
        for (int i = 0; i < aerialpatch::piece_count(design); ++i) {
            Image img(3, dims.height, dims.width);
            for (auto& v : img.values()) v = rng.uniform();
            pieces.push_back(std::move(img));
        }
        return Patch(design, dims, std::move(pieces));
    }

    PatchDesign design() const { return design_; }
    const PieceDims& dims() const { return dims_; }
    int piece_count() const { return static_cast<int>(pieces_.size()); }
    const Image& piece(int i) const { return pieces_.at(i); }
    Image& piece(int i) { return pieces_.at(i); }
    const std::vector<Image>& pieces() const { return pieces_; }
    std::vector<Image>& pieces() { return pieces_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : pieces_) n += p.size();
        return n;
    }

    void clamp() {
        for (auto& p : pieces_) p.clamp(0.0, 1.0);
    }

    /// A zero-valued grid with the same shape, used for gradients.
    Patch zeros_like() const {
        Patch z;
        z.design_ = design_;
        z.dims_ = dims_;
        z.pieces_.assign(pieces_.size(), Image(3, dims_.height, dims_.width, 0.0));
        return z;
    }

    friend bool operator==(const Patch&, const Patch&) = default;

private:
    PatchDesign design_ = PatchDesign::On;
    PieceDims dims_{};
    std::vector<Image> pieces_;
};

// ---------------------------------------------------------------------------
// Printable colours
// ---------------------------------------------------------------------------

using Rgb = std::array<double, 3>;

class PrintableColorSet {
public:
    PrintableColorSet() = default;
    explicit PrintableColorSet(std::vector<Rgb> colors) : colors_(std::move(colors)) {
        if (colors_.empty()) throw ValidationError("printable colour set is empty");
        std::set<Rgb> seen;
        for (const auto& c : colors_) {
            for (double v : c)
                if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("printable colour component outside [0,1]");
            if (!seen.insert(c).second) throw ValidationError("duplicate printable colour");
        }
    }

    const std::vector<Rgb>& colors() const { return colors_; }
    std::size_t size() const { return colors_.size(); }
    bool empty() const { return colors_.empty(); }

private:
    std::vector<Rgb> colors_;
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct SceneImage {
    std::string id;
    Image pixels;
};

struct SceneDataset {
    std::string scene_name;
    std::vector<SceneImage> train;
    std::vector<SceneImage> test;
    /// Files that could not be decoded at load time.
    std::vector<std::string> unreadable;
};

struct ValidationReport {
    std::size_t train_count = 0;
    std::size_t test_count = 0;
    /// (width, height) -> number of images.
    std::map<std::pair<int, int>, std::size_t> resolutions;
    int channels = 0;
};

inline ValidationReport validate_dataset(const SceneDataset& dataset) {
    if (dataset.train.empty() || dataset.test.empty()) throw ValidationError("empty split");
    ValidationReport report;
    report.train_count = dataset.train.size();
    report.test_count = dataset.test.size();
    std::set<std::string> ids;
    auto visit = [&](const SceneImage& img) {
        if (!ids.insert(img.id).second) throw ValidationError("id collision: " + img.id);
        if (report.channels == 0) report.channels = img.pixels.channels();
        if (img.pixels.channels() != report.channels) throw ValidationError("mixed channel counts");
        ++report.resolutions[{img.pixels.width(), img.pixels.height()}];
    };
    for (const auto& img : dataset.train) visit(img);
    for (const auto& img : dataset.test) visit(img);
    return report;
}

// ---------------------------------------------------------------------------
// Physical-run score series
// ---------------------------------------------------------------------------

enum class Lighting { Sun, Shade, Both };
enum class Motion { Static, Moving };

inline std::string_view to_string(Lighting l) {
    switch (l) {
        case Lighting::Sun: return "sun";
        case Lighting::Shade: return "shade";
        case Lighting::Both: return "both";
    }
    return "both";
}
inline std::string_view to_string(Motion m) { return m == Motion::Static ? "static" : "moving"; }

inline Lighting parse_lighting(std::string_view s) {
    if (s == "sun") return Lighting::Sun;
    if (s == "shade") return Lighting::Shade;
    if (s == "both") return Lighting::Both;
    throw ValidationError("unknown lighting tag '" + std::string(s) + "'");
}
inline Motion parse_motion(std::string_view s) {
    if (s == "static") return Motion::Static;
    if (s == "moving") return Motion::Moving;
    throw ValidationError("unknown motion tag '" + std::string(s) + "'");
}

/// Per-frame objectness of one tracked object in patched and clean footage.
/// Frames without a retrievable detection hold 0.
struct TrackedScoreSeries {
    std::string object_id;
    std::vector<double> patched_scores;
    std::vector<double> clean_scores;
    Lighting lighting = Lighting::Both;
    Motion motion = Motion::Static;

    void validate() const {
        if (patched_scores.empty() || clean_scores.empty())
            throw ValidationError("score series for '" + object_id + "' is empty");
        for (const auto* v : {&patched_scores, &clean_scores})
            for (double s : *v)
                if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("score out of range");
    }

    friend bool operator==(const TrackedScoreSeries&, const TrackedScoreSeries&) = default;
};

}  // namespace aerialpatch
