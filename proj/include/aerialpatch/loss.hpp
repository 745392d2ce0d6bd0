// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aerialpatch/augmentation.hpp"
#include "aerialpatch/core_types.hpp"
#include "aerialpatch/detector.hpp"
#include "aerialpatch/embedding.hpp"
#include "aerialpatch/error.hpp"
#include "aerialpatch/weather.hpp"

namespace aerialpatch {

inline constexpr double kTvEpsilon = 1e-8;

struct LossWeights {
    double delta = 0.01;  // non-printability
    double gamma = 2.5;   // total variation

    void validate() const {
        if (!(delta >= 0.0) || !(gamma >= 0.0)) throw ValidationError("loss weights must be non-negative");
    }
};

enum class PipelineVariant { GC, GCW, Control };

inline std::string_view to_string(PipelineVariant v) {
    switch (v) {
        case PipelineVariant::GC: return "GC";
        case PipelineVariant::GCW: return "GCW";
        case PipelineVariant::Control: return "CONTROL";
    }
    return "?";
}

inline PipelineVariant parse_variant(std::string_view s) {
    if (s == "GC" || s == "G/C") return PipelineVariant::GC;
    if (s == "GCW" || s == "G/C+W") return PipelineVariant::GCW;
    if (s == "CONTROL" || s == "Control") return PipelineVariant::Control;
    throw ValidationError("unknown pipeline variant '" + std::string(s) + "' (GC, GCW, CONTROL)");
}

struct ScalarWithGrad {
    double value = 0.0;
    Patch grad;
};

/// Sum over patch pixels of the Euclidean RGB distance to the nearest
/// printable colour.
inline ScalarWithGrad nps(const Patch& patch, const PrintableColorSet& colors) {
    if (colors.empty()) throw ValidationError("printable colour set is empty");
    ScalarWithGrad r{0.0, patch.zeros_like()};
    for (int p = 0; p < patch.piece_count(); ++p) {
        const auto& img = patch.piece(p);
        auto& g = r.grad.piece(p);
        const std::size_t n = img.plane_size();
        for (std::size_t i = 0; i < n; ++i) {
            const double px[3] = {img.values()[i], img.values()[n + i], img.values()[2 * n + i]};
            double best = std::numeric_limits<double>::infinity();
            const Rgb* arg = nullptr;
            for (const auto& c : colors.colors()) {
                const double d = std::sqrt((px[0] - c[0]) * (px[0] - c[0]) + (px[1] - c[1]) * (px[1] - c[1]) +
                                           (px[2] - c[2]) * (px[2] - c[2]));
                if (d < best) {
                    best = d;
                    arg = &c;
                }
            }
            r.value += best;
            if (best > 0.0)
                for (int c = 0; c < 3; ++c) g.values()[c * n + i] = (px[c] - (*arg)[static_cast<std::size_t>(c)]) / best;
        }
    }
    return r;
}

/// Smoothed total variation: for every channel and every pixel (x, y) with
/// x < W-1 and y < H-1, sqrt((p[y][x]-p[y][x+1])^2 + (p[y][x]-p[y+1][x])^2 + eps).
inline ScalarWithGrad tv(const Patch& patch, double eps = kTvEpsilon) {
    if (patch.dims().width < 2 || patch.dims().height < 2) throw ValidationError("total variation needs a patch of at least 2x2");
    ScalarWithGrad r{0.0, patch.zeros_like()};
    for (int p = 0; p < patch.piece_count(); ++p) {
        const auto& img = patch.piece(p);
        auto& g = r.grad.piece(p);
        for (int c = 0; c < img.channels(); ++c)
            for (int y = 0; y + 1 < img.height(); ++y)
                for (int x = 0; x + 1 < img.width(); ++x) {
                    const double v = img.at(c, y, x);
                    const double dx = v - img.at(c, y, x + 1);
                    const double dy = v - img.at(c, y + 1, x);
                    const double s = std::sqrt(dx * dx + dy * dy + eps);
                    r.value += s;
                    g.at(c, y, x) += (dx + dy) / s;
                    g.at(c, y, x + 1) -= dx / s;
                    g.at(c, y + 1, x) -= dy / s;
                }
    }
    return r;
}

/// Everything image_loss needs beyond the patch and the image.
struct LossSettings {
    LossWeights weights;
    PipelineVariant variant = PipelineVariant::GC;
    AugmentationConfig augmentation;
    PlacementGeometry geometry;
    WeatherParams weather;
    MaxMode max_mode = MaxMode::Hard;
    double soft_temperature = 0.05;
    /// Restrict the objectness maximum to cells overlapping the car boxes.
    bool restrict_to_boxes = false;
    /// Draw one augmentation spec per box (true) or share one per image.
    bool spec_per_box = true;
    /// Divide NPS by the patch pixel count and TV by its term count before
    /// weighting, so delta and gamma do not scale with patch resolution.
    bool normalize_regularizers = false;
};

/// Divisors applied to (NPS, TV) under LossSettings::normalize_regularizers.
inline std::pair<double, double> regularizer_divisors(const Patch& patch, bool normalize) {
    if (!normalize) return {1.0, 1.0};
    const double pieces = patch.piece_count();
    const double w = patch.dims().width, h = patch.dims().height;
    return {pieces * w * h, pieces * 3.0 * (w - 1.0) * (h - 1.0)};
}

struct ImageLossResult {
    double total = 0.0;
    double max_objectness = 0.0;
    /// Regularizer values as they enter the total (normalized when configured).
    double nps = 0.0;
    double tv = 0.0;
    Patch grad;
};

/// Draws the augmentation specs image_loss would use. Weather is included
/// only for the GCW variant; the first spec's weather applies to the frame.
inline std::vector<AugmentationSpec> sample_image_specs(const Patch& patch, std::span<const Box> boxes,
                                                        const LossSettings& s, Rng& rng) {
    AugmentationConfig cfg = s.augmentation;
    cfg.weather_enabled = s.variant == PipelineVariant::GCW;
    const auto rule = s.geometry.scale_rule(patch.dims());
    std::vector<AugmentationSpec> specs;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (i == 0 || s.spec_per_box) {
            specs.push_back(sample_augmentation(rng, cfg, boxes[i], rule));
        } else {
            // Shared spec: keep the jitter, rescale to this box.
            AugmentationSpec shared = specs.front();
            shared.scale_factor = specs.front().scale_factor / rule.nominal_scale(boxes.front()) * rule.nominal_scale(boxes[i]);
            specs.push_back(shared);
        }
    }
    return specs;
}

/// Loss of one image for frozen augmentation specs:
/// max objectness of the composited frame + delta * NPS + gamma * TV.
inline ImageLossResult image_loss_with_specs(const Patch& patch, const Image& image, std::span<const Box> boxes,
                                             std::span<const AugmentationSpec> specs, const LossSettings& s,
                                             const Detector& detector, const PrintableColorSet& colors,
                                             bool want_grad = true) {
    if (boxes.empty()) throw ValidationError("image_loss needs at least one box");
    s.weights.validate();
    const auto embedded = embed_patch(image, patch, boxes, specs, s.geometry);
    const std::optional<WeatherSpec> weather = specs.front().weather;
    const Image frame = weather ? apply_weather(embedded.image, *weather, s.weather) : embedded.image;
    const auto lb = Letterbox::fit(frame.width(), frame.height(), detector.input_size());
    const Image canvas = apply_letterbox(frame, lb);

    std::unique_ptr<ForwardTape> tape;
    const auto output = detector.forward(canvas, tape);
    std::vector<Box> region;
    for (const auto& b : boxes) region.push_back(lb.to_canvas(b));
    const auto mx = max_objectness(output, s.max_mode, s.soft_temperature, region, s.restrict_to_boxes);

    ImageLossResult r;
    r.max_objectness = mx.value;
    const auto n = nps(patch, colors);
    const auto t = tv(patch);
    const auto [nps_div, tv_div] = regularizer_divisors(patch, s.normalize_regularizers);
    const double delta = s.weights.delta / nps_div, gamma = s.weights.gamma / tv_div;
    r.nps = n.value / nps_div;
    r.tv = t.value / tv_div;
    r.total = mx.value + s.weights.delta * r.nps + s.weights.gamma * r.tv;
    if (!want_grad) return r;

    Image g = letterbox_backward(detector.input_gradient(*tape, mx.grad), lb);
    if (weather) g = weather_backward(embedded.image, *weather, g, s.weather);
    r.grad = embed_backward(embedded, patch, specs, g);
    for (int p = 0; p < patch.piece_count(); ++p) {
        auto& dst = r.grad.piece(p).values();
        const auto& gn = n.grad.piece(p).values();
        const auto& gt = t.grad.piece(p).values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += delta * gn[k] + gamma * gt[k];
    }
    return r;
}

/// Samples fresh specs from `rng` and evaluates the loss.
inline ImageLossResult image_loss(const Patch& patch, const Image& image, std::span<const Box> boxes,
                                  const LossSettings& s, const Detector& detector, const PrintableColorSet& colors,
                                  Rng& rng, bool want_grad = true) {
    const auto specs = sample_image_specs(patch, boxes, s, rng);
    return image_loss_with_specs(patch, image, boxes, specs, s, detector, colors, want_grad);
}

}  // namespace aerialpatch
