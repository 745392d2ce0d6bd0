// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "aerialpatch/augmentation.hpp"
#include "aerialpatch/core_types.hpp"
#include "aerialpatch/error.hpp"
#include "aerialpatch/image.hpp"

namespace aerialpatch {

/// Assumed car footprint used to turn physical patch sizes into default
/// patch-to-car ratios.
inline constexpr double kAssumedCarWidthMm = 1800.0;
inline constexpr double kAssumedCarLengthMm = 4500.0;

/// Where and how large the patch lands relative to each car box.
///
/// ON: the patch width spans `patch_to_car_ratio` times the box's short side
/// (the car's width) and is centred on the box.
/// OFF: each strip's length spans `patch_to_car_ratio` times the box's long
/// side (the car's length); strips sit left, above and right of the box at
/// the gap, so the shape opens toward the box bottom edge.
struct PlacementGeometry {
    PatchDesign design = PatchDesign::On;
    double patch_to_car_ratio = 1189.0 / kAssumedCarWidthMm;
    /// Absolute gap in pixels; when unset the gap is `off_gap_fraction` of the box width.
    std::optional<double> off_gap_px;
    double off_gap_fraction = 0.1;

    static PlacementGeometry defaults(PatchDesign design) {
        PlacementGeometry g;
        g.design = design;
        g.patch_to_car_ratio = design == PatchDesign::On ? 1189.0 / kAssumedCarWidthMm : 3200.0 / kAssumedCarLengthMm;
        return g;
    }

    void validate() const {
        if (!(patch_to_car_ratio > 0.0)) throw ValidationError("embed.ratio must be positive");
        if (off_gap_px && *off_gap_px < 0.0) throw ValidationError("embed.off_gap_px must be non-negative");
        if (off_gap_fraction < 0.0) throw ValidationError("embed.off_gap must be non-negative");
    }

    ScaleRule scale_rule(const PieceDims& dims) const {
        return {patch_to_car_ratio, design == PatchDesign::Off, dims.width};
    }

    double gap_for(const Box& box) const { return off_gap_px ? *off_gap_px : off_gap_fraction * box.width(); }
};

/// Rectangle of size length x thickness centred at (cx, cy) whose length axis
/// points along `angle` (radians, image frame with y down).
struct RotatedRect {
    double cx = 0.0;
    double cy = 0.0;
    double length = 0.0;
    double thickness = 0.0;
    double angle = 0.0;

    std::array<std::array<double, 2>, 4> corners() const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double hl = 0.5 * length, ht = 0.5 * thickness;
        std::array<std::array<double, 2>, 4> out{};
        const double sx[4] = {-hl, hl, hl, -hl};
        const double sy[4] = {-ht, -ht, ht, ht};
        for (int k = 0; k < 4; ++k) out[k] = {cx + c * sx[k] - s * sy[k], cy + s * sx[k] + c * sy[k]};
        return out;
    }

    /// Coordinates of an image point in the rectangle frame, origin at the
    /// top-left corner, in image pixel units.
    std::array<double, 2> to_local(double x, double y) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double dx = x - cx, dy = y - cy;
        return {c * dx + s * dy + 0.5 * length, -s * dx + c * dy + 0.5 * thickness};
    }

    Box bounds() const {
        Box b{1e300, 1e300, -1e300, -1e300};
        for (const auto& p : corners()) {
            b.x_min = std::min(b.x_min, p[0]);
            b.y_min = std::min(b.y_min, p[1]);
            b.x_max = std::max(b.x_max, p[0]);
            b.y_max = std::max(b.y_max, p[1]);
        }
        return b;
    }
};

/// True when the open rectangle and the open box share interior points.
inline bool overlaps(const RotatedRect& r, const Box& box, double tolerance = 1e-9) {
    if (!box.valid()) return false;
    const auto rc = r.corners();
    const std::array<std::array<double, 2>, 4> bc{{{box.x_min, box.y_min},
                                                   {box.x_max, box.y_min},
                                                   {box.x_max, box.y_max},
                                                   {box.x_min, box.y_max}}};
    const double c = std::cos(r.angle), s = std::sin(r.angle);
    const std::array<std::array<double, 2>, 4> axes{{{1.0, 0.0}, {0.0, 1.0}, {c, s}, {-s, c}}};
    for (const auto& ax : axes) {
        double a0 = 1e300, a1 = -1e300, b0 = 1e300, b1 = -1e300;
        for (const auto& p : rc) {
            const double d = p[0] * ax[0] + p[1] * ax[1];
            a0 = std::min(a0, d);
            a1 = std::max(a1, d);
        }
        for (const auto& p : bc) {
            const double d = p[0] * ax[0] + p[1] * ax[1];
            b0 = std::min(b0, d);
            b1 = std::max(b1, d);
        }
        if (a1 <= b0 + tolerance || b1 <= a0 + tolerance) return false;
    }
    return true;
}

inline double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }

namespace detail {

inline std::array<RotatedRect, 3> off_strips_at_gap(const Box& box, double gap, double length, double thickness,
                                                    const AugmentationSpec& spec) {
    const double cx = box.centre_x() + spec.translate_x * box.width();
    const double cy = box.centre_y() + spec.translate_y * box.height();
    const double dx = cx - box.centre_x(), dy = cy - box.centre_y();
    const double half_pi = 0.5 * std::numbers::pi;
    // Unrotated strips, left / top / right.
    std::array<RotatedRect, 3> strips{{
        {box.x_min - gap - 0.5 * thickness, box.y_min - gap + 0.5 * length, length, thickness, half_pi},
        {box.centre_x(), box.y_min - gap - 0.5 * thickness, length, thickness, 0.0},
        {box.x_max + gap + 0.5 * thickness, box.y_min - gap + 0.5 * length, length, thickness, half_pi},
    }};
    const double th = deg_to_rad(spec.rotation_deg);
    const double c = std::cos(th), s = std::sin(th);
    for (auto& r : strips) {
        const double rx = r.cx - box.centre_x(), ry = r.cy - box.centre_y();
        r.cx = box.centre_x() + c * rx - s * ry + dx;
        r.cy = box.centre_y() + s * rx + c * ry + dy;
        r.angle += th;
    }
    return strips;
}

}  // namespace detail

/// The three strip footprints of an OFF patch around `box`. The gap grows in
/// quarter-pixel steps until no strip overlaps the box interior shrunk by one
/// pixel (the bilinear kernel radius); at zero rotation the configured gap is
/// used unchanged.
inline std::array<RotatedRect, 3> off_footprint(const Box& box, const PlacementGeometry& geometry,
                                                const AugmentationSpec& spec, const PieceDims& dims) {
    const double length = dims.width * spec.scale_factor;
    const double thickness = dims.height * spec.scale_factor;
    double gap = geometry.gap_for(box);
    const Box inner{box.x_min + 1.0, box.y_min + 1.0, box.x_max - 1.0, box.y_max - 1.0};
    for (int iter = 0;; ++iter) {
        auto strips = detail::off_strips_at_gap(box, gap, length, thickness, spec);
        bool clear = true;
        for (const auto& r : strips) clear = clear && !overlaps(r, inner);
        if (clear || iter > 4096) return strips;
        gap += 0.25;
    }
}

inline RotatedRect on_footprint(const Box& box, const AugmentationSpec& spec, const PieceDims& dims) {
    return {box.centre_x() + spec.translate_x * box.width(), box.centre_y() + spec.translate_y * box.height(),
            dims.width * spec.scale_factor, dims.height * spec.scale_factor, deg_to_rad(spec.rotation_deg)};
}

/// Footprints for one box in piece order.
inline std::vector<RotatedRect> patch_footprints(const Box& box, const PlacementGeometry& geometry,
                                                 const AugmentationSpec& spec, const PieceDims& dims) {
    if (geometry.design == PatchDesign::On) return {on_footprint(box, spec, dims)};
    auto s = off_footprint(box, geometry, spec, dims);
    return {s.begin(), s.end()};
}

/// Composited image plus the bookkeeping needed to pull gradients back onto
/// the patch.
struct EmbedResult {
    struct Sample {
        std::uint32_t pixel = 0;   // plane index in the output image
        std::uint32_t instance = 0;  // (box, piece) pair
        std::array<std::uint32_t, 4> source{};
        std::array<double, 4> weight{};
    };
    struct Instance {
        int box = 0;
        int piece = 0;
    };

    Image image;
    std::vector<Instance> instances;
    /// One entry per output pixel covered by a footprint (the final writer).
    std::vector<Sample> samples;
};

/// Composites the colour-transformed patch at every box. Pixels outside all
/// footprints are copied unchanged; overlapping footprints resolve in box
/// order, later boxes winning.
inline EmbedResult embed_patch(const Image& image, const Patch& patch, std::span<const Box> boxes,
                               std::span<const AugmentationSpec> specs, const PlacementGeometry& geometry) {
    if (boxes.size() != specs.size()) throw ValidationError("embed_patch needs one augmentation spec per box");
    if (image.channels() != 3) throw ValidationError("embed_patch needs a 3-channel image");
    if (patch.design() != geometry.design) throw ValidationError("patch design does not match placement geometry");

    EmbedResult result;
    result.image = image;
    if (boxes.empty()) return result;

    const int H = image.height(), W = image.width();
    const std::size_t plane = image.plane_size();
    const int pw = patch.dims().width, ph = patch.dims().height;
    std::vector<std::int32_t> winner(plane, -1);
    std::vector<EmbedResult::Sample> all;

    for (std::size_t b = 0; b < boxes.size(); ++b) {
        const auto& spec = specs[b];
        const auto footprints = patch_footprints(boxes[b], geometry, spec, patch.dims());
        for (int p = 0; p < static_cast<int>(footprints.size()); ++p) {
            const auto& rect = footprints[p];
            const auto inst = static_cast<std::uint32_t>(result.instances.size());
            result.instances.push_back({static_cast<int>(b), p});
            const Image transformed = apply_color_transform(patch.piece(p), spec, p);
            const Box bb = rect.bounds();
            const int x0 = std::max(0, static_cast<int>(std::floor(bb.x_min)));
            const int x1 = std::min(W - 1, static_cast<int>(std::ceil(bb.x_max)));
            const int y0 = std::max(0, static_cast<int>(std::floor(bb.y_min)));
            const int y1 = std::min(H - 1, static_cast<int>(std::ceil(bb.y_max)));
            const double inv_scale = 1.0 / spec.scale_factor;
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const auto local = rect.to_local(x + 0.5, y + 0.5);
                    if (local[0] < 0.0 || local[0] >= rect.length || local[1] < 0.0 || local[1] >= rect.thickness)
                        continue;
                    const double sx = local[0] * inv_scale - 0.5;
                    const double sy = local[1] * inv_scale - 0.5;
                    const int ix = static_cast<int>(std::floor(sx));
                    const int iy = static_cast<int>(std::floor(sy));
                    const double fx = sx - ix, fy = sy - iy;
                    const int xa = std::clamp(ix, 0, pw - 1), xb = std::clamp(ix + 1, 0, pw - 1);
                    const int ya = std::clamp(iy, 0, ph - 1), yb = std::clamp(iy + 1, 0, ph - 1);
                    EmbedResult::Sample smp;
                    smp.pixel = static_cast<std::uint32_t>(y * W + x);
                    smp.instance = inst;
                    smp.source = {static_cast<std::uint32_t>(ya * pw + xa), static_cast<std::uint32_t>(ya * pw + xb),
                                  static_cast<std::uint32_t>(yb * pw + xa), static_cast<std::uint32_t>(yb * pw + xb)};
                    smp.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
                    for (int c = 0; c < 3; ++c) {
                        const auto tp = transformed.plane(c);
                        double v = 0.0;
                        for (int k = 0; k < 4; ++k) v += smp.weight[k] * tp[smp.source[k]];
                        result.image.values()[c * plane + smp.pixel] = v;
                    }
                    winner[smp.pixel] = static_cast<std::int32_t>(all.size());
                    all.push_back(smp);
                }
            }
        }
    }
    for (std::size_t i = 0; i < plane; ++i)
        if (winner[i] >= 0) result.samples.push_back(all[static_cast<std::size_t>(winner[i])]);
    return result;
}

/// Gradient of a scalar w.r.t. patch pixels given its gradient w.r.t. the
/// composited image.
inline Patch embed_backward(const EmbedResult& result, const Patch& patch, std::span<const AugmentationSpec> specs,
                            const Image& grad_image) {
    if (!grad_image.same_shape(result.image)) throw ValidationError("gradient shape mismatch");
    const std::size_t plane = grad_image.plane_size();
    const int pw = patch.dims().width, ph = patch.dims().height;
    std::vector<Image> grad_transformed(result.instances.size(), Image(3, ph, pw, 0.0));
    for (const auto& smp : result.samples) {
        auto& gt = grad_transformed[smp.instance];
        for (int c = 0; c < 3; ++c) {
            const double g = grad_image.values()[c * plane + smp.pixel];
            if (g == 0.0) continue;
            auto tp = gt.plane(c);
            for (int k = 0; k < 4; ++k) tp[smp.source[k]] += smp.weight[k] * g;
        }
    }
    Patch grad = patch.zeros_like();
    for (std::size_t i = 0; i < result.instances.size(); ++i) {
        const auto& inst = result.instances[i];
        const Image g = color_transform_backward(patch.piece(inst.piece), specs[inst.box], grad_transformed[i], inst.piece);
        auto& dst = grad.piece(inst.piece).values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.values()[k];
    }
    return grad;
}

}  // namespace aerialpatch
