// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "aerialpatch/core_types.hpp"
#include "aerialpatch/error.hpp"
#include "aerialpatch/image.hpp"

namespace aerialpatch {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Predictions of one output scale, in detector input coordinates. Entry
/// `(row * cols + col) * anchors + a` holds anchor `a` of cell (row, col).
struct ScaleOutput {
    int rows = 0;
    int cols = 0;
    int anchors = 0;
    /// Input pixels per grid cell.
    double stride = 1.0;
    std::vector<Box> boxes;
    std::vector<double> objectness;

    std::size_t size() const { return objectness.size(); }
    Box cell_rect(std::size_t entry) const {
        const auto cell = entry / static_cast<std::size_t>(anchors);
        const auto r = static_cast<double>(cell / static_cast<std::size_t>(cols));
        const auto c = static_cast<double>(cell % static_cast<std::size_t>(cols));
        return {c * stride, r * stride, (c + 1) * stride, (r + 1) * stride};
    }
};

struct DetectorOutput {
    std::vector<ScaleOutput> scales;

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& s : scales) n += s.size();
        return n;
    }
};

/// Gradient w.r.t. every objectness score, shaped like DetectorOutput.
using ObjectnessGradient = std::vector<std::vector<double>>;

/// Opaque per-call state a detector keeps to back-propagate.
struct ForwardTape {
    virtual ~ForwardTape() = default;
};

/// Plug-in contract for a differentiable single-class detector. Inputs are
/// square 3-channel images of `input_size()` pixels; callers letterbox.
/// Implementations never mutate their parameters in forward/backward.
class Detector {
public:
    virtual ~Detector() = default;

    virtual int input_size() const = 0;
    virtual DetectorOutput forward(const Image& input) const = 0;
    virtual DetectorOutput forward(const Image& input, std::unique_ptr<ForwardTape>& tape) const = 0;
    /// Vector-Jacobian product from objectness scores back to the input image.
    virtual Image input_gradient(const ForwardTape& tape, const ObjectnessGradient& grad) const = 0;
    /// Stable hex digest of all parameters.
    virtual std::string checksum() const = 0;

    /// Flattens every prediction into detections (input coordinates).
    virtual std::vector<Detection> decode(const DetectorOutput& output) const {
        std::vector<Detection> out;
        for (const auto& s : output.scales)
            for (std::size_t i = 0; i < s.size(); ++i) out.push_back({s.boxes[i], s.objectness[i]});
        return out;
    }

protected:
    void check_input(const Image& input) const {
        if (input.channels() != 3) throw ValidationError("detector input must have 3 channels");
        if (input.width() != input_size() || input.height() != input_size())
            throw ValidationError("detector input must be letterboxed to " + std::to_string(input_size()) + " px");
    }
};

// ---------------------------------------------------------------------------
// YOLO-style grid decoding
// ---------------------------------------------------------------------------

struct Anchor {
    double width = 1.0;
    double height = 1.0;
};

/// Decodes a raw YOLO-style scale laid out as (anchors * (5 + classes))
/// channel planes of rows x cols cells: tx, ty, tw, th, objectness logit,
/// class logits. Class logits are ignored.
inline ScaleOutput decode_yolo_scale(const Image& raw, std::span<const Anchor> anchors, double stride, int classes = 0) {
    const int per_anchor = 5 + classes;
    const int A = static_cast<int>(anchors.size());
    if (raw.channels() != A * per_anchor) throw ValidationError("raw YOLO scale has the wrong channel count");
    ScaleOutput s;
    s.rows = raw.height();
    s.cols = raw.width();
    s.anchors = A;
    s.stride = stride;
    s.boxes.resize(static_cast<std::size_t>(s.rows) * s.cols * A);
    s.objectness.resize(s.boxes.size());
    for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c)
            for (int a = 0; a < A; ++a) {
                const int base = a * per_anchor;
                const double cx = (c + sigmoid(raw.at(base + 0, r, c))) * stride;
                const double cy = (r + sigmoid(raw.at(base + 1, r, c))) * stride;
                const double w = anchors[a].width * std::exp(std::clamp(raw.at(base + 2, r, c), -8.0, 8.0));
                const double h = anchors[a].height * std::exp(std::clamp(raw.at(base + 3, r, c), -8.0, 8.0));
                const auto e = (static_cast<std::size_t>(r) * s.cols + c) * A + a;
                s.boxes[e] = Box::from_centre(cx, cy, w, h);
                s.objectness[e] = sigmoid(raw.at(base + 4, r, c));
            }
    return s;
}

// ---------------------------------------------------------------------------
// Letterboxing
// ---------------------------------------------------------------------------

/// Uniform scale into a square canvas with zero padding.
struct Letterbox {
    int source_width = 0;
    int source_height = 0;
    int size = 0;
    double scale = 1.0;
    int resized_width = 0;
    int resized_height = 0;
    int pad_x = 0;
    int pad_y = 0;

    static Letterbox fit(int width, int height, int size) {
        Letterbox lb;
        lb.source_width = width;
        lb.source_height = height;
        lb.size = size;
        lb.scale = std::min(static_cast<double>(size) / width, static_cast<double>(size) / height);
        lb.resized_width = std::clamp(static_cast<int>(std::lround(width * lb.scale)), 1, size);
        lb.resized_height = std::clamp(static_cast<int>(std::lround(height * lb.scale)), 1, size);
        lb.pad_x = (size - lb.resized_width) / 2;
        lb.pad_y = (size - lb.resized_height) / 2;
        return lb;
    }

    bool identity() const { return source_width == size && source_height == size; }

    Box to_source(const Box& b) const {
        const double sx = static_cast<double>(resized_width) / source_width;
        const double sy = static_cast<double>(resized_height) / source_height;
        Box o{(b.x_min - pad_x) / sx, (b.y_min - pad_y) / sy, (b.x_max - pad_x) / sx, (b.y_max - pad_y) / sy};
        o.x_min = std::clamp(o.x_min, 0.0, static_cast<double>(source_width));
        o.x_max = std::clamp(o.x_max, 0.0, static_cast<double>(source_width));
        o.y_min = std::clamp(o.y_min, 0.0, static_cast<double>(source_height));
        o.y_max = std::clamp(o.y_max, 0.0, static_cast<double>(source_height));
        return o;
    }

    Box to_canvas(const Box& b) const {
        const double sx = static_cast<double>(resized_width) / source_width;
        const double sy = static_cast<double>(resized_height) / source_height;
        return {b.x_min * sx + pad_x, b.y_min * sy + pad_y, b.x_max * sx + pad_x, b.y_max * sy + pad_y};
    }
};

namespace detail {

/// Shared bilinear resize: forward writes into `out`, backward (transpose)
/// accumulates `grad_out` into `grad_in`.
template <bool Backward>
void letterbox_pass(const Letterbox& lb, const Image& src, Image& dst) {
    const double sx = static_cast<double>(lb.source_width) / lb.resized_width;
    const double sy = static_cast<double>(lb.source_height) / lb.resized_height;
    for (int oy = 0; oy < lb.resized_height; ++oy) {
        const double fy_src = (oy + 0.5) * sy - 0.5;
        const int y0 = static_cast<int>(std::floor(fy_src));
        const double fy = fy_src - y0;
        const int ya = std::clamp(y0, 0, lb.source_height - 1), yb = std::clamp(y0 + 1, 0, lb.source_height - 1);
        for (int ox = 0; ox < lb.resized_width; ++ox) {
            const double fx_src = (ox + 0.5) * sx - 0.5;
            const int x0 = static_cast<int>(std::floor(fx_src));
            const double fx = fx_src - x0;
            const int xa = std::clamp(x0, 0, lb.source_width - 1), xb = std::clamp(x0 + 1, 0, lb.source_width - 1);
            const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            for (int c = 0; c < 3; ++c) {
                if constexpr (!Backward) {
                    dst.at(c, oy + lb.pad_y, ox + lb.pad_x) = w[0] * src.at(c, ya, xa) + w[1] * src.at(c, ya, xb) +
                                                             w[2] * src.at(c, yb, xa) + w[3] * src.at(c, yb, xb);
                } else {
                    const double g = src.at(c, oy + lb.pad_y, ox + lb.pad_x);
                    dst.at(c, ya, xa) += w[0] * g;
                    dst.at(c, ya, xb) += w[1] * g;
                    dst.at(c, yb, xa) += w[2] * g;
                    dst.at(c, yb, xb) += w[3] * g;
                }
            }
        }
    }
}

}  // namespace detail

inline Image apply_letterbox(const Image& image, const Letterbox& lb) {
    if (lb.identity()) return image;
    Image out(3, lb.size, lb.size, 0.0);
    detail::letterbox_pass<false>(lb, image, out);
    return out;
}

inline Image letterbox_backward(const Image& grad_canvas, const Letterbox& lb) {
    if (lb.identity()) return grad_canvas;
    Image g(3, lb.source_height, lb.source_width, 0.0);
    detail::letterbox_pass<true>(lb, grad_canvas, g);
    return g;
}

// ---------------------------------------------------------------------------
// Objectness reduction
// ---------------------------------------------------------------------------

enum class MaxMode { Hard, Soft };

struct ObjectnessMax {
    double value = 0.0;
    /// d value / d score for every prediction.
    ObjectnessGradient grad;
};

/// Largest objectness over every prediction of every scale. Under MaxMode::Hard
/// the gradient is one at the first arg-max and zero elsewhere; MaxMode::Soft
/// uses a softmax-weighted mean with the given temperature. When `region` is
/// given, only cells overlapping one of its boxes take part.
inline ObjectnessMax max_objectness(const DetectorOutput& output, MaxMode mode = MaxMode::Hard,
                                    double temperature = 0.05, std::span<const Box> region = {},
                                    bool restrict_to_region = false) {
    ObjectnessMax r;
    r.grad.resize(output.scales.size());
    std::vector<std::pair<std::size_t, std::size_t>> active;
    for (std::size_t s = 0; s < output.scales.size(); ++s) {
        const auto& sc = output.scales[s];
        r.grad[s].assign(sc.size(), 0.0);
        for (std::size_t i = 0; i < sc.size(); ++i) {
            if (restrict_to_region) {
                const Box cell = sc.cell_rect(i);
                bool hit = false;
                for (const auto& b : region)
                    if (std::min(cell.x_max, b.x_max) > std::max(cell.x_min, b.x_min) &&
                        std::min(cell.y_max, b.y_max) > std::max(cell.y_min, b.y_min))
                        hit = true;
                if (!hit) continue;
            }
            active.emplace_back(s, i);
        }
    }
    if (active.empty()) throw ValidationError("max_objectness of an empty detector output");

    auto score = [&](const std::pair<std::size_t, std::size_t>& k) { return output.scales[k.first].objectness[k.second]; };
    auto best = active.front();
    for (const auto& k : active)
        if (score(k) > score(best)) best = k;

    if (mode == MaxMode::Hard) {
        r.value = score(best);
        r.grad[best.first][best.second] = 1.0;
        return r;
    }
    if (!(temperature > 0.0)) throw ValidationError("soft-max temperature must be positive");
    const double top = score(best);
    double z = 0.0, num = 0.0;
    for (const auto& k : active) {
        const double e = std::exp((score(k) - top) / temperature);
        z += e;
        num += e * score(k);
    }
    r.value = num / z;
    for (const auto& k : active) {
        const double p = std::exp((score(k) - top) / temperature) / z;
        r.grad[k.first][k.second] = p * (1.0 + (score(k) - r.value) / temperature);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

/// Greedy non-maximum suppression; a detection is dropped when its IoU with
/// an already kept, higher-scoring one exceeds `iou_threshold`. Output is
/// sorted by descending objectness (stable for ties).
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.objectness > b.objectness; });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool keep = true;
        for (const auto& k : kept)
            if (iou(d.box, k.box) > iou_threshold) {
                keep = false;
                break;
            }
        if (keep) kept.push_back(d);
    }
    return kept;
}

/// Runs the detector on an image of any size and returns thresholded,
/// suppressed detections in the image's own pixel coordinates.
inline std::vector<Detection> detect(const Detector& detector, const Image& image, double objectness_threshold,
                                     double nms_iou) {
    if (objectness_threshold < 0.0 || nms_iou < 0.0 || nms_iou > 1.0)
        throw ValidationError("detection thresholds must lie in [0,1]");
    if (image.channels() != 3) throw ValidationError("detector input must have 3 channels");
    const auto lb = Letterbox::fit(image.width(), image.height(), detector.input_size());
    const auto output = detector.forward(apply_letterbox(image, lb));
    std::vector<Detection> candidates;
    for (const auto& d : detector.decode(output)) {
        if (d.objectness < objectness_threshold) continue;
        Detection m{lb.to_source(d.box), d.objectness};
        if (!m.box.valid()) continue;
        candidates.push_back(m);
    }
    return nms(std::move(candidates), nms_iou);
}

/// FNV-1a over raw bytes, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xf];
    return s;
}

}  // namespace aerialpatch
