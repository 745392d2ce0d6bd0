// SPDX-License-Identifier: Apache-2.0
#pragma once

// Attack-efficacy metrics: objectness reduction in the digital regime,
// score ratio and detection-rate ratio for tracked physical footage, and
// single-class precision/recall.

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aerialpatch/core_types.hpp"
#include "aerialpatch/error.hpp"

namespace aerialpatch {

inline constexpr double kRetrievalThreshold = 1e-3;

struct MatchedPair {
    Detection clean;
    /// Objectness of the associated attacked detection; 0 when none overlapped enough.
    double attacked_score = 0.0;
};

/// One-to-one association of clean detections with attacked detections.
/// Clean detections are visited in descending score order (stable); each
/// takes the highest-scoring still unmatched attacked detection whose IoU
/// with it is at least `min_iou`. Pairs are returned in visiting order.
inline std::vector<MatchedPair> match_detections(std::span<const Detection> clean, std::span<const Detection> attacked_raw,
                                                 double min_iou = 0.5) {
    std::vector<std::size_t> order(clean.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return clean[a].objectness > clean[b].objectness; });
    std::vector<bool> used(attacked_raw.size(), false);
    std::vector<MatchedPair> pairs;
    pairs.reserve(clean.size());
    for (auto ci : order) {
        std::optional<std::size_t> best;
        for (std::size_t a = 0; a < attacked_raw.size(); ++a) {
            if (used[a] || iou(clean[ci].box, attacked_raw[a].box) < min_iou) continue;
            if (!best || attacked_raw[a].objectness > attacked_raw[*best].objectness) best = a;
        }
        MatchedPair p{clean[ci], 0.0};
        if (best) {
            used[*best] = true;
            p.attacked_score = attacked_raw[*best].objectness;
        }
        pairs.push_back(p);
    }
    return pairs;
}

enum class AorrNormalization {
    /// Mean over every detection of every image.
    TotalDetections,
    /// Mean over images of the per-image mean (images without detections skipped).
    PerImageMean,
};

/// Average objectness reduction rate, mean of (s - s~) / s.
inline double aorr(std::span<const std::vector<MatchedPair>> per_image,
                   AorrNormalization normalization = AorrNormalization::TotalDetections) {
    double total = 0.0;
    std::size_t count = 0;
    double image_sum = 0.0;
    std::size_t images = 0;
    for (const auto& pairs : per_image) {
        double s = 0.0;
        for (const auto& p : pairs) {
            if (!(p.clean.objectness > 0.0)) throw ValidationError("AORR needs positive clean scores");
            s += (p.clean.objectness - p.attacked_score) / p.clean.objectness;
        }
        total += s;
        count += pairs.size();
        if (!pairs.empty()) {
            image_sum += s / static_cast<double>(pairs.size());
            ++images;
        }
    }
    if (count == 0) throw ValidationError("AORR over zero detections");
    return normalization == AorrNormalization::TotalDetections ? total / static_cast<double>(count)
                                                               : image_sum / static_cast<double>(images);
}

/// Objectness score ratio: mean patched score over mean clean score.
inline double osr(const TrackedScoreSeries& series) {
    series.validate();
    const double patched = std::accumulate(series.patched_scores.begin(), series.patched_scores.end(), 0.0) /
                           static_cast<double>(series.patched_scores.size());
    const double clean = std::accumulate(series.clean_scores.begin(), series.clean_scores.end(), 0.0) /
                         static_cast<double>(series.clean_scores.size());
    if (!(clean > 0.0)) throw ValidationError("OSR undefined: clean scores average to zero");
    return patched / clean;
}

/// Normalised detection rate at threshold tau; empty when no clean frame
/// reaches tau (undefined ratio).
inline std::optional<double> ndr(const TrackedScoreSeries& series, double tau) {
    series.validate();
    auto rate = [tau](const std::vector<double>& v) {
        const auto hits = std::count_if(v.begin(), v.end(), [tau](double s) { return s >= tau; });
        return static_cast<double>(hits) / static_cast<double>(v.size());
    };
    const double clean = rate(series.clean_scores);
    if (clean == 0.0) return std::nullopt;
    return rate(series.patched_scores) / clean;
}

struct NdrPoint {
    double tau = 0.0;
    std::optional<double> value;
};

/// Thresholds 0.05, 0.10, ..., 0.95.
inline std::vector<double> default_tau_grid() {
    std::vector<double> g;
    for (int k = 1; k <= 19; ++k) g.push_back(k / 20.0);
    return g;
}

inline std::vector<NdrPoint> ndr_curve(const TrackedScoreSeries& series, std::span<const double> tau_grid) {
    std::vector<NdrPoint> out;
    for (double t : tau_grid) out.push_back({t, ndr(series, t)});
    return out;
}

struct PrPoint {
    double score = 0.0;
    double recall = 0.0;
    double precision = 0.0;
};

struct PrResult {
    std::vector<PrPoint> curve;
    double ap = 0.0;
    std::size_t ground_truth = 0;
    std::size_t true_positives = 0;
};

/// Single-class precision/recall. Detections from all images are ranked by
/// score (stable: image id order, then list order); each takes the unmatched
/// ground-truth box of its image with the highest IoU when that IoU reaches
/// `iou_threshold`. AP is the mean of the interpolated precision envelope at
/// the 101 recall levels 0, 0.01, ..., 1.
inline PrResult pr_ap(const DetectionSet& ground_truth, const DetectionSet& detections, double iou_threshold = 0.5) {
    PrResult r;
    r.ground_truth = ground_truth.total();
    if (r.ground_truth == 0) throw ValidationError("precision/recall needs ground truth");

    struct Ranked {
        const std::string* image;
        const Detection* det;
    };
    std::vector<Ranked> ranked;
    for (const auto& [id, dets] : detections.per_image)
        for (const auto& d : dets) ranked.push_back({&id, &d});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return a.det->objectness > b.det->objectness; });

    std::map<std::string, std::vector<bool>> used;
    for (const auto& [id, gts] : ground_truth.per_image) used[id].assign(gts.size(), false);

    std::size_t tp = 0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        const auto& gts = ground_truth.at(*ranked[k].image);
        auto& u = used[*ranked[k].image];
        u.resize(gts.size(), false);
        double best_iou = -1.0;
        std::optional<std::size_t> best;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (u[g]) continue;
            const double o = iou(ranked[k].det->box, gts[g].box);
            if (o > best_iou) {
                best_iou = o;
                best = g;
            }
        }
        if (best && best_iou >= iou_threshold) {
            u[*best] = true;
            ++tp;
        }
        r.curve.push_back({ranked[k].det->objectness, static_cast<double>(tp) / static_cast<double>(r.ground_truth),
                           static_cast<double>(tp) / static_cast<double>(k + 1)});
    }
    r.true_positives = tp;

    // Precision envelope, non-increasing in recall.
    std::vector<double> envelope(r.curve.size());
    double running = 0.0;
    for (std::size_t k = r.curve.size(); k-- > 0;) {
        running = std::max(running, r.curve[k].precision);
        envelope[k] = running;
    }
    double sum = 0.0;
    std::size_t k = 0;
    for (int level = 0; level <= 100; ++level) {
        const double rec = level / 100.0;
        while (k < r.curve.size() && r.curve[k].recall < rec) ++k;
        sum += k < r.curve.size() ? envelope[k] : 0.0;
    }
    r.ap = sum / 101.0;
    return r;
}

}  // namespace aerialpatch
