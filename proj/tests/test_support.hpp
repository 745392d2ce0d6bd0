// SPDX-License-Identifier: Apache-2.0
#pragma once

// Helpers shared by the unit suites and the acceptance runner: scratch
// directories, a small trained detector, and brute-force metric references
// written without reusing the library's code paths.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <unistd.h>

#include "aerialpatch/core_types.hpp"
#include "aerialpatch/detector.hpp"
#include "aerialpatch/rng.hpp"
#include "aerialpatch/synthetic.hpp"
#include "aerialpatch/toy_detector.hpp"

namespace testing_support {

namespace ap = aerialpatch;
namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("aerialpatch_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    const fs::path& path() const { return path_; }
    std::string operator/(const std::string& leaf) const { return (path_ / leaf).string(); }

private:
    fs::path path_;
};

struct Fixture {
    ap::ToyDetector detector;
    ap::SceneDataset dataset;
    ap::DetectionSet train_truth;
    ap::DetectionSet test_truth;
};

inline ap::SceneDataset synthetic_dataset(int train, int test, std::uint64_t seed, ap::DetectionSet* train_truth = nullptr,
                                          ap::DetectionSet* test_truth = nullptr) {
    ap::SceneDataset ds;
    ds.scene_name = "synthetic";
    ap::SyntheticSceneParams params;
    ap::Rng rng(seed);
    for (int i = 0; i < train + test; ++i) {
        auto scene = ap::gen_synthetic_scene(params, rng);
        const bool is_train = i < train;
        const std::string id = (is_train ? "train_" : "test_") + std::to_string(i);
        auto* truth = is_train ? train_truth : test_truth;
        if (truth)
            for (const auto& b : scene.boxes) truth->per_image[id].push_back({b, 1.0});
        (is_train ? ds.train : ds.test).push_back({id, std::move(scene.image)});
    }
    return ds;
}

/// Toy detector trained on 96 px synthetic scenes. Built once and cached in
/// the build tree so per-test processes can share it.
inline const Fixture& trained_fixture() {
    static const Fixture f = [] {
        Fixture x;
        x.dataset = synthetic_dataset(120, 30, 11, &x.train_truth, &x.test_truth);
        const fs::path cache = fs::path(AERIALPATCH_BINARY_DIR) / "fixture_detector_v1.bin";
        if (fs::exists(cache)) {
            x.detector = ap::ToyDetector::load(cache.string());
            return x;
        }
        std::vector<ap::LabeledImage> data;
        for (const auto& img : x.dataset.train) {
            ap::LabeledImage li{img.pixels, {}};
            for (const auto& d : x.train_truth.at(img.id)) li.boxes.push_back(d.box);
            data.push_back(std::move(li));
        }
        x.detector.initialize(7);
        ap::DetectorTrainConfig cfg;
        cfg.epochs = 20;
        ap::train_toy_detector(x.detector, data, cfg);
        const auto tmp = cache.string() + "." + std::to_string(::getpid());
        x.detector.save(tmp);
        fs::rename(tmp, cache);
        return x;
    }();
    return f;
}

inline ap::Box random_box(ap::Rng& rng, double extent = 60.0) {
    const double x = rng.uniform(0.0, extent), y = rng.uniform(0.0, extent);
    return {x, y, x + rng.uniform(4.0, 20.0), y + rng.uniform(4.0, 20.0)};
}

/// Box overlapping `b` heavily (IoU usually above 0.5).
inline ap::Box jitter_box(ap::Rng& rng, const ap::Box& b) {
    const double s = 0.15 * std::min(b.width(), b.height());
    return {b.x_min + rng.uniform(-s, s), b.y_min + rng.uniform(-s, s), b.x_max + rng.uniform(-s, s),
            b.y_max + rng.uniform(-s, s)};
}

// ---------------------------------------------------------------------------
// Reference implementations
// ---------------------------------------------------------------------------

namespace oracle {

inline double overlap(const ap::Box& a, const ap::Box& b) {
    const double w = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double h = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = w * h;
    const double uni = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
    return inter > 0.0 ? inter / uni : 0.0;
}

/// Attacked scores per clean detection (clean input order), found by
/// enumerating every injective assignment and keeping the one whose score
/// vector, read in descending clean-score order, is lexicographically largest.
inline std::vector<double> exhaustive_match(const std::vector<ap::Detection>& clean,
                                            const std::vector<ap::Detection>& attacked, double min_iou) {
    std::vector<std::size_t> order(clean.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return clean[a].objectness > clean[b].objectness; });
    std::vector<double> best(clean.size(), -1.0), current(clean.size(), 0.0);
    std::vector<bool> used(attacked.size(), false);
    bool have = false;
    std::function<void(std::size_t)> rec = [&](std::size_t k) {
        if (k == order.size()) {
            bool better = !have;
            for (std::size_t i = 0; !better && i < order.size(); ++i) {
                if (current[order[i]] > best[order[i]]) better = true;
                if (current[order[i]] < best[order[i]]) break;
            }
            if (better) {
                best = current;
                have = true;
            }
            return;
        }
        const auto ci = order[k];
        current[ci] = 0.0;
        rec(k + 1);
        for (std::size_t a = 0; a < attacked.size(); ++a) {
            if (used[a] || overlap(clean[ci].box, attacked[a].box) < min_iou) continue;
            used[a] = true;
            current[ci] = attacked[a].objectness;
            rec(k + 1);
            used[a] = false;
        }
        current[ci] = 0.0;
    };
    rec(0);
    return best;
}

inline double aorr_total(const std::vector<std::vector<ap::Detection>>& clean,
                         const std::vector<std::vector<double>>& attacked_scores) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t j = 0; j < clean.size(); ++j)
        for (std::size_t l = 0; l < clean[j].size(); ++l) {
            sum += 1.0 - attacked_scores[j][l] / clean[j][l].objectness;
            ++n;
        }
    return sum / n;
}

inline double osr(const std::vector<double>& patched, const std::vector<double>& clean) {
    double p = 0.0, c = 0.0;
    for (double v : patched) p += v;
    for (double v : clean) c += v;
    return (p * static_cast<double>(clean.size())) / (c * static_cast<double>(patched.size()));
}

inline std::optional<double> ndr(const std::vector<double>& patched, const std::vector<double>& clean, double tau) {
    long hp = 0, hc = 0;
    for (double v : patched) hp += v >= tau ? 1 : 0;
    for (double v : clean) hc += v >= tau ? 1 : 0;
    if (hc == 0) return std::nullopt;
    return (static_cast<double>(hp) * static_cast<double>(clean.size())) /
           (static_cast<double>(hc) * static_cast<double>(patched.size()));
}

/// AP recomputed from scratch for every prefix of the ranking; 101-point
/// interpolation with integer recall comparison.
inline double average_precision(const ap::DetectionSet& gt, const ap::DetectionSet& dets, double thr) {
    struct Item {
        std::string image;
        ap::Detection det;
    };
    std::vector<Item> all;
    for (const auto& [id, v] : dets.per_image)
        for (const auto& d : v) all.push_back({id, d});
    std::stable_sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.det.objectness > b.det.objectness; });
    const long total_gt = static_cast<long>(gt.total());
    std::vector<long> tps;
    std::vector<double> precision;
    for (std::size_t n = 1; n <= all.size(); ++n) {
        std::map<std::string, std::vector<bool>> taken;
        long tp = 0;
        for (std::size_t k = 0; k < n; ++k) {
            const auto& g = gt.at(all[k].image);
            auto& t = taken[all[k].image];
            t.resize(g.size(), false);
            long pick = -1;
            double pick_iou = -1.0;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!t[i] && overlap(all[k].det.box, g[i].box) > pick_iou) {
                    pick_iou = overlap(all[k].det.box, g[i].box);
                    pick = static_cast<long>(i);
                }
            if (pick >= 0 && pick_iou >= thr) {
                t[static_cast<std::size_t>(pick)] = true;
                ++tp;
            }
        }
        tps.push_back(tp);
        precision.push_back(static_cast<double>(tp) / static_cast<double>(n));
    }
    double sum = 0.0;
    for (long level = 0; level <= 100; ++level) {
        double p = 0.0;
        for (std::size_t k = 0; k < tps.size(); ++k)
            if (tps[k] * 100 >= level * total_gt) p = std::max(p, precision[k]);
        sum += p;
    }
    return sum / 101.0;
}

}  // namespace oracle
}  // namespace testing_support
