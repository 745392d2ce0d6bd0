// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aerialpatch/adam.hpp"
#include "aerialpatch/core_types.hpp"
#include "aerialpatch/detector.hpp"
#include "aerialpatch/error.hpp"
#include "aerialpatch/io/serialize.hpp"
#include "aerialpatch/loss.hpp"
#include "aerialpatch/rng.hpp"

namespace aerialpatch {

struct TrainConfig {
    PipelineVariant variant = PipelineVariant::GC;
    int epochs = 500;
    int batch_size = 8;
    double learning_rate = 0.03;
    std::uint64_t rng_seed = 0;
    /// Epochs between checkpoints; 0 disables checkpointing.
    int checkpoint_interval = 0;

    void validate() const {
        if (epochs < 1) throw ValidationError("train.epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ValidationError("train.learning_rate must be > 0");
        if (checkpoint_interval < 0) throw ValidationError("train.checkpoint_interval must be >= 0");
    }
};

struct CurvePoint {
    int epoch = 0;
    double mean_loss = 0.0;
    double mean_max_objectness = 0.0;
    double nps = 0.0;
    double tv = 0.0;
};

struct TrainResult {
    Patch patch;
    Patch initial;
    std::vector<CurvePoint> curve;
    /// Mean batch loss of every optimiser step.
    std::vector<double> step_losses;
};

/// Optimiser state sufficient to resume a run bit-exactly.
struct Checkpoint {
    int epoch = 0;
    Patch patch;
    std::string rng_state;
    std::string config_json;
    long adam_steps = 0;
    std::vector<std::vector<double>> adam_m;
    std::vector<std::vector<double>> adam_v;
};

// Binary container: "APCK", u32 version, epoch, config JSON, rng state,
// patch, Adam step count and moment buffers.
inline std::string encode_checkpoint(const Checkpoint& c) {
    std::string out = "APCK";
    detail::put(out, std::uint32_t{1});
    detail::put(out, static_cast<std::int32_t>(c.epoch));
    detail::put_string(out, c.config_json);
    detail::put_string(out, c.rng_state);
    detail::put_patch(out, c.patch);
    detail::put(out, static_cast<std::int64_t>(c.adam_steps));
    detail::put(out, static_cast<std::uint32_t>(c.adam_m.size()));
    for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
        detail::put(out, static_cast<std::uint64_t>(c.adam_m[i].size()));
        detail::put_bytes(out, c.adam_m[i].data(), c.adam_m[i].size() * sizeof(double));
        detail::put_bytes(out, c.adam_v[i].data(), c.adam_v[i].size() * sizeof(double));
    }
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    detail::ByteReader in(bytes, "checkpoint");
    in.expect_magic("APCK");
    if (in.get<std::uint32_t>() != 1) throw ValidationError("unsupported checkpoint version");
    Checkpoint c;
    c.epoch = in.get<std::int32_t>();
    c.config_json = in.get_string();
    c.rng_state = in.get_string();
    c.patch = detail::get_patch(in);
    c.adam_steps = static_cast<long>(in.get<std::int64_t>());
    const auto n = in.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto len = in.get<std::uint64_t>();
        if (len > (1ULL << 32)) throw ValidationError("corrupt checkpoint");
        std::vector<double> m(len), v(len);
        in.get_doubles(m);
        in.get_doubles(v);
        c.adam_m.push_back(std::move(m));
        c.adam_v.push_back(std::move(v));
    }
    return c;
}

struct OptimizeHooks {
    std::function<void(const CurvePoint&)> on_epoch;
    /// Directory for checkpoints and non-finite-loss dumps; empty disables them.
    std::string output_dir;
    std::string config_json;
    std::optional<Checkpoint> resume;
};

/// Minimises the mean per-image loss over the training split with Adam,
/// clamping pixels to [0,1] after every step. The detector is only read.
/// The CONTROL variant returns the random initial patch untouched.
inline TrainResult optimize_patch(const SceneDataset& dataset, const DetectionSet& annotations, PatchDesign design,
                                  const PieceDims& dims, const LossSettings& settings, const TrainConfig& config,
                                  const Detector& detector, const PrintableColorSet& colors,
                                  const OptimizeHooks& hooks = {}) {
    config.validate();
    settings.weights.validate();
    settings.geometry.validate();
    if (settings.geometry.design != design) throw ValidationError("placement geometry design does not match patch design");

    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < dataset.train.size(); ++i) {
        const auto& id = dataset.train[i].id;
        if (!annotations.per_image.contains(id)) throw ValidationError("annotations do not cover training image " + id);
        if (!annotations.at(id).empty()) usable.push_back(i);
    }

    Rng rng(config.rng_seed);
    TrainResult result;
    result.initial = Patch::random(design, dims, rng);
    result.patch = result.initial;
    if (config.variant == PipelineVariant::Control) return result;
    if (usable.empty()) throw ValidationError("no training image has an annotated car");

    LossSettings s = settings;
    s.variant = config.variant;
    Adam adam({config.learning_rate});
    int first_epoch = 0;
    if (hooks.resume) {
        result.patch = hooks.resume->patch;
        rng.set_state(hooks.resume->rng_state);
        adam.restore(hooks.resume->adam_steps, hooks.resume->adam_m, hooks.resume->adam_v);
        first_epoch = hooks.resume->epoch;
    }

    for (int epoch = first_epoch; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order = usable;
        rng.shuffle(order.begin(), order.end());
        CurvePoint point{epoch + 1};
        std::size_t images = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const double inv = 1.0 / static_cast<double>(end - start);
            Patch grad = result.patch.zeros_like();
            double batch_loss = 0.0;
            std::vector<std::pair<std::string, double>> batch_values;
            for (std::size_t k = start; k < end; ++k) {
                const auto& img = dataset.train[order[k]];
                std::vector<Box> boxes;
                for (const auto& d : annotations.at(img.id)) boxes.push_back(d.box);
                const auto r = image_loss(result.patch, img.pixels, boxes, s, detector, colors, rng);
                batch_values.emplace_back(img.id, r.total);
                batch_loss += r.total * inv;
                point.mean_loss += r.total;
                point.mean_max_objectness += r.max_objectness;
                point.nps = r.nps;
                point.tv = r.tv;
                ++images;
                for (int p = 0; p < grad.piece_count(); ++p) {
                    auto& dst = grad.piece(p).values();
                    const auto& src = r.grad.piece(p).values();
                    for (std::size_t q = 0; q < dst.size(); ++q) dst[q] += src[q] * inv;
                }
            }
            bool finite = std::isfinite(batch_loss);
            for (const auto& piece : grad.pieces())
                for (double v : piece.values()) finite = finite && std::isfinite(v);
            if (!finite) {
                Json dump{{"epoch", epoch + 1}, {"batch", Json::array()}};
                for (const auto& [id, v] : batch_values)
                    dump["batch"].push_back({{"image", id}, {"loss", std::isfinite(v) ? Json(v) : Json("non-finite")}});
                if (!hooks.output_dir.empty())
                    write_file_atomic((std::filesystem::path(hooks.output_dir) / "nonfinite_batch.json").string(),
                                      dump.dump(1));
                throw Error("non-finite loss in epoch " + std::to_string(epoch + 1) + ": " + dump.dump());
            }
            result.step_losses.push_back(batch_loss);

            std::vector<std::span<double>> params;
            std::vector<std::span<const double>> grads;
            for (int p = 0; p < grad.piece_count(); ++p) {
                params.emplace_back(result.patch.piece(p).values());
                grads.emplace_back(grad.piece(p).values());
            }
            adam.step(params, grads);
            result.patch.clamp();
        }
        point.mean_loss /= static_cast<double>(images);
        point.mean_max_objectness /= static_cast<double>(images);
        result.curve.push_back(point);
        if (hooks.on_epoch) hooks.on_epoch(point);

        if (config.checkpoint_interval > 0 && !hooks.output_dir.empty() && (epoch + 1) % config.checkpoint_interval == 0) {
            Checkpoint c{epoch + 1, result.patch, rng.state(), hooks.config_json, adam.steps(), adam.first_moments(),
                         adam.second_moments()};
            write_file_atomic((std::filesystem::path(hooks.output_dir) / "checkpoint.bin").string(), encode_checkpoint(c));
        }
    }
    return result;
}

}  // namespace aerialpatch
