// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "aerialpatch/core_types.hpp"
#include "aerialpatch/error.hpp"
#include "aerialpatch/image.hpp"
#include "aerialpatch/rng.hpp"
#include "aerialpatch/weather.hpp"

namespace aerialpatch {

/// Sampled transformation parameters for one embedded patch instance.
struct AugmentationSpec {
    /// Image pixels per patch pixel.
    double scale_factor = 1.0;
    double rotation_deg = 0.0;
    double brightness_delta = 0.0;
    double contrast_factor = 1.0;
    double noise_amplitude = 0.0;
    std::uint64_t noise_seed = 0;
    /// Placement offset as a fraction of the box width/height.
    double translate_x = 0.0;
    double translate_y = 0.0;
    std::optional<WeatherSpec> weather;

    friend bool operator==(const AugmentationSpec&, const AugmentationSpec&) = default;
};

/// Ranges the sampler draws from.
struct AugmentationConfig {
    double rotation_deg = 20.0;
    double brightness = 0.1;
    double contrast_min = 0.8;
    double contrast_max = 1.2;
    double noise = 0.1;
    double scale_jitter = 0.1;
    double translation_jitter = 0.0;
    bool weather_enabled = false;
    std::vector<WeatherEffect> weather_effects{kAllWeatherEffects.begin(), kAllWeatherEffects.end()};
    double weather_intensity_min = 0.3;
    double weather_intensity_max = 1.0;

    void validate() const {
        if (rotation_deg < 0.0 || rotation_deg > 20.0) throw ValidationError("aug.rotation_deg must lie in [0,20]");
        if (brightness < 0.0 || brightness > 0.1) throw ValidationError("aug.brightness must lie in [0,0.1]");
        if (contrast_min < 0.8 || contrast_max > 1.2 || contrast_min > contrast_max)
            throw ValidationError("aug.contrast_min/max must satisfy 0.8 <= min <= max <= 1.2");
        if (noise < 0.0 || noise > 0.1) throw ValidationError("aug.noise must lie in [0,0.1]");
        if (scale_jitter < 0.0 || scale_jitter >= 1.0) throw ValidationError("aug.scale_jitter must lie in [0,1)");
        if (translation_jitter < 0.0) throw ValidationError("aug.translation_jitter must be non-negative");
        if (weather_enabled && weather_effects.empty()) throw ValidationError("weather enabled with no effects");
        if (weather_intensity_min < 0.0 || weather_intensity_max > 1.0 || weather_intensity_min > weather_intensity_max)
            throw ValidationError("weather intensity range must lie in [0,1]");
    }

    /// Every jitter zeroed: samples are the identity transform at nominal scale.
    static AugmentationConfig identity() {
        AugmentationConfig c;
        c.rotation_deg = 0.0;
        c.brightness = 0.0;
        c.contrast_min = c.contrast_max = 1.0;
        c.noise = 0.0;
        c.scale_jitter = 0.0;
        c.translation_jitter = 0.0;
        return c;
    }
};

/// How the nominal embedding scale follows from a target box: the patch piece
/// extent (in patch pixels) is mapped onto `ratio` times the box's short or
/// long side.
struct ScaleRule {
    double ratio = 0.66;
    bool long_side = false;
    int piece_extent_px = 200;

    double nominal_scale(const Box& box) const {
        const double side = long_side ? std::max(box.width(), box.height()) : std::min(box.width(), box.height());
        return ratio * side / piece_extent_px;
    }
};

inline WeatherSpec sample_weather(Rng& rng, const AugmentationConfig& config) {
    WeatherSpec w;
    const auto k = rng.uniform_int(0, static_cast<std::int64_t>(config.weather_effects.size()) - 1);
    w.effect = config.weather_effects[static_cast<std::size_t>(k)];
    w.intensity = rng.uniform(config.weather_intensity_min, config.weather_intensity_max);
    w.seed = rng.next_u64();
    return w;
}

/// Draws one spec. The number of draws is independent of the configured
/// ranges, so zeroing a jitter does not shift the remaining stream.
inline AugmentationSpec sample_augmentation(Rng& rng, const AugmentationConfig& config, const Box& target_box,
                                            const ScaleRule& rule) {
    if (!target_box.valid() || target_box.area() <= 0.0) throw ValidationError("degenerate target box");
    AugmentationSpec s;
    s.scale_factor = rule.nominal_scale(target_box) * (1.0 + rng.uniform(-config.scale_jitter, config.scale_jitter));
    s.rotation_deg = rng.uniform(-config.rotation_deg, config.rotation_deg);
    s.brightness_delta = rng.uniform(-config.brightness, config.brightness);
    s.contrast_factor = rng.uniform(config.contrast_min, config.contrast_max);
    s.noise_amplitude = config.noise;
    s.noise_seed = rng.next_u64();
    s.translate_x = rng.uniform(-config.translation_jitter, config.translation_jitter);
    s.translate_y = rng.uniform(-config.translation_jitter, config.translation_jitter);
    if (!(s.scale_factor > 0.0)) throw ValidationError("non-positive scale factor");
    if (config.weather_enabled) s.weather = sample_weather(rng, config);
    return s;
}

/// Per-pixel noise value in [-amplitude, amplitude]; `stream` separates
/// patch pieces that share one spec.
inline double color_noise(const AugmentationSpec& spec, int stream, std::size_t index) {
    if (spec.noise_amplitude == 0.0) return 0.0;
    const auto bits = splitmix64(derive_seed(spec.noise_seed, static_cast<std::uint64_t>(stream)) ^
                                 (index * 0xd1b54a32d192ed03ULL));
    return spec.noise_amplitude * (2.0 * unit_from_bits(bits) - 1.0);
}

/// clamp(contrast * p + brightness + noise, 0, 1).
inline Image apply_color_transform(const Image& pixels, const AugmentationSpec& spec, int stream = 0) {
    Image out(pixels.channels(), pixels.height(), pixels.width());
    const auto& in = pixels.values();
    auto& o = out.values();
    for (std::size_t i = 0; i < in.size(); ++i)
        o[i] = std::clamp(spec.contrast_factor * in[i] + spec.brightness_delta + color_noise(spec, stream, i), 0.0, 1.0);
    return out;
}

/// Vector-Jacobian product of apply_color_transform. Clamped pixels pass no
/// gradient.
inline Image color_transform_backward(const Image& pixels, const AugmentationSpec& spec, const Image& grad_out,
                                      int stream = 0) {
    if (!grad_out.same_shape(pixels)) throw ValidationError("gradient shape mismatch");
    Image g(pixels.channels(), pixels.height(), pixels.width());
    const auto& in = pixels.values();
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double v = spec.contrast_factor * in[i] + spec.brightness_delta + color_noise(spec, stream, i);
        g.values()[i] = (v > 0.0 && v < 1.0) ? spec.contrast_factor * grad_out.values()[i] : 0.0;
    }
    return g;
}

}  // namespace aerialpatch
