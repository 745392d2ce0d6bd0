// SPDX-License-Identifier: Apache-2.0
#pragma once

// Whole-frame weather and season effects. Every effect is a per-pixel affine
// map of the input whose coefficients come from masks pre-sampled from the
// spec seed, so the output is differentiable w.r.t. the input with the masks
// held fixed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "aerialpatch/error.hpp"
#include "aerialpatch/image.hpp"
#include "aerialpatch/rng.hpp"

namespace aerialpatch {

enum class WeatherEffect { SunBrightness, Snow, Rain, Fog, AutumnLeaves };

inline constexpr std::array<WeatherEffect, 5> kAllWeatherEffects = {
    WeatherEffect::SunBrightness, WeatherEffect::Snow, WeatherEffect::Rain, WeatherEffect::Fog,
    WeatherEffect::AutumnLeaves};

inline std::string_view to_string(WeatherEffect e) {
    switch (e) {
        case WeatherEffect::SunBrightness: return "sun_brightness";
        case WeatherEffect::Snow: return "snow";
        case WeatherEffect::Rain: return "rain";
        case WeatherEffect::Fog: return "fog";
        case WeatherEffect::AutumnLeaves: return "autumn_leaves";
    }
    return "?";
}

inline WeatherEffect parse_weather_effect(std::string_view s) {
    for (auto e : kAllWeatherEffects)
        if (to_string(e) == s) return e;
    throw ValidationError("unknown weather effect '" + std::string(s) + "'");
}

struct WeatherSpec {
    WeatherEffect effect = WeatherEffect::Fog;
    double intensity = 0.0;
    std::uint64_t seed = 0;

    friend bool operator==(const WeatherSpec&, const WeatherSpec&) = default;
};

/// Effect constants. Intensity scales each effect linearly from identity
/// (intensity 0) to the strength given here (intensity 1).
struct WeatherParams {
    double sun_gain = 0.6;

    double fog_density = 0.85;
    double fog_grey = 0.78;

    double rain_streaks_per_10k_px = 30.0;
    double rain_length = 9.0;
    double rain_slant_deg = 15.0;
    double rain_opacity = 0.6;
    double rain_darken = 0.25;
    std::array<double, 3> rain_color{0.78, 0.80, 0.86};

    double snow_flakes_per_10k_px = 60.0;
    double snow_radius = 1.2;
    double snow_opacity = 0.9;
    double snow_brighten = 0.25;

    double autumn_margin = 0.04;
    double leaf_flakes_per_10k_px = 25.0;
    double leaf_radius = 1.0;
    double leaf_opacity = 0.85;
    std::array<double, 3> leaf_color{0.80, 0.42, 0.10};
};

namespace detail {

inline void check_weather(const Image& image, const WeatherSpec& spec) {
    if (image.channels() != 3) throw ValidationError("weather effects need a 3-channel image");
    if (!(spec.intensity >= 0.0 && spec.intensity <= 1.0))
        throw ValidationError("weather intensity outside [0,1]");
}

inline int overlay_count(const Image& image, double per_10k, double intensity) {
    return static_cast<int>(std::lround(intensity * per_10k * static_cast<double>(image.plane_size()) / 10000.0));
}

/// Binary disk mask (snow flakes, leaves).
inline std::vector<double> disk_mask(int h, int w, int count, double radius, std::uint64_t seed) {
    std::vector<double> mask(static_cast<std::size_t>(h) * w, 0.0);
    Rng rng(seed);
    for (int k = 0; k < count; ++k) {
        const double cx = rng.uniform(0.0, w);
        const double cy = rng.uniform(0.0, h);
        const double r = radius * rng.uniform(0.6, 1.4);
        const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + r)));
        const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + r)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                if (dx * dx + dy * dy <= r * r) mask[static_cast<std::size_t>(y) * w + x] = 1.0;
            }
    }
    return mask;
}

/// Binary mask of slanted rain streaks.
inline std::vector<double> streak_mask(int h, int w, int count, double length, double slant_deg,
                                       std::uint64_t seed) {
    std::vector<double> mask(static_cast<std::size_t>(h) * w, 0.0);
    Rng rng(seed);
    const double a = slant_deg * std::numbers::pi / 180.0;
    const double dx = std::sin(a), dy = std::cos(a);
    for (int k = 0; k < count; ++k) {
        const double x = rng.uniform(0.0, w);
        const double y = rng.uniform(0.0, h);
        const double len = length * rng.uniform(0.5, 1.0);
        const int steps = static_cast<int>(std::ceil(len));
        for (int s = 0; s <= steps; ++s) {
            const int px = static_cast<int>(std::floor(x + dx * s));
            const int py = static_cast<int>(std::floor(y + dy * s));
            if (px >= 0 && px < w && py >= 0 && py < h) mask[static_cast<std::size_t>(py) * w + px] = 1.0;
        }
    }
    return mask;
}

inline std::vector<double> vegetation_mask(const Image& in, double margin) {
    const std::size_t n = in.plane_size();
    std::vector<double> v(n, 0.0);
    auto r = in.plane(0), g = in.plane(1), b = in.plane(2);
    for (std::size_t i = 0; i < n; ++i)
        if (g[i] > r[i] + margin && g[i] > b[i] + margin) v[i] = 1.0;
    return v;
}

// Autumn tint: rows are non-negative and sum to at most 1, so the result stays in [0,1].
inline constexpr std::array<std::array<double, 3>, 3> kAutumnTint{{
    {0.35, 0.65, 0.00},
    {0.20, 0.50, 0.00},
    {0.00, 0.00, 0.60},
}};

/// Shared evaluation for forward (grad_out == nullptr) and backward passes.
inline Image weather_pass(const Image& in, const WeatherSpec& spec, const WeatherParams& p,
                          const Image* grad_out) {
    check_weather(in, spec);
    const bool backward = grad_out != nullptr;
    if (spec.intensity == 0.0) return backward ? *grad_out : in;

    const double I = spec.intensity;
    const int h = in.height(), w = in.width();
    const std::size_t n = in.plane_size();
    Image out(3, h, w);

    switch (spec.effect) {
        case WeatherEffect::SunBrightness: {
            const double gain = 1.0 + I * p.sun_gain;
            for (std::size_t i = 0; i < in.size(); ++i) {
                const double v = gain * in.values()[i];
                out.values()[i] = backward ? (v < 1.0 ? gain * grad_out->values()[i] : 0.0) : std::min(1.0, v);
            }
            break;
        }
        case WeatherEffect::Fog: {
            const double a = I * p.fog_density;
            for (std::size_t i = 0; i < in.size(); ++i)
                out.values()[i] = backward ? (1.0 - a) * grad_out->values()[i]
                                           : (1.0 - a) * in.values()[i] + a * p.fog_grey;
            break;
        }
        case WeatherEffect::Rain: {
            const auto m = streak_mask(h, w, overlay_count(in, p.rain_streaks_per_10k_px, I), p.rain_length,
                                       p.rain_slant_deg, spec.seed);
            const double alpha = I * p.rain_opacity;
            const double dark = 1.0 - I * p.rain_darken;
            for (int c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t k = c * n + i;
                    const double keep = (1.0 - alpha * m[i]) * dark;
                    out.values()[k] = backward ? keep * grad_out->values()[k]
                                               : keep * in.values()[k] + alpha * m[i] * p.rain_color[c];
                }
            break;
        }
        case WeatherEffect::Snow: {
            const auto m = disk_mask(h, w, overlay_count(in, p.snow_flakes_per_10k_px, I), p.snow_radius, spec.seed);
            const double beta = I * p.snow_brighten;
            const double alpha = I * p.snow_opacity;
            for (int c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t k = c * n + i;
                    const double keep = (1.0 - beta) * (1.0 - alpha * m[i]);
                    out.values()[k] = backward ? keep * grad_out->values()[k] : 1.0 - (1.0 - in.values()[k]) * keep;
                }
            break;
        }
        case WeatherEffect::AutumnLeaves: {
            const auto veg = vegetation_mask(in, p.autumn_margin);
            const auto m = disk_mask(h, w, overlay_count(in, p.leaf_flakes_per_10k_px, I), p.leaf_radius, spec.seed);
            const double alpha = I * p.leaf_opacity;
            for (std::size_t i = 0; i < n; ++i) {
                const double t = I * veg[i];
                const double keep = 1.0 - alpha * m[i];
                if (!backward) {
                    for (int c = 0; c < 3; ++c) {
                        double tinted = 0.0;
                        for (int j = 0; j < 3; ++j) tinted += kAutumnTint[c][j] * in.values()[j * n + i];
                        const double shifted = in.values()[c * n + i] + t * (tinted - in.values()[c * n + i]);
                        out.values()[c * n + i] = keep * shifted + alpha * m[i] * p.leaf_color[c];
                    }
                } else {
                    // out_c = keep * ((1-t) in_c + t * sum_j T[c][j] in_j)
                    for (int j = 0; j < 3; ++j) {
                        double g = 0.0;
                        for (int c = 0; c < 3; ++c) {
                            const double d = (c == j ? 1.0 - t : 0.0) + t * kAutumnTint[c][j];
                            g += keep * d * grad_out->values()[c * n + i];
                        }
                        out.values()[j * n + i] = g;
                    }
                }
            }
            break;
        }
    }
    return out;
}

}  // namespace detail

/// Applies one weather effect to a whole frame. Deterministic in (spec, params).
inline Image apply_weather(const Image& image, const WeatherSpec& spec, const WeatherParams& params = {}) {
    return detail::weather_pass(image, spec, params, nullptr);
}

/// Vector-Jacobian product of apply_weather at `image`.
inline Image weather_backward(const Image& image, const WeatherSpec& spec, const Image& grad_out,
                              const WeatherParams& params = {}) {
    if (!grad_out.same_shape(image)) throw ValidationError("gradient shape mismatch");
    return detail::weather_pass(image, spec, params, &grad_out);
}

/// Largest distance from the fog grey level after fog at `intensity`.
inline double fog_distance_bound(double intensity, const WeatherParams& p = {}) {
    const double a = intensity * p.fog_density;
    return (1.0 - a) * std::max(p.fog_grey, 1.0 - p.fog_grey);
}

}  // namespace aerialpatch
