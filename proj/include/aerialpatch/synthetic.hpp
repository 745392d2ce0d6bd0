// SPDX-License-Identifier: Apache-2.0
#pragma once

// Procedural overhead scenes: textured ground with road markings and
// car-like rounded rectangles carrying windshield and rear-window cues.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "aerialpatch/core_types.hpp"
#include "aerialpatch/error.hpp"
#include "aerialpatch/image.hpp"
#include "aerialpatch/rng.hpp"

namespace aerialpatch {

struct SyntheticSceneParams {
    int width = 96;
    int height = 96;
    int min_cars = 1;
    int max_cars = 4;
    double car_length_min = 24.0;
    double car_length_max = 34.0;
    /// Car width as a fraction of its length.
    double car_aspect_min = 0.40;
    double car_aspect_max = 0.48;
    /// Minimum free space between car boxes, in pixels.
    double spacing = 3.0;
    int placement_attempts = 400;
};

struct SyntheticScene {
    Image image;
    std::vector<Box> boxes;
};

namespace detail {

/// Smooth value noise in [0, 1] on a lattice with the given cell size.
inline std::vector<double> value_noise(int w, int h, double cell, Rng& rng) {
    const int gw = static_cast<int>(std::ceil(w / cell)) + 2, gh = static_cast<int>(std::ceil(h / cell)) + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
    for (auto& v : lattice) v = rng.uniform();
    std::vector<double> out(static_cast<std::size_t>(w) * h);
    auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gx = x / cell, gy = y / cell;
            const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
            const double fx = smooth(gx - ix), fy = smooth(gy - iy);
            auto L = [&](int a, int b) { return lattice[static_cast<std::size_t>(b) * gw + a]; };
            const double top = L(ix, iy) * (1 - fx) + L(ix + 1, iy) * fx;
            const double bot = L(ix, iy + 1) * (1 - fx) + L(ix + 1, iy + 1) * fx;
            out[static_cast<std::size_t>(y) * w + x] = top * (1 - fy) + bot * fy;
        }
    return out;
}

inline void paint_ground(Image& img, Rng& rng) {
    const int w = img.width(), h = img.height();
    const auto coarse = value_noise(w, h, 24.0, rng);
    const auto fine = value_noise(w, h, 4.0, rng);
    const double asphalt = rng.uniform(0.30, 0.45);
    const std::array<double, 3> grass{rng.uniform(0.25, 0.35), rng.uniform(0.42, 0.55), rng.uniform(0.18, 0.28)};
    const double grass_level = rng.uniform(0.55, 0.9);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto i = static_cast<std::size_t>(y) * w + x;
            const double g = std::clamp((coarse[i] - grass_level) * 6.0, 0.0, 1.0);
            const double n = (fine[i] - 0.5) * 0.08 + (rng.uniform() - 0.5) * 0.03;
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = std::clamp((1 - g) * asphalt + g * grass[static_cast<std::size_t>(c)] + n, 0.0, 1.0);
        }
    // Dashed lane markings.
    const int lanes = static_cast<int>(rng.uniform_int(0, 2));
    for (int l = 0; l < lanes; ++l) {
        const bool horizontal = rng.uniform() < 0.5;
        const int pos = static_cast<int>(rng.uniform_int(4, (horizontal ? h : w) - 5));
        const int dash = static_cast<int>(rng.uniform_int(4, 8));
        for (int t = 0; t < (horizontal ? w : h); ++t) {
            if ((t / dash) % 2) continue;
            const int x = horizontal ? t : pos, y = horizontal ? pos : t;
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = 0.85;
        }
    }
}

struct CarShape {
    double cx, cy, length, width, angle;
    std::array<double, 3> body;

    /// Local coordinates: u along the heading (front at +length/2), v across.
    std::array<double, 2> local(double x, double y) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double dx = x - cx, dy = y - cy;
        return {c * dx + s * dy, -s * dx + c * dy};
    }

    bool inside(double u, double v) const {
        const double r = 0.3 * width;
        const double hu = 0.5 * length - r, hv = 0.5 * width - r;
        const double qu = std::max(std::abs(u) - hu, 0.0), qv = std::max(std::abs(v) - hv, 0.0);
        return qu * qu + qv * qv <= r * r;
    }

    std::array<double, 3> colour_at(double u, double v) const {
        const double t = (0.5 * length - u) / length;  // 0 at the front, 1 at the rear
        const bool glass_band = std::abs(v) < 0.4 * width;
        if (glass_band && t > 0.22 && t < 0.36) return {0.08, 0.10, 0.13};
        if (glass_band && t > 0.78 && t < 0.88) return {0.10, 0.12, 0.15};
        std::array<double, 3> c = body;
        if (t >= 0.36 && t <= 0.78 && std::abs(v) < 0.42 * width)
            for (auto& k : c) k = std::min(1.0, k * 1.06 + 0.02);
        return c;
    }
};

inline std::array<double, 3> pick_body_colour(Rng& rng) {
    static const std::array<std::array<double, 3>, 8> palette{{{0.92, 0.92, 0.92},
                                                               {0.74, 0.75, 0.77},
                                                               {0.52, 0.53, 0.55},
                                                               {0.12, 0.12, 0.13},
                                                               {0.70, 0.12, 0.10},
                                                               {0.16, 0.26, 0.62},
                                                               {0.86, 0.80, 0.62},
                                                               {0.20, 0.36, 0.28}}};
    auto c = palette[static_cast<std::size_t>(rng.uniform_int(0, palette.size() - 1))];
    for (auto& k : c) k = std::clamp(k + rng.uniform(-0.04, 0.04), 0.0, 1.0);
    return c;
}

/// Renders a car with 2x2 supersampling and returns its tight pixel box.
inline Box render_car(Image& img, const CarShape& car) {
    const double reach = 0.5 * std::hypot(car.length, car.width) + 2.0;
    const int x0 = std::max(0, static_cast<int>(car.cx - reach)), x1 = std::min(img.width() - 1, static_cast<int>(car.cx + reach));
    const int y0 = std::max(0, static_cast<int>(car.cy - reach)), y1 = std::min(img.height() - 1, static_cast<int>(car.cy + reach));
    // Soft shadow offset toward the bottom-right.
    for (int y = y0; y <= std::min(img.height() - 1, y1 + 2); ++y)
        for (int x = x0; x <= std::min(img.width() - 1, x1 + 2); ++x) {
            const auto l = car.local(x + 0.5 - 1.5, y + 0.5 - 1.5);
            if (car.inside(l[0], l[1]))
                for (int c = 0; c < 3; ++c) img.at(c, y, x) *= 0.6;
        }
    Box box{1e9, 1e9, -1e9, -1e9};
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            std::array<double, 3> acc{0, 0, 0};
            int hits = 0;
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx) {
                    const auto l = car.local(x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy);
                    if (!car.inside(l[0], l[1])) continue;
                    const auto col = car.colour_at(l[0], l[1]);
                    for (int c = 0; c < 3; ++c) acc[static_cast<std::size_t>(c)] += col[static_cast<std::size_t>(c)];
                    ++hits;
                }
            if (hits == 0) continue;
            const double a = hits / 4.0;
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = (1 - a) * img.at(c, y, x) + acc[static_cast<std::size_t>(c)] / 4.0;
            if (hits >= 2) {
                box.x_min = std::min(box.x_min, static_cast<double>(x));
                box.y_min = std::min(box.y_min, static_cast<double>(y));
                box.x_max = std::max(box.x_max, static_cast<double>(x + 1));
                box.y_max = std::max(box.y_max, static_cast<double>(y + 1));
            }
        }
    return box;
}

}  // namespace detail

/// Generates one scene. Deterministic for a given rng state.
inline SyntheticScene gen_synthetic_scene(const SyntheticSceneParams& p, Rng& rng) {
    if (p.width < 8 || p.height < 8) throw ValidationError("synthetic scene too small");
    if (p.min_cars < 0 || p.max_cars < p.min_cars) throw ValidationError("invalid car count range");
    if (p.car_length_min <= 0.0 || p.car_length_max < p.car_length_min)
        throw ValidationError("invalid car size range");
    const int count = static_cast<int>(rng.uniform_int(p.min_cars, p.max_cars));
    const double min_area = p.car_length_min * p.car_length_min * p.car_aspect_min;
    if (count * min_area > 0.5 * p.width * p.height)
        throw ValidationError("car count exceeds packable area");

    SyntheticScene scene;
    scene.image = Image(3, p.height, p.width);
    detail::paint_ground(scene.image, rng);

    std::vector<detail::CarShape> cars;
    std::vector<Box> reserved;
    for (int k = 0; k < count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < p.placement_attempts && !placed; ++attempt) {
            detail::CarShape car{};
            car.length = rng.uniform(p.car_length_min, p.car_length_max);
            car.width = car.length * rng.uniform(p.car_aspect_min, p.car_aspect_max);
            car.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double c = std::abs(std::cos(car.angle)), s = std::abs(std::sin(car.angle));
            const double hx = 0.5 * (car.length * c + car.width * s), hy = 0.5 * (car.length * s + car.width * c);
            if (2 * hx + 2 >= p.width || 2 * hy + 2 >= p.height) continue;
            car.cx = rng.uniform(hx + 1, p.width - hx - 1);
            car.cy = rng.uniform(hy + 1, p.height - hy - 1);
            car.body = detail::pick_body_colour(rng);
            const Box approx{car.cx - hx - p.spacing, car.cy - hy - p.spacing, car.cx + hx + p.spacing,
                             car.cy + hy + p.spacing};
            bool clash = false;
            for (const auto& r : reserved)
                if (iou(approx, r) > 0.0) clash = true;
            if (clash) continue;
            reserved.push_back(approx);
            cars.push_back(car);
            placed = true;
        }
        if (!placed) throw ValidationError("car count exceeds packable area");
    }
    for (const auto& car : cars) {
        const Box b = detail::render_car(scene.image, car);
        if (b.valid()) scene.boxes.push_back(b);
    }
    return scene;
}

}  // namespace aerialpatch
