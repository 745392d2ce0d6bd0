// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal raster line plots: axes, ticks, legend and a 5x7 bitmap font.
// Every saved figure gets a sibling CSV with the plotted data, and its title
// and annotation are stored as PNG text chunks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aerialpatch/core_types.hpp"
#include "aerialpatch/image.hpp"
#include "aerialpatch/io/image_io.hpp"
#include "aerialpatch/io/serialize.hpp"

namespace aerialpatch {

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    Rgb color{0.1, 0.3, 0.8};
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<PlotSeries> series;
    std::optional<double> y_min;
    std::optional<double> y_max;
    /// Extra text drawn under the title, e.g. "OSR=0.251".
    std::string annotation;
};

namespace detail {

struct Glyph {
    char c;
    std::array<std::uint8_t, 7> rows;
};

// clang-format off
inline constexpr Glyph kFont[] = {
    {'0', {0x0E,0x11,0x13,0x15,0x19,0x11,0x0E}}, {'1', {0x04,0x0C,0x04,0x04,0x04,0x04,0x0E}},
    {'2', {0x0E,0x11,0x01,0x02,0x04,0x08,0x1F}}, {'3', {0x1F,0x02,0x04,0x02,0x01,0x11,0x0E}},
    {'4', {0x02,0x06,0x0A,0x12,0x1F,0x02,0x02}}, {'5', {0x1F,0x10,0x1E,0x01,0x01,0x11,0x0E}},
    {'6', {0x06,0x08,0x10,0x1E,0x11,0x11,0x0E}}, {'7', {0x1F,0x01,0x02,0x04,0x08,0x08,0x08}},
    {'8', {0x0E,0x11,0x11,0x0E,0x11,0x11,0x0E}}, {'9', {0x0E,0x11,0x11,0x0F,0x01,0x02,0x0C}},
    {'A', {0x0E,0x11,0x11,0x11,0x1F,0x11,0x11}}, {'B', {0x1E,0x11,0x11,0x1E,0x11,0x11,0x1E}},
    {'C', {0x0E,0x11,0x10,0x10,0x10,0x11,0x0E}}, {'D', {0x1C,0x12,0x11,0x11,0x11,0x12,0x1C}},
    {'E', {0x1F,0x10,0x10,0x1E,0x10,0x10,0x1F}}, {'F', {0x1F,0x10,0x10,0x1E,0x10,0x10,0x10}},
    {'G', {0x0E,0x11,0x10,0x17,0x11,0x11,0x0F}}, {'H', {0x11,0x11,0x11,0x1F,0x11,0x11,0x11}},
    {'I', {0x0E,0x04,0x04,0x04,0x04,0x04,0x0E}}, {'J', {0x07,0x02,0x02,0x02,0x02,0x12,0x0C}},
    {'K', {0x11,0x12,0x14,0x18,0x14,0x12,0x11}}, {'L', {0x10,0x10,0x10,0x10,0x10,0x10,0x1F}},
    {'M', {0x11,0x1B,0x15,0x15,0x11,0x11,0x11}}, {'N', {0x11,0x11,0x19,0x15,0x13,0x11,0x11}},
    {'O', {0x0E,0x11,0x11,0x11,0x11,0x11,0x0E}}, {'P', {0x1E,0x11,0x11,0x1E,0x10,0x10,0x10}},
    {'Q', {0x0E,0x11,0x11,0x11,0x15,0x12,0x0D}}, {'R', {0x1E,0x11,0x11,0x1E,0x14,0x12,0x11}},
    {'S', {0x0F,0x10,0x10,0x0E,0x01,0x01,0x1E}}, {'T', {0x1F,0x04,0x04,0x04,0x04,0x04,0x04}},
    {'U', {0x11,0x11,0x11,0x11,0x11,0x11,0x0E}}, {'V', {0x11,0x11,0x11,0x11,0x11,0x0A,0x04}},
    {'W', {0x11,0x11,0x11,0x15,0x15,0x15,0x0A}}, {'X', {0x11,0x11,0x0A,0x04,0x0A,0x11,0x11}},
    {'Y', {0x11,0x11,0x11,0x0A,0x04,0x04,0x04}}, {'Z', {0x1F,0x01,0x02,0x04,0x08,0x10,0x1F}},
    {'.', {0x00,0x00,0x00,0x00,0x00,0x0C,0x0C}}, {',', {0x00,0x00,0x00,0x00,0x0C,0x04,0x08}},
    {'-', {0x00,0x00,0x00,0x1F,0x00,0x00,0x00}}, {'+', {0x00,0x04,0x04,0x1F,0x04,0x04,0x00}},
    {'=', {0x00,0x00,0x1F,0x00,0x1F,0x00,0x00}}, {':', {0x00,0x0C,0x0C,0x00,0x0C,0x0C,0x00}},
    {'(', {0x02,0x04,0x08,0x08,0x08,0x04,0x02}}, {')', {0x08,0x04,0x02,0x02,0x02,0x04,0x08}},
    {'/', {0x00,0x01,0x02,0x04,0x08,0x10,0x00}}, {'_', {0x00,0x00,0x00,0x00,0x00,0x00,0x1F}},
    {'%', {0x18,0x19,0x02,0x04,0x08,0x13,0x03}}, {'<', {0x02,0x04,0x08,0x10,0x08,0x04,0x02}},
    {'>', {0x08,0x04,0x02,0x01,0x02,0x04,0x08}}, {' ', {0x00,0x00,0x00,0x00,0x00,0x00,0x00}},
};
// clang-format on

inline const Glyph* find_glyph(char c) {
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (const auto& g : kFont)
        if (g.c == c) return &g;
    return nullptr;
}

class Canvas {
public:
    Canvas(int w, int h) : img_(3, h, w, 1.0) {}

    void pixel(int x, int y, const Rgb& c) {
        if (x < 0 || y < 0 || x >= img_.width() || y >= img_.height()) return;
        for (int k = 0; k < 3; ++k) img_.at(k, y, x) = c[static_cast<std::size_t>(k)];
    }

    void line(double x0, double y0, double x1, double y1, const Rgb& c, int thickness = 1) {
        const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
        for (int i = 0; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
            const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
            for (int dy = 0; dy < thickness; ++dy)
                for (int dx = 0; dx < thickness; ++dx) pixel(x + dx, y + dy, c);
        }
    }

    void rect(int x0, int y0, int x1, int y1, const Rgb& c) {
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) pixel(x, y, c);
    }

    static int text_width(const std::string& s, int scale) { return static_cast<int>(s.size()) * 6 * scale; }

    void text(int x, int y, const std::string& s, const Rgb& c, int scale = 1) {
        for (char ch : s) {
            if (const auto* g = find_glyph(ch))
                for (int r = 0; r < 7; ++r)
                    for (int b = 0; b < 5; ++b)
                        if (g->rows[static_cast<std::size_t>(r)] & (0x10 >> b))
                            rect(x + b * scale, y + r * scale, x + (b + 1) * scale - 1, y + (r + 1) * scale - 1, c);
            x += 6 * scale;
        }
    }

    /// Text rotated 90 degrees counter-clockwise, reading bottom to top.
    void text_vertical(int x, int y, const std::string& s, const Rgb& c, int scale = 1) {
        for (char ch : s) {
            if (const auto* g = find_glyph(ch))
                for (int r = 0; r < 7; ++r)
                    for (int b = 0; b < 5; ++b)
                        if (g->rows[static_cast<std::size_t>(r)] & (0x10 >> b))
                            rect(x + r * scale, y - (b + 1) * scale + 1, x + (r + 1) * scale - 1, y - b * scale, c);
            y -= 6 * scale;
        }
    }

    Image& image() { return img_; }

private:
    Image img_;
};

inline std::string format_tick(double v) {
    char buf[32];
    if (v != 0.0 && (std::abs(v) >= 1e5 || std::abs(v) < 1e-3)) std::snprintf(buf, sizeof buf, "%.1e", v);
    else std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

/// Round step of roughly range / target ticks (1, 2 or 5 times a power of ten).
inline double nice_step(double range, int target) {
    const double raw = range / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double f = raw / mag;
    return (f < 1.5 ? 1.0 : f < 3.5 ? 2.0 : f < 7.5 ? 5.0 : 10.0) * mag;
}

}  // namespace detail

inline Image render_plot(const LinePlot& plot, int width = 640, int height = 420) {
    detail::Canvas cv(width, height);
    const Rgb black{0, 0, 0}, grid{0.88, 0.88, 0.88};
    const int left = 70, right = width - 20, top = plot.annotation.empty() ? 40 : 56, bottom = height - 50;

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : plot.series)
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (plot.y_min) ymin = *plot.y_min;
    if (plot.y_max) ymax = *plot.y_max;
    if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
    if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;

    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
    auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

    const double xs = detail::nice_step(xmax - xmin, 6), ys = detail::nice_step(ymax - ymin, 5);
    for (double t = std::ceil(xmin / xs - 1e-9) * xs; t <= xmax + 1e-9 * xs; t += xs) {
        cv.line(px(t), top, px(t), bottom, grid);
        const auto label = detail::format_tick(std::abs(t) < 1e-12 * xs ? 0.0 : t);
        cv.text(static_cast<int>(px(t)) - detail::Canvas::text_width(label, 1) / 2, bottom + 6, label, black);
    }
    for (double t = std::ceil(ymin / ys - 1e-9) * ys; t <= ymax + 1e-9 * ys; t += ys) {
        cv.line(left, py(t), right, py(t), grid);
        const auto label = detail::format_tick(std::abs(t) < 1e-12 * ys ? 0.0 : t);
        cv.text(left - 6 - detail::Canvas::text_width(label, 1), static_cast<int>(py(t)) - 3, label, black);
    }
    cv.line(left, bottom, right, bottom, black);
    cv.line(left, top, left, bottom, black);

    for (const auto& s : plot.series) {
        std::optional<std::pair<double, double>> prev;
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                prev.reset();
                continue;
            }
            const double x = px(s.x[i]), y = py(std::clamp(s.y[i], ymin, ymax));
            if (prev) cv.line(prev->first, prev->second, x, y, s.color, 2);
            else cv.rect(static_cast<int>(x) - 1, static_cast<int>(y) - 1, static_cast<int>(x) + 1, static_cast<int>(y) + 1, s.color);
            prev = {x, y};
        }
    }

    cv.text((width - detail::Canvas::text_width(plot.title, 2)) / 2, 10, plot.title, black, 2);
    if (!plot.annotation.empty())
        cv.text((width - detail::Canvas::text_width(plot.annotation, 1)) / 2, 34, plot.annotation, black);
    cv.text((left + right - detail::Canvas::text_width(plot.x_label, 1)) / 2, height - 20, plot.x_label, black);
    cv.text_vertical(12, (top + bottom + detail::Canvas::text_width(plot.y_label, 1)) / 2, plot.y_label, black);

    int ly = top + 6;
    for (const auto& s : plot.series) {
        if (s.name.empty()) continue;
        const int lx = right - detail::Canvas::text_width(s.name, 1) - 24;
        cv.rect(lx, ly + 2, lx + 12, ly + 4, s.color);
        cv.text(lx + 16, ly, s.name, black);
        ly += 12;
    }
    return std::move(cv.image());
}

/// Underlying data as CSV: series,x,y.
inline std::string plot_csv(const LinePlot& plot) {
    std::ostringstream os;
    os.precision(17);
    os << "series,x,y\n";
    for (const auto& s : plot.series)
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            os << s.name << ',' << s.x[i] << ',';
            if (std::isfinite(s.y[i])) os << s.y[i];
            os << '\n';
        }
    return os.str();
}

/// Writes `path` (PNG) and the same path with a .csv extension.
inline void save_plot(const std::string& path, const LinePlot& plot) {
    PngMetadata meta;
    meta.text["Title"] = plot.title;
    if (!plot.annotation.empty()) meta.text["Annotation"] = plot.annotation;
    write_png(path, render_plot(plot), meta);
    write_file_atomic(std::filesystem::path(path).replace_extension(".csv").string(), plot_csv(plot));
}

}  // namespace aerialpatch
