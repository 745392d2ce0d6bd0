// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace aerialpatch {

/// Planar (channel, row, column) grid of doubles. Intensities live in [0, 1]
/// whenever the grid holds an image; gradients share the same container.
class Image {
public:
    Image() = default;
    Image(int channels, int height, int width, double fill = 0.0)
        : channels_(channels), height_(height), width_(width),
          data_(static_cast<std::size_t>(channels) * height * width, fill) {}

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    std::size_t index(int c, int y, int x) const {
        assert(c >= 0 && c < channels_ && y >= 0 && y < height_ && x >= 0 && x < width_);
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    std::span<double> plane(int c) { return std::span<double>(data_).subspan(c * plane_size(), plane_size()); }
    std::span<const double> plane(int c) const {
        return std::span<const double>(data_).subspan(c * plane_size(), plane_size());
    }

    bool same_shape(const Image& o) const {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    void clamp(double lo = 0.0, double hi = 1.0) {
        for (auto& v : data_) v = std::clamp(v, lo, hi);
    }

    double mean() const {
        double s = 0.0;
        for (double v : data_) s += v;
        return data_.empty() ? 0.0 : s / static_cast<double>(data_.size());
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

}  // namespace aerialpatch
