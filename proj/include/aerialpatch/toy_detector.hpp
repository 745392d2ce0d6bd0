// SPDX-License-Identifier: Apache-2.0
#pragma once

// A small fully-convolutional single-scale car detector with hand-written
// back-propagation. It stands in for a full three-scale YOLO-style network
// at desk scale and implements the same Detector contract.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aerialpatch/adam.hpp"
#include "aerialpatch/core_types.hpp"
#include "aerialpatch/detector.hpp"
#include "aerialpatch/error.hpp"
#include "aerialpatch/image.hpp"
#include "aerialpatch/rng.hpp"

namespace aerialpatch {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Conv2d {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    RowMatrix weight;  // out x (in * k * k)
    Eigen::VectorXd bias;

    Conv2d() = default;
    Conv2d(int in, int out, int k, int s, int p)
        : in_channels(in), out_channels(out), kernel(k), stride(s), pad(p),
          weight(RowMatrix::Zero(out, in * k * k)), bias(Eigen::VectorXd::Zero(out)) {}

    int out_extent(int n) const { return (n + 2 * pad - kernel) / stride + 1; }

    RowMatrix im2col(const Image& in) const {
        const int oh = out_extent(in.height()), ow = out_extent(in.width());
        RowMatrix cols(in_channels * kernel * kernel, oh * ow);
        for (int c = 0; c < in_channels; ++c)
            for (int ky = 0; ky < kernel; ++ky)
                for (int kx = 0; kx < kernel; ++kx) {
                    double* row = cols.row((c * kernel + ky) * kernel + kx).data();
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            row[oy * ow + ox] = (iy >= 0 && iy < in.height() && ix >= 0 && ix < in.width())
                                                    ? in.at(c, iy, ix)
                                                    : 0.0;
                        }
                    }
                }
        return cols;
    }

    void col2im(const RowMatrix& dcols, Image& grad_in) const {
        const int oh = out_extent(grad_in.height()), ow = out_extent(grad_in.width());
        for (int c = 0; c < in_channels; ++c)
            for (int ky = 0; ky < kernel; ++ky)
                for (int kx = 0; kx < kernel; ++kx) {
                    const double* row = dcols.row((c * kernel + ky) * kernel + kx).data();
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= grad_in.height()) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < grad_in.width()) grad_in.at(c, iy, ix) += row[oy * ow + ox];
                        }
                    }
                }
    }

    Image forward(const Image& in, RowMatrix& cols) const {
        if (in.channels() != in_channels) throw ValidationError("conv input channel mismatch");
        cols = im2col(in);
        const int oh = out_extent(in.height()), ow = out_extent(in.width());
        Image out(out_channels, oh, ow);
        Eigen::Map<RowMatrix> o(out.values().data(), out_channels, oh * ow);
        o.noalias() = weight * cols;
        o.colwise() += bias;
        return out;
    }
};

struct ConvParamGrad {
    RowMatrix weight;
    Eigen::VectorXd bias;
};

/// Architecture and decode constants.
struct ToyDetectorConfig {
    int input_size = 96;
    double anchor = 24.0;
    double leaky_slope = 0.1;
};

class ToyDetector final : public Detector {
public:
    struct Tape final : ForwardTape {
        std::vector<RowMatrix> cols;
        std::vector<Image> outputs;  // post-activation output of each layer
        int input_height = 0;
        int input_width = 0;
    };

    ToyDetector() : ToyDetector(ToyDetectorConfig{}) {}
    explicit ToyDetector(ToyDetectorConfig config) : config_(config) {
        layers_ = {Conv2d(3, 16, 3, 2, 1), Conv2d(16, 32, 3, 2, 1), Conv2d(32, 32, 3, 2, 1), Conv2d(32, 32, 3, 1, 1),
                   Conv2d(32, 5, 1, 1, 0)};
    }

    /// He-style initialisation; the objectness bias starts strongly negative.
    void initialize(std::uint64_t seed) {
        Rng rng(seed);
        for (auto& l : layers_) {
            const double fan_in = l.in_channels * l.kernel * l.kernel;
            const double bound = std::sqrt(6.0 / fan_in);
            for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = rng.uniform(-bound, bound);
            l.bias.setZero();
        }
        auto& head = layers_.back();
        head.weight *= 0.1;
        head.bias(4) = -4.0;
    }

    const ToyDetectorConfig& config() const { return config_; }
    int input_size() const override { return config_.input_size; }
    double stride() const {
        int s = 1;
        for (const auto& l : layers_) s *= l.stride;
        return static_cast<double>(s);
    }
    int grid_size() const {
        int n = config_.input_size;
        for (const auto& l : layers_) n = l.out_extent(n);
        return n;
    }

    std::vector<Conv2d>& layers() { return layers_; }
    const std::vector<Conv2d>& layers() const { return layers_; }

    /// Raw head output: channels tx, ty, tw, th, objectness logit.
    Image raw_forward(const Image& input, Tape& tape) const {
        check_input(input);
        tape.cols.assign(layers_.size(), RowMatrix());
        tape.outputs.clear();
        tape.input_height = input.height();
        tape.input_width = input.width();
        const Image* x = &input;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            Image y = layers_[i].forward(*x, tape.cols[i]);
            if (i + 1 < layers_.size())
                for (auto& v : y.values())
                    if (v < 0.0) v *= config_.leaky_slope;
            tape.outputs.push_back(std::move(y));
            x = &tape.outputs.back();
        }
        return tape.outputs.back();
    }

    DetectorOutput decode_raw(const Image& raw) const {
        const Anchor a{config_.anchor, config_.anchor};
        DetectorOutput out;
        out.scales.push_back(decode_yolo_scale(raw, std::span<const Anchor>(&a, 1), stride()));
        return out;
    }

    DetectorOutput forward(const Image& input) const override {
        Tape tape;
        return decode_raw(raw_forward(input, tape));
    }

    DetectorOutput forward(const Image& input, std::unique_ptr<ForwardTape>& tape) const override {
        auto t = std::make_unique<Tape>();
        auto out = decode_raw(raw_forward(input, *t));
        tape = std::move(t);
        return out;
    }

    /// Back-propagates a gradient on the raw head output. Parameter gradients
    /// are accumulated when `param_grads` is non-null; the input gradient is
    /// returned when `want_input` is set.
    Image backward(const Tape& tape, const Image& grad_raw, std::vector<ConvParamGrad>* param_grads,
                   bool want_input) const {
        if (param_grads && param_grads->size() != layers_.size()) {
            param_grads->clear();
            for (const auto& l : layers_)
                param_grads->push_back({RowMatrix::Zero(l.weight.rows(), l.weight.cols()),
                                        Eigen::VectorXd::Zero(l.bias.size())});
        }
        Image g = grad_raw;
        for (std::size_t li = layers_.size(); li-- > 0;) {
            const auto& l = layers_[li];
            if (li + 1 < layers_.size()) {
                const auto& y = tape.outputs[li].values();
                for (std::size_t k = 0; k < y.size(); ++k)
                    if (y[k] < 0.0) g.values()[k] *= config_.leaky_slope;
            }
            Eigen::Map<const RowMatrix> go(g.values().data(), l.out_channels, g.height() * g.width());
            if (param_grads) {
                (*param_grads)[li].weight.noalias() += go * tape.cols[li].transpose();
                (*param_grads)[li].bias += go.rowwise().sum();
            }
            if (li == 0 && !want_input) return {};
            const int ih = li == 0 ? tape.input_height : tape.outputs[li - 1].height();
            const int iw = li == 0 ? tape.input_width : tape.outputs[li - 1].width();
            RowMatrix dcols = l.weight.transpose() * go;
            Image gi(l.in_channels, ih, iw, 0.0);
            l.col2im(dcols, gi);
            g = std::move(gi);
        }
        return g;
    }

    Image input_gradient(const ForwardTape& tape, const ObjectnessGradient& grad) const override {
        const auto& t = dynamic_cast<const Tape&>(tape);
        const Image& raw = t.outputs.back();
        if (grad.size() != 1 || grad[0].size() != raw.plane_size())
            throw ValidationError("objectness gradient does not match detector output");
        Image graw(raw.channels(), raw.height(), raw.width(), 0.0);
        for (int r = 0; r < raw.height(); ++r)
            for (int c = 0; c < raw.width(); ++c) {
                const double s = sigmoid(raw.at(4, r, c));
                graw.at(4, r, c) = grad[0][static_cast<std::size_t>(r) * raw.width() + c] * s * (1.0 - s);
            }
        return backward(t, graw, nullptr, true);
    }

    std::vector<std::span<double>> parameters() {
        std::vector<std::span<double>> p;
        for (auto& l : layers_) {
            p.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
            p.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
        }
        return p;
    }

    std::string checksum() const override {
        std::vector<std::uint8_t> bytes;
        auto put = [&](const double* d, Eigen::Index n) {
            const auto* b = reinterpret_cast<const std::uint8_t*>(d);
            bytes.insert(bytes.end(), b, b + n * static_cast<Eigen::Index>(sizeof(double)));
        };
        for (const auto& l : layers_) {
            put(l.weight.data(), l.weight.size());
            put(l.bias.data(), l.bias.size());
        }
        return fnv1a_hex(bytes);
    }

    // Binary container: "APTD", u32 version, i32 input size, f64 anchor,
    // f64 leaky slope, u32 layer count, per layer i32 x5 geometry then
    // weights and biases as little-endian f64.
    void save(const std::string& path) const {
        const std::string tmp = path + ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary);
            if (!os) throw Error("cannot write detector checkpoint " + path);
            os.write("APTD", 4);
            write_pod(os, std::uint32_t{1});
            write_pod(os, std::int32_t{config_.input_size});
            write_pod(os, config_.anchor);
            write_pod(os, config_.leaky_slope);
            write_pod(os, static_cast<std::uint32_t>(layers_.size()));
            for (const auto& l : layers_) {
                for (int v : {l.in_channels, l.out_channels, l.kernel, l.stride, l.pad}) write_pod(os, std::int32_t{v});
                os.write(reinterpret_cast<const char*>(l.weight.data()), l.weight.size() * sizeof(double));
                os.write(reinterpret_cast<const char*>(l.bias.data()), l.bias.size() * sizeof(double));
            }
            if (!os) throw Error("failed writing detector checkpoint " + path);
        }
        std::rename(tmp.c_str(), path.c_str());
    }

    static ToyDetector load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw ValidationError("missing detector checkpoint: " + path);
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, "APTD", 4) != 0) throw ValidationError("not a detector checkpoint: " + path);
        if (read_pod<std::uint32_t>(is) != 1) throw ValidationError("unsupported detector checkpoint version");
        ToyDetectorConfig cfg;
        cfg.input_size = read_pod<std::int32_t>(is);
        cfg.anchor = read_pod<double>(is);
        cfg.leaky_slope = read_pod<double>(is);
        ToyDetector det(cfg);
        const auto n = read_pod<std::uint32_t>(is);
        det.layers_.clear();
        for (std::uint32_t i = 0; i < n; ++i) {
            int g[5];
            for (int& v : g) v = read_pod<std::int32_t>(is);
            Conv2d l(g[0], g[1], g[2], g[3], g[4]);
            is.read(reinterpret_cast<char*>(l.weight.data()), l.weight.size() * sizeof(double));
            is.read(reinterpret_cast<char*>(l.bias.data()), l.bias.size() * sizeof(double));
            det.layers_.push_back(std::move(l));
        }
        if (!is) throw ValidationError("truncated detector checkpoint: " + path);
        return det;
    }

private:
    template <class T>
    static void write_pod(std::ostream& os, T v) {
        os.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    template <class T>
    static T read_pod(std::istream& is) {
        T v{};
        is.read(reinterpret_cast<char*>(&v), sizeof(T));
        return v;
    }

    ToyDetectorConfig config_;
    std::vector<Conv2d> layers_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct LabeledImage {
    Image pixels;
    std::vector<Box> boxes;
};

struct DetectorTrainConfig {
    int epochs = 30;
    int batch_size = 8;
    double learning_rate = 2e-3;
    std::uint64_t seed = 7;
    double coord_weight = 5.0;
    double noobj_weight = 1.0;
    /// BCE target for cells that own a car; below 1 keeps scores off saturation.
    double objectness_target = 0.9;
    /// Negatives whose decoded box overlaps a car at least this much are not penalised.
    double ignore_iou = 0.5;
    /// Probability of pasting a random noise rectangle onto each car
    /// (roof clutter), which keeps the detector from keying on an unbroken roof.
    double occluder_probability = 0.0;
    /// Occluder side as a fraction of the car's short side, drawn from [min, max].
    double occluder_min = 0.3;
    double occluder_max = 0.7;
};

struct DetectorEpochStats {
    int epoch = 0;
    double loss = 0.0;
};

namespace detail {

inline void paste_occluders(Image& img, const std::vector<Box>& boxes, const DetectorTrainConfig& cfg, Rng& rng) {
    for (const auto& b : boxes) {
        if (rng.uniform() >= cfg.occluder_probability) continue;
        const double side = std::min(b.width(), b.height());
        const double w = side * rng.uniform(cfg.occluder_min, cfg.occluder_max);
        const double h = side * rng.uniform(cfg.occluder_min, cfg.occluder_max);
        const double cx = b.centre_x() + rng.uniform(-0.15, 0.15) * b.width();
        const double cy = b.centre_y() + rng.uniform(-0.15, 0.15) * b.height();
        const bool noisy = rng.uniform() < 0.5;
        const double base[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
        const int x0 = std::max(0, static_cast<int>(cx - 0.5 * w)), x1 = std::min(img.width(), static_cast<int>(cx + 0.5 * w));
        const int y0 = std::max(0, static_cast<int>(cy - 0.5 * h)), y1 = std::min(img.height(), static_cast<int>(cy + 0.5 * h));
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x)
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = noisy ? rng.uniform() : base[c];
    }
}

}  // namespace detail

/// Per-image YOLO-style loss and its gradient on the raw head output.
inline double detector_loss(const ToyDetector& det, const Image& raw, const std::vector<Box>& boxes,
                            const DetectorTrainConfig& cfg, Image& grad_raw) {
    const double stride = det.stride();
    const double anchor = det.config().anchor;
    const int G = raw.height();
    grad_raw = Image(raw.channels(), raw.height(), raw.width(), 0.0);
    std::vector<int> owner(static_cast<std::size_t>(G) * G, -1);
    for (std::size_t b = 0; b < boxes.size(); ++b) {
        const int c = std::clamp(static_cast<int>(boxes[b].centre_x() / stride), 0, G - 1);
        const int r = std::clamp(static_cast<int>(boxes[b].centre_y() / stride), 0, G - 1);
        auto& o = owner[static_cast<std::size_t>(r) * G + c];
        if (o < 0 || boxes[b].area() > boxes[static_cast<std::size_t>(o)].area()) o = static_cast<int>(b);
    }
    const auto decoded = det.decode_raw(raw).scales[0];
    double loss = 0.0;
    for (int r = 0; r < G; ++r)
        for (int c = 0; c < G; ++c) {
            const auto cell = static_cast<std::size_t>(r) * G + c;
            const double logit = raw.at(4, r, c);
            const double s = sigmoid(logit);
            if (owner[cell] >= 0) {
                const Box& b = boxes[static_cast<std::size_t>(owner[cell])];
                const double t = cfg.objectness_target;
                loss += -t * std::log(std::max(s, 1e-12)) - (1.0 - t) * std::log(std::max(1.0 - s, 1e-12));
                grad_raw.at(4, r, c) = s - t;
                const double targets[4] = {b.centre_x() / stride - c, b.centre_y() / stride - r,
                                           std::log(b.width() / anchor), std::log(b.height() / anchor)};
                for (int k = 0; k < 2; ++k) {
                    const double p = sigmoid(raw.at(k, r, c));
                    loss += cfg.coord_weight * (p - targets[k]) * (p - targets[k]);
                    grad_raw.at(k, r, c) = 2.0 * cfg.coord_weight * (p - targets[k]) * p * (1.0 - p);
                }
                for (int k = 2; k < 4; ++k) {
                    const double d = raw.at(k, r, c) - targets[k];
                    loss += cfg.coord_weight * d * d;
                    grad_raw.at(k, r, c) = 2.0 * cfg.coord_weight * d;
                }
            } else {
                bool ignore = false;
                for (const auto& b : boxes)
                    if (iou(decoded.boxes[cell], b) > cfg.ignore_iou) ignore = true;
                if (ignore) continue;
                loss += -cfg.noobj_weight * std::log(std::max(1.0 - s, 1e-12));
                grad_raw.at(4, r, c) = cfg.noobj_weight * s;
            }
        }
    return loss;
}

/// Trains the detector in place with Adam. Images must already be at the
/// detector input size. Random horizontal/vertical flips are applied.
inline std::vector<DetectorEpochStats> train_toy_detector(
    ToyDetector& det, const std::vector<LabeledImage>& data, const DetectorTrainConfig& cfg,
    const std::function<void(const DetectorEpochStats&)>& on_epoch = {}) {
    if (data.empty()) throw ValidationError("detector training set is empty");
    Rng rng(cfg.seed);
    Adam adam({cfg.learning_rate});
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<DetectorEpochStats> log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<ConvParamGrad> grads;
            for (std::size_t k = start; k < end; ++k) {
                const auto& sample = data[order[k]];
                Image img = sample.pixels;
                std::vector<Box> boxes = sample.boxes;
                const bool fx = rng.uniform() < 0.5, fy = rng.uniform() < 0.5;
                const int W = img.width(), H = img.height();
                if (fx || fy) {
                    Image f(3, H, W);
                    for (int c = 0; c < 3; ++c)
                        for (int y = 0; y < H; ++y)
                            for (int x = 0; x < W; ++x) f.at(c, y, x) = img.at(c, fy ? H - 1 - y : y, fx ? W - 1 - x : x);
                    img = std::move(f);
                    for (auto& b : boxes) {
                        if (fx) b = {W - b.x_max, b.y_min, W - b.x_min, b.y_max};
                        if (fy) b = {b.x_min, H - b.y_max, b.x_max, H - b.y_min};
                    }
                }
                detail::paste_occluders(img, boxes, cfg, rng);
                ToyDetector::Tape tape;
                const Image raw = det.raw_forward(img, tape);
                Image graw;
                epoch_loss += detector_loss(det, raw, boxes, cfg, graw);
                for (auto& v : graw.values()) v /= static_cast<double>(end - start);
                det.backward(tape, graw, &grads, false);
            }
            std::vector<std::span<const double>> g;
            for (auto& pg : grads) {
                g.emplace_back(pg.weight.data(), static_cast<std::size_t>(pg.weight.size()));
                g.emplace_back(pg.bias.data(), static_cast<std::size_t>(pg.bias.size()));
            }
            auto params = det.parameters();
            adam.step(params, g);
        }
        DetectorEpochStats st{epoch + 1, epoch_loss / static_cast<double>(data.size())};
        log.push_back(st);
        if (on_epoch) on_epoch(st);
    }
    return log;
}

}  // namespace aerialpatch
