// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "aerialpatch/error.hpp"

namespace aerialpatch {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam over a fixed list of parameter tensors. Moment buffers are sized on
/// the first step and the tensor list must not change shape afterwards.
class Adam {
public:
    explicit Adam(AdamOptions options = {}) : opt_(options) {}

    void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads) {
        if (params.size() != grads.size()) throw Error("Adam: parameter/gradient count mismatch");
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
        }
        if (m_.size() != params.size()) throw Error("Adam: parameter list changed between steps");
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto p = params[k];
            auto g = grads[k];
            auto& m = m_[k];
            auto& v = v_[k];
            if (p.size() != m.size() || g.size() != m.size()) throw Error("Adam: tensor size changed");
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
                v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                p[i] -= opt_.learning_rate * mh / (std::sqrt(vh) + opt_.epsilon);
            }
        }
    }

    long steps() const { return t_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

    void restore(long steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
        t_ = steps;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    AdamOptions opt_;
    long t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace aerialpatch
