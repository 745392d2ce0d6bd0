// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "aerialpatch/augmentation.hpp"
#include "aerialpatch/synthetic.hpp"
#include "aerialpatch/weather.hpp"

namespace ap = aerialpatch;

namespace {

const ap::Box kBox{10, 10, 40, 24};
const ap::ScaleRule kRule{0.66, false, 40};

ap::Image random_image(int c, int h, int w, std::uint64_t seed) {
    ap::Rng rng(seed);
    ap::Image img(c, h, w);
    for (auto& v : img.values()) v = rng.uniform();
    return img;
}

ap::Image scene_image(std::uint64_t seed) {
    ap::Rng rng(seed);
    return ap::gen_synthetic_scene({}, rng).image;
}

}  // namespace

TEST(SampleAugmentation, ZeroJitterIsIdentity) {
    ap::Rng rng(1);
    const auto s = ap::sample_augmentation(rng, ap::AugmentationConfig::identity(), kBox, kRule);
    EXPECT_EQ(s.rotation_deg, 0.0);
    EXPECT_EQ(s.brightness_delta, 0.0);
    EXPECT_EQ(s.contrast_factor, 1.0);
    EXPECT_EQ(s.noise_amplitude, 0.0);
    EXPECT_DOUBLE_EQ(s.scale_factor, kRule.nominal_scale(kBox));
    EXPECT_FALSE(s.weather.has_value());
}

TEST(SampleAugmentation, RangesOverManySamples) {
    ap::Rng rng(2);
    ap::AugmentationConfig cfg;
    double rmin = 1e9, rmax = -1e9, cmin = 1e9, cmax = -1e9, bmin = 1e9, bmax = -1e9;
    for (int i = 0; i < 10000; ++i) {
        const auto s = ap::sample_augmentation(rng, cfg, kBox, kRule);
        rmin = std::min(rmin, s.rotation_deg);
        rmax = std::max(rmax, s.rotation_deg);
        cmin = std::min(cmin, s.contrast_factor);
        cmax = std::max(cmax, s.contrast_factor);
        bmin = std::min(bmin, s.brightness_delta);
        bmax = std::max(bmax, s.brightness_delta);
        ASSERT_LE(s.noise_amplitude, 0.1);
        const double nominal = kRule.nominal_scale(kBox);
        ASSERT_GE(s.scale_factor, nominal * 0.9 - 1e-12);
        ASSERT_LE(s.scale_factor, nominal * 1.1 + 1e-12);
    }
    EXPECT_GE(rmin, -20.0);
    EXPECT_LE(rmax, 20.0);
    EXPECT_GE(cmin, 0.8);
    EXPECT_LE(cmax, 1.2);
    EXPECT_GE(bmin, -0.1);
    EXPECT_LE(bmax, 0.1);
    // The draws actually span the ranges.
    EXPECT_LT(rmin, -19.0);
    EXPECT_GT(rmax, 19.0);
    EXPECT_LT(cmin, 0.81);
    EXPECT_GT(cmax, 1.19);
}

TEST(SampleAugmentation, GcHasNoWeatherGcwDoes) {
    ap::Rng rng(3);
    ap::AugmentationConfig gc;
    for (int i = 0; i < 100; ++i) EXPECT_FALSE(ap::sample_augmentation(rng, gc, kBox, kRule).weather.has_value());
    ap::AugmentationConfig gcw;
    gcw.weather_enabled = true;
    for (int i = 0; i < 100; ++i) {
        const auto s = ap::sample_augmentation(rng, gcw, kBox, kRule);
        ASSERT_TRUE(s.weather.has_value());
        EXPECT_GE(s.weather->intensity, 0.0);
        EXPECT_LE(s.weather->intensity, 1.0);
    }
}

TEST(SampleAugmentation, DegenerateBoxIsAnError) {
    ap::Rng rng(4);
    EXPECT_THROW(ap::sample_augmentation(rng, {}, {5, 5, 5, 9}, kRule), ap::ValidationError);
}

TEST(SampleAugmentation, SameSeedSameSequence) {
    ap::Rng a(77), b(77);
    ap::AugmentationConfig cfg;
    cfg.weather_enabled = true;
    for (int i = 0; i < 200; ++i) EXPECT_EQ(ap::sample_augmentation(a, cfg, kBox, kRule), ap::sample_augmentation(b, cfg, kBox, kRule));
}

TEST(ColorTransform, IdentitySpecIsNoOp) {
    const auto img = random_image(3, 9, 7, 5);
    EXPECT_EQ(ap::apply_color_transform(img, ap::AugmentationSpec{}), img);
}

TEST(ColorTransform, BrightnessShift) {
    ap::AugmentationSpec s;
    s.brightness_delta = 0.1;
    const auto mid = ap::apply_color_transform(ap::Image(3, 4, 4, 0.5), s);
    for (double v : mid.values()) EXPECT_NEAR(v, 0.6, 1e-15);
    const auto top = ap::apply_color_transform(ap::Image(3, 4, 4, 1.0), s);
    for (double v : top.values()) EXPECT_EQ(v, 1.0);
}

TEST(ColorTransform, OutputStaysInRange) {
    ap::Rng rng(6);
    ap::AugmentationConfig cfg;
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = ap::sample_augmentation(rng, cfg, kBox, kRule);
        const auto out = ap::apply_color_transform(random_image(3, 8, 8, static_cast<std::uint64_t>(trial)), s);
        for (double v : out.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    }
}

TEST(ColorTransform, NoiseIsBoundedAndReplayable) {
    ap::AugmentationSpec s;
    s.noise_amplitude = 0.1;
    s.noise_seed = 42;
    const ap::Image grey(3, 10, 10, 0.5);
    const auto a = ap::apply_color_transform(grey, s);
    EXPECT_EQ(a, ap::apply_color_transform(grey, s));
    double spread = 0.0;
    for (double v : a.values()) {
        EXPECT_LE(std::abs(v - 0.5), 0.1 + 1e-15);
        spread = std::max(spread, std::abs(v - 0.5));
    }
    EXPECT_GT(spread, 0.05);
}

TEST(ColorTransform, GradientMatchesFiniteDifferences) {
    ap::Rng rng(9);
    ap::AugmentationSpec s;
    s.contrast_factor = 1.13;
    s.brightness_delta = -0.04;
    s.noise_amplitude = 0.08;
    s.noise_seed = 5;
    const auto img = random_image(3, 12, 12, 10);
    const auto weights = random_image(3, 12, 12, 11);
    const auto g = ap::color_transform_backward(img, s, weights);
    auto objective = [&](const ap::Image& x) {
        const auto out = ap::apply_color_transform(x, s);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += weights.values()[i] * out.values()[i];
        return acc;
    };
    int checked = 0;
    const double h = 1e-6;
    while (checked < 100) {
        const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(img.size()) - 1));
        auto plus = img, minus = img;
        plus.values()[i] += h;
        minus.values()[i] -= h;
        const double v = s.contrast_factor * img.values()[i] + s.brightness_delta + ap::color_noise(s, 0, i);
        if (std::abs(v) < 1e-4 || std::abs(v - 1.0) < 1e-4) continue;  // on the clamp kink
        const double fd = (objective(plus) - objective(minus)) / (2 * h);
        const double an = g.values()[i];
        EXPECT_LE(std::abs(fd - an), 1e-4 * std::max({std::abs(fd), std::abs(an), 1e-8})) << "pixel " << i;
        ++checked;
    }
}

TEST(Weather, ZeroIntensityIsIdentity) {
    const auto img = scene_image(12);
    for (auto e : ap::kAllWeatherEffects) EXPECT_EQ(ap::apply_weather(img, {e, 0.0, 3}), img) << ap::to_string(e);
}

TEST(Weather, IdentityComposition) {
    const auto img = random_image(3, 16, 16, 13);
    ap::AugmentationSpec s;
    for (auto e : ap::kAllWeatherEffects) EXPECT_EQ(ap::apply_weather(ap::apply_color_transform(img, s), {e, 0.0, 1}), img);
}

TEST(Weather, OutputInRangeAndDeterministic) {
    ap::Rng rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        const auto img = scene_image(static_cast<std::uint64_t>(trial));
        for (auto e : ap::kAllWeatherEffects) {
            const ap::WeatherSpec spec{e, rng.uniform(), rng.next_u64()};
            const auto out = ap::apply_weather(img, spec);
            EXPECT_EQ(out, ap::apply_weather(img, spec));
            for (double v : out.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0) << ap::to_string(e);
        }
    }
}

TEST(Weather, FullFogStaysNearGrey) {
    const ap::WeatherParams p;
    // out = (1 - a) * in + a * grey, so |out - grey| = (1 - a) * |in - grey|
    // and |in - grey| <= max(grey, 1 - grey) for in in [0,1].
    const double a = p.fog_density;
    const double bound = (1.0 - a) * std::max(p.fog_grey, 1.0 - p.fog_grey);
    EXPECT_DOUBLE_EQ(ap::fog_distance_bound(1.0, p), bound);
    for (int trial = 0; trial < 5; ++trial) {
        auto img = random_image(3, 20, 20, 100 + trial);
        img.at(0, 0, 0) = 0.0;
        img.at(1, 0, 0) = 1.0;
        const auto out = ap::apply_weather(img, {ap::WeatherEffect::Fog, 1.0, 0}, p);
        for (double v : out.values()) EXPECT_LE(std::abs(v - p.fog_grey), bound + 1e-12);
    }
}

TEST(Weather, SnowNeverDarkens) {
    ap::Rng rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        const auto img = scene_image(200 + trial);
        const auto out = ap::apply_weather(img, {ap::WeatherEffect::Snow, rng.uniform(), rng.next_u64()});
        for (std::size_t i = 0; i < img.size(); ++i) ASSERT_GE(out.values()[i], img.values()[i]);
        EXPECT_GE(out.mean(), img.mean());
    }
}

TEST(Weather, UnknownEffectTagIsAnError) {
    EXPECT_THROW(ap::parse_weather_effect("hail"), ap::ValidationError);
    EXPECT_EQ(ap::parse_weather_effect("autumn_leaves"), ap::WeatherEffect::AutumnLeaves);
}

TEST(Weather, BackwardMatchesFiniteDifferences) {
    ap::Rng rng(16);
    auto img = scene_image(300);
    for (auto& v : img.values()) v = 0.1 + 0.6 * v;  // keep sun gain below saturation
    const auto weights = random_image(3, img.height(), img.width(), 17);
    for (auto e : ap::kAllWeatherEffects) {
        const ap::WeatherSpec spec{e, 0.7, 99};
        const auto g = ap::weather_backward(img, spec, weights);
        auto objective = [&](const ap::Image& x) {
            const auto out = ap::apply_weather(x, spec);
            double acc = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) acc += weights.values()[i] * out.values()[i];
            return acc;
        };
        for (int k = 0; k < 30; ++k) {
            const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(img.size()) - 1));
            const double h = 1e-6;
            auto plus = img, minus = img;
            plus.values()[i] += h;
            minus.values()[i] -= h;
            const double fd = (objective(plus) - objective(minus)) / (2 * h);
            EXPECT_NEAR(fd, g.values()[i], 1e-4 * std::max(1.0, std::abs(fd))) << ap::to_string(e) << " pixel " << i;
        }
    }
}
