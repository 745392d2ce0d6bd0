// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "aerialpatch/adam.hpp"
#include "aerialpatch/io/dataset.hpp"
#include "aerialpatch/loss.hpp"
#include "aerialpatch/optimize.hpp"
#include "test_support.hpp"

namespace ap = aerialpatch;
using testing_support::ScratchDir;
using testing_support::trained_fixture;

namespace {

ap::Patch random_patch(ap::PatchDesign d, int w, int h, std::uint64_t seed) {
    ap::Rng rng(seed);
    return ap::Patch::random(d, {w, h, 1189.0, 841.0}, rng);
}

std::vector<ap::Box> truth_boxes(const std::string& id) {
    std::vector<ap::Box> out;
    for (const auto& d : trained_fixture().train_truth.at(id)) out.push_back(d.box);
    return out;
}

ap::LossSettings settings_for(ap::PatchDesign d) {
    ap::LossSettings s;
    s.geometry = ap::PlacementGeometry::defaults(d);
    s.normalize_regularizers = true;
    return s;
}

/// First `n` training scenes of the fixture, with their true boxes as annotations.
struct SmallSet {
    ap::SceneDataset dataset;
    ap::DetectionSet annotations;
};

SmallSet small_set(std::size_t n) {
    const auto& f = trained_fixture();
    SmallSet s;
    s.dataset.scene_name = "small";
    for (std::size_t i = 0; i < n; ++i) {
        s.dataset.train.push_back(f.dataset.train[i]);
        s.annotations.per_image[f.dataset.train[i].id] = f.train_truth.at(f.dataset.train[i].id);
    }
    s.dataset.test.push_back(f.dataset.test[0]);
    return s;
}

ap::TrainResult train_small(const SmallSet& s, int epochs, std::uint64_t seed, const ap::OptimizeHooks& hooks = {}) {
    ap::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 4;
    cfg.rng_seed = seed;
    cfg.checkpoint_interval = hooks.output_dir.empty() ? 0 : 3;
    return ap::optimize_patch(s.dataset, s.annotations, ap::PatchDesign::On, {24, 20, 1189, 841},
                              settings_for(ap::PatchDesign::On), cfg, trained_fixture().detector, ap::load_color_set(""),
                              hooks);
}

double brute_nps(const ap::Patch& p, const ap::PrintableColorSet& colors) {
    double total = 0.0;
    for (const auto& piece : p.pieces())
        for (int y = 0; y < piece.height(); ++y)
            for (int x = 0; x < piece.width(); ++x) {
                double best = 1e9;
                for (const auto& c : colors.colors())
                    best = std::min(best, std::hypot(piece.at(0, y, x) - c[0], piece.at(1, y, x) - c[1], piece.at(2, y, x) - c[2]));
                total += best;
            }
    return total;
}

}  // namespace

TEST(Nps, ZeroWhenEveryPixelIsPrintable) {
    const ap::PrintableColorSet colors({{0.1, 0.2, 0.3}, {0.9, 0.8, 0.7}});
    auto p = ap::Patch::filled(ap::PatchDesign::On, {4, 3, 1, 1}, 0.0);
    auto& img = p.piece(0);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 4; ++x) {
            const auto& c = colors.colors()[static_cast<std::size_t>((x + y) % 2)];
            for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[static_cast<std::size_t>(ch)];
        }
    EXPECT_EQ(ap::nps(p, colors).value, 0.0);
}

TEST(Nps, WhitePixelAgainstBlack) {
    const ap::PrintableColorSet black({{0.0, 0.0, 0.0}});
    const auto one = ap::nps(ap::Patch::filled(ap::PatchDesign::On, {1, 1, 1, 1}, 1.0), black);
    EXPECT_NEAR(one.value, std::sqrt(3.0), 1e-15);
    for (double g : one.grad.piece(0).values()) EXPECT_NEAR(g, 1.0 / std::sqrt(3.0), 1e-15);
    EXPECT_NEAR(ap::nps(ap::Patch::filled(ap::PatchDesign::On, {5, 4, 1, 1}, 1.0), black).value, 20.0 * std::sqrt(3.0), 1e-12);
}

TEST(Nps, MatchesBruteForce) {
    ap::Rng rng(21);
    std::vector<ap::Rgb> palette;
    for (int i = 0; i < 7; ++i) palette.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    const ap::PrintableColorSet colors(palette);
    for (auto d : {ap::PatchDesign::On, ap::PatchDesign::Off}) {
        const auto p = random_patch(d, 8, 8, 22);
        EXPECT_NEAR(ap::nps(p, colors).value, brute_nps(p, colors), 1e-12);
    }
}

TEST(Nps, GradientMatchesFiniteDifferences) {
    const auto colors = ap::load_color_set("");
    const auto p = random_patch(ap::PatchDesign::On, 6, 5, 23);
    const auto g = ap::nps(p, colors).grad;
    for (std::size_t i = 0; i < p.piece(0).size(); i += 7) {
        auto a = p, b = p;
        a.piece(0).values()[i] += 1e-7;
        b.piece(0).values()[i] -= 1e-7;
        const double fd = (ap::nps(a, colors).value - ap::nps(b, colors).value) / 2e-7;
        EXPECT_NEAR(fd, g.piece(0).values()[i], 1e-5);
    }
}

TEST(Tv, ConstantPatchIsNearlyZero) {
    const auto p = ap::Patch::filled(ap::PatchDesign::On, {9, 7, 1, 1}, 0.4);
    const double terms = 3.0 * 8.0 * 6.0;
    EXPECT_NEAR(ap::tv(p).value, terms * std::sqrt(ap::kTvEpsilon), 1e-15);
    EXPECT_LE(ap::tv(p).value, std::sqrt(ap::kTvEpsilon) * static_cast<double>(p.parameter_count()));
}

TEST(Tv, TwoByTwoByHand) {
    auto p = ap::Patch::filled(ap::PatchDesign::On, {2, 2, 1, 1}, 0.0);
    // Channel 0: [[0.5, 0.2], [0.1, *]]; other channels constant.
    p.piece(0).at(0, 0, 0) = 0.5;
    p.piece(0).at(0, 0, 1) = 0.2;
    p.piece(0).at(0, 1, 0) = 0.1;
    p.piece(0).at(0, 1, 1) = 0.9;
    const double e = ap::kTvEpsilon;
    const double expected = std::sqrt(0.3 * 0.3 + 0.4 * 0.4 + e) + 2.0 * std::sqrt(e);
    EXPECT_NEAR(ap::tv(p).value, expected, 1e-15);
}

TEST(Tv, SmoothRampBeatsShuffledRamp) {
    auto ramp = ap::Patch::filled(ap::PatchDesign::On, {10, 10, 1, 1}, 0.0);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) ramp.piece(0).at(c, y, x) = (x + y) / 18.0;
    ap::Rng rng(24);
    for (int trial = 0; trial < 20; ++trial) {
        auto shuffled = ramp;
        auto& v = shuffled.piece(0).values();
        rng.shuffle(v.begin(), v.end());
        EXPECT_LT(ap::tv(ramp).value, ap::tv(shuffled).value);
    }
}

TEST(Tv, GradientMatchesFiniteDifferences) {
    const auto p = random_patch(ap::PatchDesign::Off, 6, 4, 25);
    const auto g = ap::tv(p).grad;
    for (int piece = 0; piece < 3; ++piece)
        for (std::size_t i = 0; i < p.piece(piece).size(); i += 5) {
            auto a = p, b = p;
            a.piece(piece).values()[i] += 1e-7;
            b.piece(piece).values()[i] -= 1e-7;
            const double fd = (ap::tv(a).value - ap::tv(b).value) / 2e-7;
            EXPECT_NEAR(fd, g.piece(piece).values()[i], 1e-5);
        }
}

TEST(Tv, DegenerateShapeIsAnError) {
    EXPECT_THROW(ap::tv(ap::Patch::filled(ap::PatchDesign::On, {1, 8, 1, 1}, 0.5)), ap::ValidationError);
    EXPECT_THROW(ap::tv(ap::Patch::filled(ap::PatchDesign::On, {8, 1, 1, 1}, 0.5)), ap::ValidationError);
}

TEST(ImageLoss, ZeroWeightsGiveMaxObjectness) {
    const auto& f = trained_fixture();
    const auto& img = f.dataset.train[0];
    const auto boxes = truth_boxes(img.id);
    auto s = settings_for(ap::PatchDesign::On);
    s.weights = {0.0, 0.0};
    const auto p = random_patch(ap::PatchDesign::On, 16, 16, 26);
    ap::Rng rng(27);
    const auto specs = ap::sample_image_specs(p, boxes, s, rng);
    const auto r = ap::image_loss_with_specs(p, img.pixels, boxes, specs, s, f.detector, ap::load_color_set(""));
    const auto frame = ap::embed_patch(img.pixels, p, boxes, specs, s.geometry).image;
    const double direct = ap::max_objectness(f.detector.forward(frame)).value;
    EXPECT_DOUBLE_EQ(r.total, direct);
    EXPECT_DOUBLE_EQ(r.max_objectness, direct);
}

TEST(ImageLoss, LinearInTheWeights) {
    const auto& f = trained_fixture();
    const auto& img = f.dataset.train[1];
    const auto boxes = truth_boxes(img.id);
    const auto colors = ap::load_color_set("");
    const auto p = random_patch(ap::PatchDesign::On, 16, 16, 28);
    for (bool normalize : {false, true}) {
        auto s = settings_for(ap::PatchDesign::On);
        s.normalize_regularizers = normalize;
        ap::Rng rng(29);
        const auto specs = ap::sample_image_specs(p, boxes, s, rng);
        s.weights = {0.0, 0.0};
        const double base = ap::image_loss_with_specs(p, img.pixels, boxes, specs, s, f.detector, colors, false).total;
        const auto [nd, td] = ap::regularizer_divisors(p, normalize);
        for (auto [delta, gamma] : {std::pair{0.01, 2.5}, {1.0, 0.0}, {0.0, 3.0}}) {
            s.weights = {delta, gamma};
            const double t = ap::image_loss_with_specs(p, img.pixels, boxes, specs, s, f.detector, colors, false).total;
            const double expected = base + delta * ap::nps(p, colors).value / nd + gamma * ap::tv(p).value / td;
            EXPECT_NEAR(t, expected, 1e-12 * std::max(1.0, std::abs(expected)));
        }
    }
}

TEST(ImageLoss, SameSeedSameValue) {
    const auto& f = trained_fixture();
    const auto& img = f.dataset.train[2];
    const auto boxes = truth_boxes(img.id);
    auto s = settings_for(ap::PatchDesign::Off);
    s.variant = ap::PipelineVariant::GCW;
    const auto p = random_patch(ap::PatchDesign::Off, 40, 4, 30);
    ap::Rng a(31), b(31);
    const auto ra = ap::image_loss(p, img.pixels, boxes, s, f.detector, ap::load_color_set(""), a);
    const auto rb = ap::image_loss(p, img.pixels, boxes, s, f.detector, ap::load_color_set(""), b);
    EXPECT_EQ(ra.total, rb.total);
    EXPECT_EQ(ra.grad, rb.grad);
    EXPECT_GE(ra.total, 0.0);
}

TEST(ImageLoss, EmptyBoxListIsAnError) {
    const auto& f = trained_fixture();
    ap::Rng rng(32);
    EXPECT_THROW(ap::image_loss(random_patch(ap::PatchDesign::On, 8, 8, 1), f.dataset.train[0].pixels, {},
                                settings_for(ap::PatchDesign::On), f.detector, ap::load_color_set(""), rng),
                 ap::ValidationError);
}

TEST(ImageLoss, GradientMatchesFiniteDifferences) {
    const auto& f = trained_fixture();
    const auto colors = ap::load_color_set("");
    for (auto variant : {ap::PipelineVariant::GC, ap::PipelineVariant::GCW}) {
        const auto& img = f.dataset.train[3];
        const auto boxes = truth_boxes(img.id);
        auto s = settings_for(ap::PatchDesign::On);
        s.variant = variant;
        const auto p = random_patch(ap::PatchDesign::On, 16, 16, 33);
        ap::Rng rng(34);
        const auto specs = ap::sample_image_specs(p, boxes, s, rng);
        const auto r = ap::image_loss_with_specs(p, img.pixels, boxes, specs, s, f.detector, colors);
        auto loss = [&](const ap::Patch& q) {
            return ap::image_loss_with_specs(q, img.pixels, boxes, specs, s, f.detector, colors, false).total;
        };
        int checked = 0;
        for (std::size_t i = 0; i < p.piece(0).size() && checked < 50; i += 13) {
            const double an = r.grad.piece(0).values()[i];
            const double h = 1e-6;
            auto a = p, b = p;
            a.piece(0).values()[i] += h;
            b.piece(0).values()[i] -= h;
            const double fd = (loss(a) - loss(b)) / (2 * h);
            EXPECT_LE(std::abs(fd - an), 1e-3 * std::max({std::abs(fd), std::abs(an), 1e-6}))
                << ap::to_string(variant) << " coordinate " << i << " fd " << fd << " analytic " << an;
            ++checked;
        }
        EXPECT_EQ(checked, 50);
    }
}

TEST(OptimizePatch, ControlReturnsItsInitialisation) {
    const auto s = small_set(4);
    ap::TrainConfig cfg;
    cfg.variant = ap::PipelineVariant::Control;
    cfg.rng_seed = 35;
    const auto r = ap::optimize_patch(s.dataset, s.annotations, ap::PatchDesign::On, {12, 10, 1, 1},
                                      settings_for(ap::PatchDesign::On), cfg, trained_fixture().detector,
                                      ap::load_color_set(""));
    EXPECT_EQ(r.patch, r.initial);
    ap::Rng rng(35);
    EXPECT_EQ(r.patch, ap::Patch::random(ap::PatchDesign::On, {12, 10, 1, 1}, rng));
    EXPECT_TRUE(r.curve.empty());
}

TEST(OptimizePatch, SameSeedSamePatch) {
    const auto s = small_set(6);
    const auto a = train_small(s, 2, 36), b = train_small(s, 2, 36);
    EXPECT_EQ(a.patch, b.patch);
    EXPECT_EQ(a.step_losses, b.step_losses);
    EXPECT_NE(a.patch, train_small(s, 2, 37).patch);
}

TEST(OptimizePatch, LowersObjectnessOverTraining) {
    const auto s = small_set(16);
    const auto r = train_small(s, 24, 38);
    ASSERT_EQ(r.curve.size(), 24u);
    auto window = [&](std::size_t from) {
        double acc = 0.0;
        for (std::size_t k = from; k < from + 4; ++k) acc += r.curve[k].mean_max_objectness;
        return acc / 4.0;
    };
    EXPECT_LT(window(20), window(0));
    for (double v : r.step_losses) EXPECT_GE(v, 0.0);
    for (const auto& piece : r.patch.pieces())
        for (double v : piece.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(OptimizePatch, ResumeIsBitExact) {
    const auto s = small_set(6);
    ScratchDir dir("resume");
    ap::OptimizeHooks hooks;
    hooks.output_dir = dir.path().string();
    (void)train_small(s, 3, 39, hooks);
    const auto ck = ap::decode_checkpoint(ap::read_text_file(dir / "checkpoint.bin"));
    EXPECT_EQ(ck.epoch, 3);
    EXPECT_EQ(ap::decode_checkpoint(ap::encode_checkpoint(ck)).patch, ck.patch);

    ap::OptimizeHooks resume;
    resume.resume = ck;
    const auto resumed = train_small(s, 6, 39, resume);
    const auto straight = train_small(s, 6, 39);
    EXPECT_EQ(resumed.patch, straight.patch);
}

TEST(OptimizePatch, UnannotatedImageIsAnError) {
    auto s = small_set(3);
    s.annotations.per_image.erase(s.dataset.train[1].id);
    EXPECT_THROW(train_small(s, 1, 40), ap::ValidationError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ap::Adam adam({0.05});
    std::vector<double> p{1.0, -2.0, 0.5}, g{3.0, -0.2, 1e-3};
    std::vector<std::span<double>> params{p};
    std::vector<std::span<const double>> grads{g};
    adam.step(params, grads);
    EXPECT_NEAR(p[0], 1.0 - 0.05, 1e-8);
    EXPECT_NEAR(p[1], -2.0 + 0.05, 1e-8);
    EXPECT_NEAR(p[2], 0.5 - 0.05 * 1e-3 / (1e-3 + 1e-8), 1e-12);
    EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, ConvergesOnAQuadratic) {
    ap::Adam adam({0.1});
    std::vector<double> x{4.0, -3.0};
    for (int i = 0; i < 500; ++i) {
        std::vector<double> g{2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)};
        std::vector<std::span<double>> params{x};
        std::vector<std::span<const double>> grads{g};
        adam.step(params, grads);
    }
    EXPECT_NEAR(x[0], 1.0, 1e-2);
    EXPECT_NEAR(x[1], -0.5, 1e-2);
}

TEST(PipelineVariant, ParsesTags) {
    EXPECT_EQ(ap::parse_variant("GC"), ap::PipelineVariant::GC);
    EXPECT_EQ(ap::parse_variant("G/C+W"), ap::PipelineVariant::GCW);
    EXPECT_EQ(ap::parse_variant("CONTROL"), ap::PipelineVariant::Control);
    EXPECT_THROW(ap::parse_variant("gc2"), ap::ValidationError);
}
