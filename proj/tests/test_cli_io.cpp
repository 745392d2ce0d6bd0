// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <fstream>

#include "aerialpatch/config.hpp"
#include "aerialpatch/io/dataset.hpp"
#include "aerialpatch/io/image_io.hpp"
#include "aerialpatch/pipeline.hpp"
#include "aerialpatch/plot.hpp"
#include "test_support.hpp"

namespace ap = aerialpatch;
namespace fs = std::filesystem;
using testing_support::ScratchDir;
using testing_support::trained_fixture;

namespace {

int run_cli(const std::string& args, const std::string& log) {
    const std::string cmd = std::string("\"") + AERIALPATCH_CLI + "\" " + args + " > \"" + log + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) { return ap::read_text_file(path); }

void write(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

/// Track rows for one object over frames [0, n), skipping `missing`.
std::string track_csv(const std::string& id, long n, const std::vector<long>& missing = {}) {
    std::string s = "frame_index,object_id,x_min,y_min,x_max,y_max\n";
    for (long f = 0; f < n; ++f)
        if (std::find(missing.begin(), missing.end(), f) == missing.end())
            s += std::to_string(f) + "," + id + ",10,10,40,24\n";
    return s;
}

std::string score_csv(const std::string& id, long n, double score) {
    std::string s = "frame_index,object_id,score\n";
    for (long f = 0; f < n; ++f) s += std::to_string(f) + "," + id + "," + std::to_string(score) + "\n";
    return s;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
    ap::Config c;
    EXPECT_EQ(c.str("patch.design"), "ON");
    c.load_text("# comment\ntrain.epochs = 12\n\naug.rotation_deg=5 # trailing\n");
    c.apply_args({"--loss.gamma=1.5", "--seed", "9"});
    EXPECT_EQ(c.integer("train.epochs"), 12);
    EXPECT_EQ(c.num("aug.rotation_deg"), 5.0);
    EXPECT_EQ(c.num("loss.gamma"), 1.5);
    EXPECT_EQ(c.unsigned_integer("seed"), 9u);
    EXPECT_EQ(c.list("aug.weather.effects").size(), 5u);
}

TEST(Config, UnknownKeyListsValidKeys) {
    ap::Config c;
    try {
        c.apply_args({"--train.epoch=3"});
        FAIL() << "expected a validation error";
    } catch (const ap::ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("train.epochs"), std::string::npos);
    }
    EXPECT_THROW(c.load_text("no equals sign\n"), ap::ValidationError);
    EXPECT_THROW(c.apply_args({"--seed"}), ap::ValidationError);
}

TEST(Config, TypedAccessorsReject) {
    ap::Config c;
    c.set("train.epochs", "many");
    EXPECT_THROW(c.integer("train.epochs"), ap::ValidationError);
    c.set("loss.normalize_regularizers", "maybe");
    EXPECT_THROW(c.flag("loss.normalize_regularizers"), ap::ValidationError);
    EXPECT_THROW(c.require_path("detector.path"), ap::ValidationError);
}

TEST(ImageIo, PngRoundTripIsLossless) {
    ScratchDir dir("png");
    ap::Rng rng(51);
    ap::Image img(3, 7, 9);
    for (auto& v : img.values()) v = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
    ap::PngMetadata meta;
    meta.pixels_per_metre = 4000;
    meta.text["Design"] = "ON";
    ap::write_png(dir / "a.png", img, meta);
    const auto back = ap::read_png(dir / "a.png");
    EXPECT_EQ(back.image, img);
    EXPECT_EQ(back.meta.pixels_per_metre, 4000u);
    EXPECT_EQ(back.meta.text.at("Design"), "ON");
    EXPECT_THROW(ap::read_image(dir / "missing.png"), ap::Error);
}

TEST(Export, OnPatchCarriesItsPhysicalSize) {
    ScratchDir dir("export");
    ap::Rng rng(52);
    const auto patch = ap::Patch::random(ap::PatchDesign::On, {20, 16, 1189, 841}, rng);
    for (int ppmm : {1, 2}) {
        const auto pieces = ap::export_patch(patch, dir.path(), ppmm);
        ASSERT_EQ(pieces.size(), 1u);
        const auto png = ap::read_png(dir / pieces[0].file);
        ASSERT_TRUE(png.meta.pixels_per_metre.has_value());
        const double mm_per_px = 1000.0 / static_cast<double>(*png.meta.pixels_per_metre);
        EXPECT_NEAR(png.image.width() * mm_per_px, 1189.0, 1e-9);
        EXPECT_NEAR(png.image.height() * mm_per_px, 841.0, 1e-9);
    }
    EXPECT_NE(slurp(dir / "patch_print.txt").find("1189 x 841 mm"), std::string::npos);
    EXPECT_THROW(ap::export_patch(patch, dir.path(), 0), ap::ValidationError);
}

TEST(Export, OffPatchWritesThreeStrips) {
    ScratchDir dir("export_off");
    const auto patch = ap::Patch::filled(ap::PatchDesign::Off, {40, 3, 3200, 200}, 0.5);
    const auto pieces = ap::export_patch(patch, dir.path(), 1);
    ASSERT_EQ(pieces.size(), 3u);
    for (const auto& p : pieces) {
        EXPECT_TRUE(fs::exists(dir / p.file));
        EXPECT_EQ(p.width_px, 3200);
        EXPECT_EQ(p.height_px, 200);
    }
}

TEST(TrackCsv, ParsesAndRejects) {
    const auto rows = ap::parse_track_csv(track_csv("car", 3));
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[2].frame_index, 2);
    EXPECT_EQ(rows[0].box, (ap::Box{10, 10, 40, 24}));
    EXPECT_THROW(ap::parse_track_csv("frame_index,object_id,x_min,y_min,x_max,y_max\n"), ap::ValidationError);
    EXPECT_THROW(ap::parse_track_csv("frame_index,object_id,x_min\n1,a,2\n"), ap::ValidationError);
    EXPECT_THROW(ap::parse_track_csv("frame_index,object_id,x_min,y_min,x_max,y_max\n0,a,5,5,5,9\n"), ap::ValidationError);
}

TEST(ScoreCsv, RejectsOutOfRangeScores) {
    try {
        ap::parse_score_csv("frame_index,object_id,score\n0,a,1.2\n");
        FAIL() << "expected a validation error";
    } catch (const ap::ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("score out of range"), std::string::npos);
    }
    EXPECT_EQ(ap::parse_score_csv("frame_index,object_id,score\n4,a,0.25\n")[0].score, 0.25);
}

TEST(PhysicalIngest, FrameCountsBecomeAlphaAndBeta) {
    ScratchDir dir("ingest");
    write(dir / "pt.csv", track_csv("grey", 1084));
    write(dir / "ps.csv", score_csv("grey", 1084, 0.2));
    write(dir / "ct.csv", track_csv("grey", 1042));
    write(dir / "cs.csv", score_csv("grey", 1042, 0.8));
    const auto r = ap::ingest_physical_run({dir / "pt.csv", dir / "ps.csv", ""}, {dir / "ct.csv", dir / "cs.csv", ""}, {});
    ASSERT_EQ(r.series.size(), 1u);
    EXPECT_EQ(r.series[0].patched_scores.size(), 1084u);
    EXPECT_EQ(r.series[0].clean_scores.size(), 1042u);
    EXPECT_NEAR(ap::osr(r.series[0]), 0.25, 1e-12);
    EXPECT_TRUE(r.gaps.empty());
}

TEST(PhysicalIngest, GapsScoreZeroAndAreReported) {
    ScratchDir dir("gaps");
    write(dir / "pt.csv", track_csv("a", 10, {3, 4}) + "0,solo,1,1,5,5\n");
    write(dir / "ps.csv", score_csv("a", 10, 0.5));
    write(dir / "ct.csv", track_csv("a", 10));
    write(dir / "cs.csv", score_csv("a", 10, 0.5));
    write(dir / "cond.json", R"({"a": {"lighting": "sun", "motion": "moving"}})");
    const auto r = ap::ingest_physical_run({dir / "pt.csv", dir / "ps.csv", ""}, {dir / "ct.csv", dir / "cs.csv", ""},
                                           ap::parse_conditions(slurp(dir / "cond.json")));
    ASSERT_EQ(r.series.size(), 1u);
    EXPECT_EQ(r.series[0].patched_scores[3], 0.0);
    EXPECT_EQ(r.series[0].patched_scores[4], 0.0);
    EXPECT_EQ(r.series[0].patched_scores[5], 0.5);
    EXPECT_EQ(r.gaps.size(), 2u);
    EXPECT_EQ(r.series[0].lighting, ap::Lighting::Sun);
    EXPECT_EQ(r.series[0].motion, ap::Motion::Moving);
    EXPECT_EQ(r.unpaired, std::vector<std::string>{"solo"});
}

TEST(Synthetic, ZeroCarsGiveBackgroundOnly) {
    ap::SyntheticSceneParams p;
    p.min_cars = p.max_cars = 0;
    ap::Rng rng(53);
    const auto s = ap::gen_synthetic_scene(p, rng);
    EXPECT_TRUE(s.boxes.empty());
    EXPECT_EQ(s.image.width(), 96);
}

TEST(Synthetic, TenCarsInsideBounds) {
    ap::SyntheticSceneParams p;
    p.width = p.height = 256;
    p.min_cars = p.max_cars = 10;
    ap::Rng rng(54);
    const auto s = ap::gen_synthetic_scene(p, rng);
    ASSERT_EQ(s.boxes.size(), 10u);
    for (const auto& b : s.boxes) {
        EXPECT_TRUE(b.valid());
        EXPECT_GE(b.x_min, 0.0);
        EXPECT_GE(b.y_min, 0.0);
        EXPECT_LE(b.x_max, 256.0);
        EXPECT_LE(b.y_max, 256.0);
    }
}

TEST(Synthetic, DeterministicPerSeed) {
    ap::Rng a(55), b(55);
    const auto x = ap::gen_synthetic_scene({}, a), y = ap::gen_synthetic_scene({}, b);
    EXPECT_EQ(x.image, y.image);
    EXPECT_EQ(x.boxes, y.boxes);
}

TEST(Synthetic, OverfullSceneIsAnError) {
    ap::SyntheticSceneParams p;
    p.min_cars = p.max_cars = 10;
    ap::Rng rng(56);
    EXPECT_THROW(ap::gen_synthetic_scene(p, rng), ap::ValidationError);
}

TEST(Plot, IdenticalSeriesAnnotateUnitRatio) {
    const ap::TrackedScoreSeries s{"grey", {0.4, 0.9, 0.6}, {0.4, 0.9, 0.6}, ap::Lighting::Both, ap::Motion::Static};
    EXPECT_EQ(ap::score_plot(s).annotation, "OSR=1.000");
    ScratchDir dir("plot");
    ap::save_plot(dir / "s.png", ap::score_plot(s));
    EXPECT_TRUE(fs::exists(dir / "s.png"));
    EXPECT_TRUE(fs::exists(dir / "s.csv"));
}

TEST(DigitalEval, NoOpPatchLeavesScoresUnchanged) {
    const auto& f = trained_fixture();
    const auto ann = ap::build_annotations(f.dataset, f.detector);
    ap::LossSettings s;
    const auto r = ap::evaluate_digital(f.dataset.test, ann.test, std::nullopt, s, f.detector, {});
    EXPECT_NEAR(r.aorr, 0.0, 0.02);
    EXPECT_NEAR(r.pr.ap, 1.0, 1e-12);
}

TEST(DigitalEval, SameInputsSameResult) {
    const auto& f = trained_fixture();
    const auto ann = ap::build_annotations(f.dataset, f.detector);
    ap::LossSettings s;
    ap::Rng rng(57);
    const auto patch = ap::Patch::random(ap::PatchDesign::On, {16, 12, 1189, 841}, rng);
    ap::DigitalEvalOptions opt;
    opt.weather = true;
    opt.seed = 4;
    const auto a = ap::evaluate_digital(f.dataset.test, ann.test, patch, s, f.detector, opt);
    const auto b = ap::evaluate_digital(f.dataset.test, ann.test, patch, s, f.detector, opt);
    EXPECT_EQ(a.aorr, b.aorr);
    EXPECT_EQ(a.attacked, b.attacked);
}

TEST(Cli, ExitCodes) {
    ScratchDir dir("cli");
    EXPECT_EQ(run_cli("--version", dir / "log"), 0);
    EXPECT_EQ(run_cli("train-patch --no.such.key=1", dir / "log"), 2);
    EXPECT_NE(slurp(dir / "log").find("train.epochs"), std::string::npos);
    EXPECT_EQ(run_cli("eval-digital --output_dir=" + (dir / "o"), dir / "log"), 2);
    EXPECT_EQ(run_cli("annotate --scene=" + (dir / "none") + " --detector.path=" + (dir / "missing.bin") +
                          " --output_dir=" + (dir / "o"),
                      dir / "log"),
              2);
    EXPECT_EQ(run_cli("bogus-command", dir / "log"), 2);
}

TEST(Cli, GenSyntheticWritesAManifest) {
    ScratchDir dir("cli_gen");
    const std::string out = dir / "scene";
    ASSERT_EQ(run_cli("gen-synthetic --gen.train_count=3 --gen.test_count=2 --seed=5 --output_dir=" + out, dir / "log"), 0)
        << slurp(dir / "log");
    const auto m = ap::Json::parse(slurp(out + "/manifest-gen-synthetic.json"));
    EXPECT_EQ(m["command"], "gen-synthetic");
    EXPECT_EQ(m["version"], ap::kVersion);
    EXPECT_EQ(m["config"]["seed"], "5");
    const auto ds = ap::load_scene(out);
    EXPECT_EQ(ds.train.size(), 3u);
    EXPECT_EQ(ds.test.size(), 2u);

    const std::string again = dir / "again";
    ASSERT_EQ(run_cli("gen-synthetic --gen.train_count=3 --gen.test_count=2 --seed=5 --output_dir=" + again, dir / "log"), 0);
    EXPECT_EQ(slurp(out + "/train/train_00000.png"), slurp(again + "/train/train_00000.png"));
    EXPECT_EQ(slurp(out + "/test_boxes.json"), slurp(again + "/test_boxes.json"));
}
