// SPDX-License-Identifier: Apache-2.0
#pragma once

// Loading scenes, printable palettes, CVAT-style track logs and per-frame
// score logs from disk.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aerialpatch/core_types.hpp"
#include "aerialpatch/detector.hpp"
#include "aerialpatch/error.hpp"
#include "aerialpatch/io/image_io.hpp"
#include "aerialpatch/io/serialize.hpp"
#include "aerialpatch/metrics.hpp"

namespace aerialpatch {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Printable colours
// ---------------------------------------------------------------------------

/// The bundled palette; identical to data/printable_colors.txt.
inline constexpr const char* kDefaultPaletteText = R"(# r g b in [0,1], one colour per line
0.000 0.000 0.000
0.200 0.200 0.200
0.400 0.400 0.400
0.600 0.600 0.600
0.800 0.800 0.800
1.000 1.000 1.000
0.850 0.100 0.100
0.600 0.050 0.050
0.950 0.450 0.400
0.950 0.550 0.100
0.700 0.350 0.100
0.450 0.250 0.100
0.950 0.850 0.150
0.750 0.700 0.300
0.950 0.900 0.650
0.300 0.650 0.200
0.100 0.400 0.150
0.600 0.800 0.450
0.100 0.600 0.600
0.050 0.350 0.400
0.500 0.800 0.850
0.150 0.350 0.750
0.100 0.150 0.450
0.500 0.600 0.900
0.450 0.200 0.600
0.250 0.100 0.350
0.750 0.550 0.800
0.850 0.250 0.550
0.550 0.500 0.400
0.350 0.400 0.300
)";

/// One "r g b" triplet per line; blank lines and '#' comments ignored.
inline PrintableColorSet parse_color_set(const std::string& text) {
    std::vector<Rgb> colors;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        std::istringstream ls(line);
        Rgb c{};
        if (!(ls >> c[0])) continue;
        std::string rest;
        if (!(ls >> c[1] >> c[2]) || (ls >> rest))
            throw ValidationError("palette line " + std::to_string(lineno) + ": expected three numbers");
        colors.push_back(c);
    }
    return PrintableColorSet(std::move(colors));
}

inline PrintableColorSet load_color_set(const std::string& path) {
    return path.empty() ? parse_color_set(kDefaultPaletteText) : parse_color_set(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

inline std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ValidationError("missing directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

/// Loads `<scene>/train` and `<scene>/test`. Image ids are file names.
/// Undecodable files are skipped with a warning and listed in `unreadable`.
inline SceneDataset load_scene(const std::string& scene_dir, std::ostream* warn = &std::cerr) {
    SceneDataset ds;
    ds.scene_name = fs::path(scene_dir).lexically_normal().filename().string();
    if (ds.scene_name.empty()) ds.scene_name = fs::path(scene_dir).lexically_normal().parent_path().filename().string();
    for (auto [split, out] : {std::pair{"train", &ds.train}, std::pair{"test", &ds.test}}) {
        for (const auto& p : list_images(fs::path(scene_dir) / split)) {
            try {
                out->push_back({p.filename().string(), read_image(p.string())});
            } catch (const ValidationError& e) {
                if (warn) *warn << "warning: skipping " << p.string() << ": " << e.what() << "\n";
                ds.unreadable.push_back(p.string());
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\"");
    const auto e = s.find_last_not_of(" \t\r\"");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

/// Header-addressed CSV table; every listed column must be present.
struct CsvTable {
    std::vector<std::vector<std::string>> rows;
    std::map<std::string, std::size_t> column;

    static CsvTable parse(const std::string& text, const std::vector<std::string>& required, const std::string& what) {
        CsvTable t;
        std::istringstream is(text);
        std::string line;
        bool header = true;
        while (std::getline(is, line)) {
            if (trim(line).empty()) continue;
            auto cells = split_csv_line(line);
            if (header) {
                for (std::size_t i = 0; i < cells.size(); ++i) t.column[cells[i]] = i;
                for (const auto& r : required)
                    if (!t.column.contains(r)) throw ValidationError(what + ": missing column '" + r + "'");
                header = false;
                continue;
            }
            if (cells.size() < t.column.size()) throw ValidationError(what + ": short row '" + line + "'");
            t.rows.push_back(std::move(cells));
        }
        if (header) throw ValidationError(what + ": empty file");
        return t;
    }

    const std::string& get(const std::vector<std::string>& row, const std::string& col) const {
        return row[column.at(col)];
    }
};

inline double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(what + ": not a number '" + s + "'");
    }
}

inline long parse_long(const std::string& s, const std::string& what) {
    long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ValidationError(what + ": not an integer '" + s + "'");
    return v;
}

}  // namespace detail

struct TrackRow {
    long frame_index = 0;
    std::string object_id;
    Box box;
};

/// Track log: frame_index, object_id, x_min, y_min, x_max, y_max.
inline std::vector<TrackRow> parse_track_csv(const std::string& text, const std::string& what = "track file") {
    const auto t = detail::CsvTable::parse(text, {"frame_index", "object_id", "x_min", "y_min", "x_max", "y_max"}, what);
    if (t.rows.empty()) throw ValidationError(what + ": empty track file");
    std::vector<TrackRow> rows;
    for (const auto& r : t.rows) {
        TrackRow tr;
        tr.frame_index = detail::parse_long(t.get(r, "frame_index"), what);
        tr.object_id = t.get(r, "object_id");
        tr.box = {detail::parse_double(t.get(r, "x_min"), what), detail::parse_double(t.get(r, "y_min"), what),
                  detail::parse_double(t.get(r, "x_max"), what), detail::parse_double(t.get(r, "y_max"), what)};
        if (tr.frame_index < 0) throw ValidationError(what + ": negative frame index");
        if (!tr.box.valid()) throw ValidationError(what + ": degenerate box at frame " + std::to_string(tr.frame_index));
        rows.push_back(std::move(tr));
    }
    return rows;
}

struct ScoreRow {
    long frame_index = 0;
    std::string object_id;
    double score = 0.0;
};

/// Precomputed score log: frame_index, object_id, score.
inline std::vector<ScoreRow> parse_score_csv(const std::string& text, const std::string& what = "score file") {
    const auto t = detail::CsvTable::parse(text, {"frame_index", "object_id", "score"}, what);
    std::vector<ScoreRow> rows;
    for (const auto& r : t.rows) {
        ScoreRow s{detail::parse_long(t.get(r, "frame_index"), what), t.get(r, "object_id"),
                   detail::parse_double(t.get(r, "score"), what)};
        if (!(s.score >= 0.0 && s.score <= 1.0)) throw ValidationError("score out of range");
        rows.push_back(std::move(s));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Physical runs
// ---------------------------------------------------------------------------

/// One recorded video: its track log plus either a score log or the frames.
struct PhysicalRunSource {
    std::string track_csv;
    std::string score_csv;
    std::string frames_dir;
};

struct FrameGap {
    std::string object_id;
    bool patched = false;
    long frame_index = 0;
    std::string reason;
};

struct PhysicalIngest {
    std::vector<TrackedScoreSeries> series;
    std::vector<FrameGap> gaps;
    /// Objects tracked in only one of the two runs.
    std::vector<std::string> unpaired;
};

struct ObjectConditions {
    Lighting lighting = Lighting::Both;
    Motion motion = Motion::Static;
};

/// Sidecar JSON: {"<object_id>": {"lighting": "sun|shade|both", "motion": "static|moving"}}.
inline std::map<std::string, ObjectConditions> parse_conditions(const std::string& json_text) {
    Json j;
    try {
        j = Json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed conditions file: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("conditions file must be a JSON object");
    std::map<std::string, ObjectConditions> out;
    for (const auto& [id, v] : j.items()) {
        ObjectConditions c;
        if (v.contains("lighting")) c.lighting = parse_lighting(v["lighting"].get<std::string>());
        if (v.contains("motion")) c.motion = parse_motion(v["motion"].get<std::string>());
        out[id] = c;
    }
    return out;
}

namespace detail {

/// Frame images keyed by the trailing integer in their file stem.
inline std::map<long, fs::path> index_frames(const std::string& dir) {
    std::map<long, fs::path> out;
    for (const auto& p : list_images(dir)) {
        const auto stem = p.stem().string();
        auto b = stem.size();
        while (b > 0 && std::isdigit(static_cast<unsigned char>(stem[b - 1]))) --b;
        if (b == stem.size()) continue;
        out[parse_long(stem.substr(b), "frame name")] = p;
    }
    return out;
}

struct SideScores {
    std::map<std::string, std::vector<double>> per_object;
};

inline SideScores collect_side(const PhysicalRunSource& src, bool patched, const Detector* detector, double min_iou,
                               std::vector<FrameGap>& gaps) {
    const auto rows = parse_track_csv(read_text_file(src.track_csv), src.track_csv);
    std::map<std::string, std::map<long, Box>> tracks;
    for (const auto& r : rows) tracks[r.object_id][r.frame_index] = r.box;

    std::map<std::pair<std::string, long>, double> given;
    std::map<long, fs::path> frames;
    if (!src.score_csv.empty()) {
        for (const auto& s : parse_score_csv(read_text_file(src.score_csv), src.score_csv))
            given[{s.object_id, s.frame_index}] = s.score;
    } else if (!src.frames_dir.empty()) {
        if (!detector) throw ValidationError("frame directories need a detector");
        frames = index_frames(src.frames_dir);
    } else {
        throw ValidationError("physical run needs a score CSV or a frame directory");
    }

    std::map<long, std::vector<Detection>> detections;
    auto detections_for = [&](long f) -> const std::vector<Detection>* {
        auto it = detections.find(f);
        if (it != detections.end()) return &it->second;
        auto fp = frames.find(f);
        if (fp == frames.end()) return nullptr;
        return &(detections[f] = detect(*detector, read_image(fp->second.string()), kRetrievalThreshold, 0.4));
    };

    SideScores out;
    for (const auto& [id, track] : tracks) {
        auto& scores = out.per_object[id];
        const long first = track.begin()->first, last = track.rbegin()->first;
        for (long f = first; f <= last; ++f) {
            auto tr = track.find(f);
            if (tr == track.end()) {
                gaps.push_back({id, patched, f, "frame missing from track"});
                scores.push_back(0.0);
                continue;
            }
            if (!src.score_csv.empty()) {
                auto g = given.find({id, f});
                scores.push_back(g == given.end() ? 0.0 : g->second);
                continue;
            }
            const auto* dets = detections_for(f);
            if (!dets) {
                gaps.push_back({id, patched, f, "frame image missing"});
                scores.push_back(0.0);
                continue;
            }
            double best = 0.0;
            for (const auto& d : *dets)
                if (iou(d.box, tr->second) >= min_iou) best = std::max(best, d.objectness);
            scores.push_back(best);
        }
    }
    return out;
}

}  // namespace detail

/// Builds one score series per object tracked in both runs. Frames inside a
/// track's span without a track row (or without a frame image) score 0 and
/// are reported as gaps.
inline PhysicalIngest ingest_physical_run(const PhysicalRunSource& patched, const PhysicalRunSource& clean,
                                          const std::map<std::string, ObjectConditions>& conditions,
                                          const Detector* detector = nullptr, double min_iou = 0.5) {
    PhysicalIngest out;
    const auto p = detail::collect_side(patched, true, detector, min_iou, out.gaps);
    const auto c = detail::collect_side(clean, false, detector, min_iou, out.gaps);
    for (const auto& [id, scores] : p.per_object) {
        auto it = c.per_object.find(id);
        if (it == c.per_object.end()) {
            out.unpaired.push_back(id);
            continue;
        }
        TrackedScoreSeries s;
        s.object_id = id;
        s.patched_scores = scores;
        s.clean_scores = it->second;
        if (auto cond = conditions.find(id); cond != conditions.end()) {
            s.lighting = cond->second.lighting;
            s.motion = cond->second.motion;
        }
        s.validate();
        out.series.push_back(std::move(s));
    }
    for (const auto& [id, scores] : c.per_object)
        if (!p.per_object.contains(id)) out.unpaired.push_back(id);
    if (out.series.empty()) throw ValidationError("no object is tracked in both the patched and the clean run");
    return out;
}

}  // namespace aerialpatch
