// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON and binary encodings of the core types. Doubles are written with
// round-trip precision, so decode(encode(x)) == x bit-exactly.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aerialpatch/core_types.hpp"
#include "aerialpatch/error.hpp"

namespace aerialpatch {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Writes via a temporary file and rename so readers never see partial output.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw Error("cannot write " + path);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw Error("failed writing " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move " + tmp + " to " + path);
}

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

inline Json to_json(const Detection& d) {
    return Json{{"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}}, {"objectness", d.objectness}};
}

inline Detection detection_from_json(const Json& j) {
    if (!j.contains("box") || !j["box"].is_array() || j["box"].size() != 4 || !j.contains("objectness"))
        throw ValidationError("detection entries need box[4] and objectness");
    Detection d{{j["box"][0].get<double>(), j["box"][1].get<double>(), j["box"][2].get<double>(),
                 j["box"][3].get<double>()},
                j["objectness"].get<double>()};
    if (!d.valid()) throw ValidationError("invalid detection (degenerate box or objectness outside [0,1])");
    return d;
}

/// Annotation file: image file name -> list of {box, objectness}.
inline Json to_json(const DetectionSet& set) {
    Json j = Json::object();
    for (const auto& [id, dets] : set.per_image) {
        Json arr = Json::array();
        for (const auto& d : dets) arr.push_back(to_json(d));
        j[id] = std::move(arr);
    }
    return j;
}

inline DetectionSet detection_set_from_json(const Json& j, std::optional<double> annotation_threshold = {}) {
    if (!j.is_object()) throw ValidationError("annotation document must be a JSON object");
    DetectionSet set;
    set.annotation_threshold = annotation_threshold;
    for (const auto& [id, arr] : j.items()) {
        auto& dets = set.per_image[id];
        for (const auto& e : arr) dets.push_back(detection_from_json(e));
    }
    set.validate();
    return set;
}

inline void save_detection_set(const std::string& path, const DetectionSet& set) {
    write_file_atomic(path, to_json(set).dump(1) + "\n");
}

inline DetectionSet load_detection_set(const std::string& path, std::optional<double> annotation_threshold = {}) {
    Json j;
    try {
        j = Json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed annotation file " + path + ": " + e.what());
    }
    return detection_set_from_json(j, annotation_threshold);
}

// ---------------------------------------------------------------------------
// Score series
// ---------------------------------------------------------------------------

inline Json to_json(const TrackedScoreSeries& s) {
    return Json{{"object_id", s.object_id},
                {"lighting", std::string(to_string(s.lighting))},
                {"motion", std::string(to_string(s.motion))},
                {"patched_scores", s.patched_scores},
                {"clean_scores", s.clean_scores}};
}

inline TrackedScoreSeries series_from_json(const Json& j) {
    TrackedScoreSeries s;
    s.object_id = j.at("object_id").get<std::string>();
    s.lighting = parse_lighting(j.at("lighting").get<std::string>());
    s.motion = parse_motion(j.at("motion").get<std::string>());
    s.patched_scores = j.at("patched_scores").get<std::vector<double>>();
    s.clean_scores = j.at("clean_scores").get<std::vector<double>>();
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Patch
// ---------------------------------------------------------------------------

inline Json to_json(const Patch& p) {
    Json pieces = Json::array();
    for (const auto& img : p.pieces()) pieces.push_back(img.values());
    return Json{{"design", std::string(to_string(p.design()))},
                {"width", p.dims().width},
                {"height", p.dims().height},
                {"width_mm", p.dims().width_mm},
                {"height_mm", p.dims().height_mm},
                {"pieces", pieces}};
}

inline Patch patch_from_json(const Json& j) {
    const auto design = parse_design(j.at("design").get<std::string>());
    PieceDims dims{j.at("width").get<int>(), j.at("height").get<int>(), j.at("width_mm").get<double>(),
                   j.at("height_mm").get<double>()};
    std::vector<Image> pieces;
    for (const auto& arr : j.at("pieces")) {
        Image img(3, dims.height, dims.width);
        const auto v = arr.get<std::vector<double>>();
        if (v.size() != img.size()) throw ValidationError("patch piece has the wrong number of values");
        img.values() = v;
        pieces.push_back(std::move(img));
    }
    return Patch(design, dims, std::move(pieces));
}

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}
template <class T>
void put(std::string& out, T v) {
    put_bytes(out, &v, sizeof(T));
}
inline void put_string(std::string& out, const std::string& s) {
    put(out, static_cast<std::uint64_t>(s.size()));
    out.append(s);
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
    template <class T>
    T get() {
        T v{};
        need(sizeof(T));
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint64_t>();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void get_doubles(std::vector<double>& out) {
        need(out.size() * sizeof(double));
        std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(double));
        pos_ += out.size() * sizeof(double);
    }
    void expect_magic(const char* magic) {
        need(4);
        if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0) throw ValidationError("not a " + what_ + " file");
        pos_ += 4;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw ValidationError("truncated " + what_ + " file");
    }
    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline void put_patch(std::string& out, const Patch& p) {
    put(out, static_cast<std::uint8_t>(p.design() == PatchDesign::On ? 0 : 1));
    put(out, static_cast<std::int32_t>(p.dims().width));
    put(out, static_cast<std::int32_t>(p.dims().height));
    put(out, p.dims().width_mm);
    put(out, p.dims().height_mm);
    put(out, static_cast<std::uint32_t>(p.piece_count()));
    for (const auto& img : p.pieces()) put_bytes(out, img.values().data(), img.size() * sizeof(double));
}

inline Patch get_patch(ByteReader& in) {
    const auto design = in.get<std::uint8_t>() == 0 ? PatchDesign::On : PatchDesign::Off;
    PieceDims dims;
    dims.width = in.get<std::int32_t>();
    dims.height = in.get<std::int32_t>();
    dims.width_mm = in.get<double>();
    dims.height_mm = in.get<double>();
    const auto n = in.get<std::uint32_t>();
    if (dims.width < 1 || dims.height < 1 || dims.width > 100000 || dims.height > 100000 || n > 3)
        throw ValidationError("corrupt patch header");
    std::vector<Image> pieces;
    for (std::uint32_t i = 0; i < n; ++i) {
        Image img(3, dims.height, dims.width);
        in.get_doubles(img.values());
        pieces.push_back(std::move(img));
    }
    return Patch(design, dims, std::move(pieces));
}

}  // namespace detail

/// Binary patch container: "APPT", u32 version, design, dims, raw doubles.
inline std::string encode_patch(const Patch& p) {
    std::string out = "APPT";
    detail::put(out, std::uint32_t{1});
    detail::put_patch(out, p);
    return out;
}

inline Patch decode_patch(const std::string& bytes) {
    detail::ByteReader in(bytes, "patch");
    in.expect_magic("APPT");
    if (in.get<std::uint32_t>() != 1) throw ValidationError("unsupported patch file version");
    return detail::get_patch(in);
}

inline void save_patch(const std::string& path, const Patch& p) { write_file_atomic(path, encode_patch(p)); }
inline Patch load_patch(const std::string& path) { return decode_patch(read_text_file(path)); }

}  // namespace aerialpatch
