// SPDX-License-Identifier: Apache-2.0
#pragma once

// 8-bit PNG/JPEG files <-> unit-interval Image. PNG writing can attach a
// physical resolution (pHYs) and text chunks.

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aerialpatch/error.hpp"
#include "aerialpatch/image.hpp"

namespace aerialpatch {

struct PngMetadata {
    /// Pixels per metre, written as a pHYs chunk when set.
    std::optional<std::uint32_t> pixels_per_metre;
    std::map<std::string, std::string> text;
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw ValidationError("cannot open " + path);
    return f;
}

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
}

inline Image from_interleaved(const std::vector<std::uint8_t>& rgb, int width, int height, int channels) {
    Image img(3, height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                const int src = channels >= 3 ? c : 0;
                img.at(c, y, x) = rgb[(static_cast<std::size_t>(y) * width + x) * channels + src] / 255.0;
            }
    return img;
}

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    if (what) *what = msg;
    png_longjmp(png, 1);
}

struct PngReadResult {
    Image image;
    PngMetadata meta;
};

inline PngReadResult read_png(const std::string& path) {
    auto f = open_file(path, "rb");
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, nullptr);
    if (!png) throw Error("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> buf;
    std::vector<png_bytep> rows;
    PngReadResult out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError("unreadable PNG " + path + ": " + err);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = png_get_channels(png, info);
    buf.resize(static_cast<std::size_t>(w) * h * ch);
    rows.resize(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, info);
    png_uint_32 rx = 0, ry = 0;
    int unit = 0;
    if (png_get_pHYs(png, info, &rx, &ry, &unit) && unit == PNG_RESOLUTION_METER) out.meta.pixels_per_metre = rx;
    png_textp text = nullptr;
    int n_text = 0;
    png_get_text(png, info, &text, &n_text);
    for (int i = 0; i < n_text; ++i) out.meta.text[text[i].key] = std::string(text[i].text, text[i].text_length);
    png_destroy_read_struct(&png, &info, nullptr);
    out.image = from_interleaved(buf, w, h, ch);
    return out;
}

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline Image read_jpeg(const std::string& path) {
    auto f = open_file(path, "rb");
    jpeg_decompress_struct cinfo;
    JpegError jerr;
    cinfo.err = jpeg_std_error(&jerr.mgr);
    jerr.mgr.error_exit = [](j_common_ptr c) {
        auto* e = reinterpret_cast<JpegError*>(c->err);
        (*c->err->format_message)(c, e->message);
        std::longjmp(e->jump, 1);
    };
    std::vector<std::uint8_t> buf;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw ValidationError("unreadable JPEG " + path + ": " + jerr.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
    const int ch = cinfo.output_components;
    buf.resize(static_cast<std::size_t>(w) * h * ch);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * ch;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_interleaved(buf, w, h, ch);
}

}  // namespace detail

/// PNG pixels together with their pHYs and tEXt metadata.
using PngReadResult = detail::PngReadResult;
inline PngReadResult read_png(const std::string& path) { return detail::read_png(path); }

inline bool is_image_file(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

/// Reads a PNG or JPEG (sniffed from the file signature) as 3 channels in [0,1].
inline Image read_image(const std::string& path) {
    unsigned char sig[8] = {};
    {
        auto f = detail::open_file(path, "rb");
        if (std::fread(sig, 1, sizeof sig, f.get()) < 3) throw ValidationError("unreadable image " + path);
    }
    if (png_sig_cmp(sig, 0, 8) == 0) return detail::read_png(path).image;
    if (sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return detail::read_jpeg(path);
    throw ValidationError("unsupported image format " + path);
}

inline PngMetadata read_png_metadata(const std::string& path) { return detail::read_png(path).meta; }

/// Writes an 8-bit RGB PNG through a temporary file.
inline void write_png(const std::string& path, const Image& img, const PngMetadata& meta = {}) {
    if (img.channels() != 3) throw ValidationError("PNG output needs 3 channels");
    const std::string tmp = path + ".tmp";
    {
        detail::FilePtr f(std::fopen(tmp.c_str(), "wb"));
        if (!f) throw Error("cannot write " + path);
        std::string err;
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_fail, nullptr);
        if (!png) throw Error("libpng initialisation failed");
        png_infop info = png_create_info_struct(png);
        const int w = img.width(), h = img.height();
        std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
        std::vector<std::string> keys, values;
        std::vector<png_text> texts;
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw Error("failed writing " + path + ": " + err);
        }
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        if (meta.pixels_per_metre)
            png_set_pHYs(png, info, *meta.pixels_per_metre, *meta.pixels_per_metre, PNG_RESOLUTION_METER);
        for (const auto& [k, v] : meta.text) {
            keys.push_back(k);
            values.push_back(v);
        }
        for (std::size_t i = 0; i < keys.size(); ++i) {
            png_text t{};
            t.compression = PNG_TEXT_COMPRESSION_NONE;
            t.key = keys[i].data();
            t.text = values[i].data();
            t.text_length = values[i].size();
            texts.push_back(t);
        }
        if (!texts.empty()) png_set_text(png, info, texts.data(), static_cast<int>(texts.size()));
        png_write_info(png, info);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = detail::to_byte(img.at(c, y, x));
            png_write_row(png, row.data());
        }
        png_write_end(png, info);
        png_destroy_write_struct(&png, &info);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move " + tmp + " to " + path);
}

}  // namespace aerialpatch
