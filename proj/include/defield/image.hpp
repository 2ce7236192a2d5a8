#pragma once

#include "defield/common.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace defield {

/// RGB image, row-major, interleaved channels in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0f) {}

    float& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Single-channel float map (depth), row-major.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<float> values;

    DepthMap() = default;
    DepthMap(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0f) {}

    float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_fn(png_structp png, png_const_charp msg) {
    *static_cast<std::string*>(png_get_error_ptr(png)) = msg;
    png_longjmp(png, 1);
}
inline void png_warn_fn(png_structp, png_const_charp) {}
}  // namespace detail

inline std::uint8_t to_u8(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw DataError("cannot open " + path.string() + " for writing");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warn_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialization failed for " + path.string());
    }
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("writing " + path.string() + ": " + err);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width * 3; ++x)
            row[static_cast<std::size_t>(x)] = to_u8(img.rgb[static_cast<std::size_t>(y) * img.width * 3 + x]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Image read_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw DataError("cannot open " + path.string());
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warn_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng initialization failed for " + path.string());
    }
    Image img;
    std::vector<std::uint8_t> row;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("reading " + path.string() + ": " + err);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    img = Image(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)));
    row.resize(png_get_rowbytes(png, info));
    for (int y = 0; y < img.height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < img.width * 3; ++x)
            img.rgb[static_cast<std::size_t>(y) * img.width * 3 + x] = row[static_cast<std::size_t>(x)] / 255.0f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

/// Flat little-endian float32 array plus `<path>.json` with {width, height}.
inline void write_depth(const std::filesystem::path& path, const DepthMap& d) {
    static_assert(std::endian::native == std::endian::little, "depth files assume a little-endian host");
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot open " + path.string() + " for writing");
        out.write(reinterpret_cast<const char*>(d.values.data()),
                  static_cast<std::streamsize>(d.values.size() * sizeof(float)));
        if (!out) throw DataError("short write to " + path.string());
    }
    std::ofstream side(path.string() + ".json");
    if (!side) throw DataError("cannot write sidecar for " + path.string());
    side << nlohmann::json{{"width", d.width}, {"height", d.height}}.dump() << '\n';
}

inline DepthMap read_depth(const std::filesystem::path& path) {
    std::ifstream side(path.string() + ".json");
    if (!side) throw DataError("missing sidecar " + path.string() + ".json");
    nlohmann::json meta;
    try {
        side >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ".json: " + e.what());
    }
    DepthMap d(meta.at("width").get<int>(), meta.at("height").get<int>());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    in.read(reinterpret_cast<char*>(d.values.data()), static_cast<std::streamsize>(d.values.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(d.values.size() * sizeof(float)))
        throw DataError(path.string() + ": file shorter than width*height floats");
    return d;
}

}  // namespace defield
