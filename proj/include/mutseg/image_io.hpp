#pragma once

// 8-bit PNG/PGM/PPM reading and writing, 16-bit PNG for disparity maps.
// Requires libpng at link time.

#include <png.h>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mutseg/core.hpp"

namespace mutseg {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::string lowercase_extension(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos)
        return {};
    std::string ext = path.substr(dot + 1);
    for (char& c : ext)
        c = char(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

struct PngReadResult {
    int width = 0, height = 0, channels = 0, bit_depth = 0;
    std::vector<std::uint8_t> bytes;  // rows packed, big-endian for 16-bit
};

// Decodes a PNG keeping 16-bit samples when `keep16`, otherwise reducing to
// 8-bit gray or RGB (alpha stripped, palettes expanded).
inline PngReadResult read_png_raw(const std::string& path, bool keep16) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file)
        throw Error("cannot open image: " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw Error("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        throw Error("libpng initialization failed: " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("libpng initialization failed: " + path);
    }
    PngReadResult result;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("corrupt PNG file: " + path);
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color_type = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_strip_alpha(png);
    if (!keep16 && depth == 16)
        png_set_strip_16(png);
    png_read_update_info(png, info);

    result.width = int(png_get_image_width(png, info));
    result.height = int(png_get_image_height(png, info));
    result.channels = png_get_channels(png, info);
    result.bit_depth = png_get_bit_depth(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    result.bytes.resize(row_bytes * result.height);
    rows.resize(result.height);
    for (int y = 0; y < result.height; ++y)
        rows[y] = result.bytes.data() + row_bytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return result;
}

inline void write_png_raw(const std::string& path, int width, int height, int channels, int bit_depth,
                          const std::vector<std::uint8_t>& bytes) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file)
        throw Error("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        throw Error("libpng initialization failed: " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("libpng initialization failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("failed writing PNG: " + path);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, bit_depth, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // fixed header: no time chunk, so identical inputs give identical files
    png_write_info(png, info);
    const std::size_t row_bytes = std::size_t(width) * channels * (bit_depth / 8);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(bytes.data() + row_bytes * y));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(file.get()) != 0)
        throw Error("failed writing PNG: " + path);
}

// Whitespace/comment skipping token reader for PNM headers.
inline bool pnm_token(std::istream& in, std::string& token) {
    token.clear();
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (!std::isspace(c)) {
            token.push_back(char(c));
            break;
        }
    }
    while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#')
        token.push_back(char(in.get()));
    return !token.empty();
}

inline int pnm_int(std::istream& in, const std::string& path) {
    std::string t;
    if (!pnm_token(in, t))
        throw Error("truncated PNM header: " + path);
    try {
        std::size_t used = 0;
        const int v = std::stoi(t, &used);
        if (used != t.size() || v < 0)
            throw Error("");
        return v;
    } catch (...) {
        throw Error("malformed PNM header value '" + t + "': " + path);
    }
}

inline Image read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open image: " + path);
    std::string magic;
    if (!pnm_token(in, magic) || (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6"))
        throw Error("unsupported PNM type: " + path);
    const int w = pnm_int(in, path), h = pnm_int(in, path), maxval = pnm_int(in, path);
    if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16))
        throw Error("invalid PNM dimensions: " + path);
    if (maxval != 255)
        throw Error("only 8-bit PNM (maxval 255) is supported: " + path);
    const int channels = (magic == "P3" || magic == "P6") ? 3 : 1;
    Image image(w, h, channels);
    auto data = image.data();
    if (magic == "P5" || magic == "P6") {
        in.get();  // single whitespace after maxval
        if (!in.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size())))
            throw Error("truncated PNM data: " + path);
    } else {
        for (auto& v : data) {
            const int x = pnm_int(in, path);
            if (x > 255)
                throw Error("PNM sample out of range: " + path);
            v = std::uint8_t(x);
        }
    }
    return image;
}

}  // namespace detail

/// Loads an 8-bit gray or RGB image from PNG, PGM or PPM.
inline Image read_image(const std::string& path) {
    const std::string ext = detail::lowercase_extension(path);
    if (ext == "pgm" || ext == "ppm" || ext == "pnm")
        return detail::read_pnm(path);
    const auto raw = detail::read_png_raw(path, false);
    if (raw.channels != 1 && raw.channels != 3)
        throw Error("unsupported channel count " + std::to_string(raw.channels) + ": " + path);
    Image image(raw.width, raw.height, raw.channels);
    std::copy(raw.bytes.begin(), raw.bytes.end(), image.data().begin());
    return image;
}

inline void write_png(const std::string& path, const Image& image) {
    std::vector<std::uint8_t> bytes(image.data().begin(), image.data().end());
    detail::write_png_raw(path, image.width(), image.height(), image.channels(), 8, bytes);
}

inline void write_pnm(const std::string& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write image: " + path);
    out << (image.channels() == 1 ? "P5" : "P6") << "\n" << image.width() << " " << image.height() << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.data().data()), std::streamsize(image.data().size()));
    if (!out)
        throw Error("failed writing image: " + path);
}

/// Writes PNG or PNM depending on the extension.
inline void write_image(const std::string& path, const Image& image) {
    const std::string ext = detail::lowercase_extension(path);
    if (ext == "pgm" || ext == "ppm" || ext == "pnm")
        write_pnm(path, image);
    else
        write_png(path, image);
}

inline void write_png16(const std::string& path, const Grid<std::uint16_t>& values) {
    std::vector<std::uint8_t> bytes(values.size() * 2);
    for (std::size_t i = 0; i < values.size(); ++i) {
        bytes[2 * i] = std::uint8_t(values[i] >> 8);
        bytes[2 * i + 1] = std::uint8_t(values[i] & 0xff);
    }
    detail::write_png_raw(path, values.width(), values.height(), 1, 16, bytes);
}

/// Reads a single-channel 16-bit PNG (8-bit files are widened).
inline Grid<std::uint16_t> read_png16(const std::string& path) {
    const auto raw = detail::read_png_raw(path, true);
    if (raw.channels != 1)
        throw Error("expected a single-channel PNG: " + path);
    Grid<std::uint16_t> values(raw.width, raw.height);
    for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = raw.bit_depth == 16 ? std::uint16_t(raw.bytes[2 * i] << 8 | raw.bytes[2 * i + 1]) : raw.bytes[i];
    return values;
}

/// Binarizes at 128 (channel max for color masks).
inline SegmentationLabeling mask_from_image(const Image& image) {
    SegmentationLabeling mask(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) {
            int v = 0;
            for (int c = 0; c < image.channels(); ++c)
                v = std::max<int>(v, image.at(x, y, c));
            mask.labels(x, y) = v >= 128 ? 1 : 0;
        }
    return mask;
}

inline Image mask_to_image(const SegmentationLabeling& mask) {
    Image image(mask.width(), mask.height(), 1);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            image.at(x, y) = mask.labels(x, y) ? 255 : 0;
    return image;
}

inline SegmentationLabeling read_mask(const std::string& path) { return mask_from_image(read_image(path)); }

inline void write_mask(const std::string& path, const SegmentationLabeling& mask) {
    write_png(path, mask_to_image(mask));
}

}  // namespace mutseg
