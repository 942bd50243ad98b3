#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "ccdl/errors.hpp"
#include "ccdl/tensor.hpp"

// 8-bit image loading (PGM and PNG). Samples map to [0, 1] by dividing by
// 255; color collapses to luma with the BT.601 weights unless the caller asks
// for the channels.

namespace ccdl {

namespace detail {

// PGM header tokens are whitespace separated and may be interrupted by
// '#' comment lines.
inline std::string pgm_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError("image: truncated PGM header");
    return tok;
}

inline std::size_t pgm_number(std::istream& is, const char* what) {
    std::string tok = pgm_token(is);
    std::size_t v = 0;
    for (char ch : tok) {
        if (ch < '0' || ch > '9')
            throw FormatError(std::string("image: bad PGM ") + what);
        v = v * 10 + static_cast<std::size_t>(ch - '0');
    }
    return v;
}

struct PngReadCtx {
    std::FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadCtx() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteCtx {
    std::FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteCtx() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

}  // namespace detail

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

// Returns [rows][cols] for grayscale files, [C][rows][cols] otherwise.
inline Tensor<double> load_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("image: cannot open '" + path + "'");
    std::string magic = detail::pgm_token(is);
    if (magic != "P5" && magic != "P2")
        throw FormatError("image: '" + path + "' is not a PGM file");
    std::size_t cols = detail::pgm_number(is, "width");
    std::size_t rows = detail::pgm_number(is, "height");
    std::size_t maxval = detail::pgm_number(is, "maxval");
    if (rows == 0 || cols == 0 || maxval == 0 || maxval > 255)
        throw FormatError("image: unsupported PGM geometry in '" + path + "'");
    Tensor<double> img({rows, cols});
    if (magic == "P5") {
        // The maxval is terminated by exactly one whitespace byte, already
        // consumed by pgm_number's tokenizer.
        std::vector<unsigned char> raw(rows * cols);
        is.read(reinterpret_cast<char*>(raw.data()),
                static_cast<std::streamsize>(raw.size()));
        if (static_cast<std::size_t>(is.gcount()) != raw.size())
            throw FormatError("image: truncated PGM payload in '" + path + "'");
        for (std::size_t i = 0; i < raw.size(); ++i)
            img[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
    } else {
        for (std::size_t i = 0; i < rows * cols; ++i) {
            std::size_t v = detail::pgm_number(is, "sample");
            if (v > maxval)
                throw FormatError("image: PGM sample exceeds maxval in '" + path + "'");
            img[i] = static_cast<double>(v) / static_cast<double>(maxval);
        }
    }
    return img;
}

inline void save_pgm(const std::string& path, const Tensor<double>& img) {
    if (img.rank() != 2) throw ParameterError("image: save_pgm expects a 2-D tensor");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("image: cannot open '" + path + "' for writing");
    os << "P5\n" << img.shape(1) << " " << img.shape(0) << "\n255\n";
    std::vector<unsigned char> raw(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        double v = std::clamp(img[i], 0.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(raw.data()),
             static_cast<std::streamsize>(raw.size()));
    if (!os) throw IoError("image: write failed on '" + path + "'");
}

// Returns [rows][cols] when the file is single channel, [3][rows][cols] for
// color. 16-bit depth, palettes and alpha are normalized to 8-bit gray/RGB.
inline Tensor<double> load_png(const std::string& path) {
    detail::PngReadCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "rb");
    if (!ctx.fp) throw IoError("image: cannot open '" + path + "'");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw FormatError("image: '" + path + "' is not a PNG file");
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoError("image: libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoError("image: libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png)))
        throw FormatError("image: libpng failed to decode '" + path + "'");
    png_init_io(ctx.png, ctx.fp);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
    png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
    int color = png_get_color_type(ctx.png, ctx.info);
    int depth = png_get_bit_depth(ctx.png, ctx.info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
        png_set_expand_gray_1_2_4_to_8(ctx.png);
    if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(ctx.png);
    if (depth == 16) png_set_strip_16(ctx.png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(ctx.png);
    png_read_update_info(ctx.png, ctx.info);

    std::size_t channels = png_get_channels(ctx.png, ctx.info);
    if (channels != 1 && channels != 3)
        throw FormatError("image: unsupported PNG channel layout in '" + path + "'");
    std::size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
    std::vector<unsigned char> raw(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = raw.data() + r * rowbytes;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);

    if (channels == 1) {
        Tensor<double> img({h, w});
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c)
                img(r, c) = static_cast<double>(rows[r][c]) / 255.0;
        return img;
    }
    Tensor<double> img({3, h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch)
                img(ch, r, c) = static_cast<double>(rows[r][3 * c + ch]) / 255.0;
    return img;
}

inline void save_png_gray(const std::string& path, const Tensor<double>& img) {
    if (img.rank() != 2)
        throw ParameterError("image: save_png_gray expects a 2-D tensor");
    detail::PngWriteCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "wb");
    if (!ctx.fp) throw IoError("image: cannot open '" + path + "' for writing");
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoError("image: libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoError("image: libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png)))
        throw IoError("image: libpng failed to encode '" + path + "'");
    png_init_io(ctx.png, ctx.fp);
    std::size_t rows = img.shape(0), cols = img.shape(1);
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(cols),
                 static_cast<png_uint_32>(rows), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    std::vector<unsigned char> raw(rows * cols);
    for (std::size_t i = 0; i < img.size(); ++i) {
        double v = std::clamp(img[i], 0.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    std::vector<png_bytep> rp(rows);
    for (std::size_t r = 0; r < rows; ++r) rp[r] = raw.data() + r * cols;
    png_write_image(ctx.png, rp.data());
    png_write_end(ctx.png, nullptr);
}

inline void save_png_rgb(const std::string& path, const Tensor<double>& img) {
    if (img.rank() != 3 || img.shape(0) != 3)
        throw ParameterError("image: save_png_rgb expects a [3][rows][cols] tensor");
    detail::PngWriteCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "wb");
    if (!ctx.fp) throw IoError("image: cannot open '" + path + "' for writing");
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoError("image: libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoError("image: libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png)))
        throw IoError("image: libpng failed to encode '" + path + "'");
    png_init_io(ctx.png, ctx.fp);
    std::size_t rows = img.shape(1), cols = img.shape(2);
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(cols),
                 static_cast<png_uint_32>(rows), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    std::size_t n = rows * cols;
    std::vector<unsigned char> raw(3 * n);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch) {
                double v = std::clamp(img[ch * n + r * cols + c], 0.0, 1.0);
                raw[(r * cols + c) * 3 + ch] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    std::vector<png_bytep> rp(rows);
    for (std::size_t r = 0; r < rows; ++r) rp[r] = raw.data() + r * cols * 3;
    png_write_image(ctx.png, rp.data());
    png_write_end(ctx.png, nullptr);
}

inline Tensor<double> rgb_to_luma(const Tensor<double>& rgb) {
    if (rgb.rank() != 3 || rgb.shape(0) != 3)
        throw ParameterError("image: rgb_to_luma expects a [3][rows][cols] tensor");
    std::size_t rows = rgb.shape(1), cols = rgb.shape(2);
    Tensor<double> y({rows, cols});
    std::size_t n = rows * cols;
    for (std::size_t i = 0; i < n; ++i)
        y[i] = kLumaR * rgb[i] + kLumaG * rgb[n + i] + kLumaB * rgb[2 * n + i];
    return y;
}

inline Tensor<double> load_image(const std::string& path) {
    auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == "pgm") return load_pgm(path);
    if (ext == "png") return load_png(path);
    throw FormatError("image: unsupported file type '" + path + "'");
}

// Stacks K same-shaped images into [K][rows][cols]. Color files collapse to
// luma when grayscale is requested, otherwise the result is [K][3][rows][cols]
// and any grayscale file in the set is an error.
inline Tensor<double> load_images(const std::vector<std::string>& paths,
                                  bool grayscale = true) {
    if (paths.empty()) throw ParameterError("image: no input images");
    std::vector<Tensor<double>> planes;
    planes.reserve(paths.size());
    for (const auto& p : paths) {
        Tensor<double> img = load_image(p);
        if (grayscale && img.rank() == 3) img = rgb_to_luma(img);
        if (!grayscale && img.rank() != 3)
            throw DimensionError("image: '" + p + "' is not a color image");
        planes.push_back(std::move(img));
        if (!planes.front().same_shape(planes.back()))
            throw DimensionError("image: '" + p + "' does not match the first image's shape");
    }
    std::vector<std::size_t> shape;
    shape.push_back(planes.size());
    for (std::size_t d : planes.front().shape()) shape.push_back(d);
    Tensor<double> out(shape);
    std::size_t per = planes.front().size();
    for (std::size_t k = 0; k < planes.size(); ++k)
        std::copy(planes[k].data(), planes[k].data() + per, out.data() + k * per);
    return out;
}

}  // namespace ccdl
