#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <string>
#include <vector>

#include "advsyn/errors.hpp"
#include "advsyn/tensor.hpp"

namespace advsyn {

// 8-bit grayscale raster, the on-disk currency (binary PGM, "P5").
struct RawImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;  // row-major, height*width

    double at(int y, int x) const {
        return static_cast<double>(pixels[static_cast<size_t>(y) * width + x]);
    }
};

namespace detail {

// Reads one PNM header token, skipping whitespace and '#' comments.
inline std::string pnm_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    if (tok.empty()) throw DataError("pgm: truncated header in " + path);
    return tok;
}

}  // namespace detail

inline RawImage load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("pgm: cannot open " + path);
    std::string magic = detail::pnm_token(in, path);
    if (magic != "P5") throw DataError("pgm: " + path + " is not a binary PGM (P5) file");
    const long w = std::stol(detail::pnm_token(in, path));
    const long h = std::stol(detail::pnm_token(in, path));
    const long maxval = std::stol(detail::pnm_token(in, path));
    if (w <= 0 || h <= 0) throw DataError("pgm: bad dimensions in " + path);
    if (maxval != 255) {
        throw DataError("pgm: unsupported depth (maxval " + std::to_string(maxval) + ") in " +
                        path + "; only 8-bit (255) is supported");
    }
    RawImage img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.pixels.resize(static_cast<size_t>(w) * static_cast<size_t>(h));
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
        throw DataError("pgm: truncated pixel data in " + path);
    }
    return img;
}

// Canonical writer: "P5\n<w> <h>\n255\n" + raster, so save/load/save is
// byte-identical.
inline void save_pgm(const std::string& path, const RawImage& img) {
    if (img.height <= 0 || img.width <= 0 ||
        img.pixels.size() != static_cast<size_t>(img.height) * static_cast<size_t>(img.width)) {
        throw DataError("pgm: inconsistent image dimensions for " + path);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("pgm: cannot write " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw DataError("pgm: write failed for " + path);
}

// [0,255] byte -> [-1,1]: p/127.5 - 1. Output tensor is [1,H,W].
inline Tensor raw_to_unit(const RawImage& img) {
    Tensor t({1, img.height, img.width});
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        t[static_cast<int64_t>(i)] = static_cast<double>(img.pixels[i]) / 127.5 - 1.0;
    }
    return t;
}

// [-1,1] -> byte: round((p+1)*127.5), clamped. Rounding is half away from
// zero (llround), fixed here so emitted files are platform-stable.
inline RawImage unit_to_raw(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 1) {
        throw ShapeError("unit_to_raw: expected [1,H,W], got " + t.shape_string());
    }
    RawImage img;
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.pixels.resize(static_cast<size_t>(t.size()));
    for (int64_t i = 0; i < t.size(); ++i) {
        const double v = (t[i] + 1.0) * 127.5;
        long b = std::llround(v);
        if (b < 0) b = 0;
        if (b > 255) b = 255;
        img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(b);
    }
    return img;
}

// Corner-aligned bilinear resize of a [1,H,W] (or [C,H,W]) tensor:
// src coordinate of output index i is i*(in-1)/(out-1), and a single-pixel
// axis maps to coordinate 0. Resizing a constant image is exact.
inline Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
    if (src.rank() != 3) {
        throw ShapeError("resize_bilinear: expected [C,H,W], got " + src.shape_string());
    }
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: non-positive output size");
    const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
    Tensor dst({c, out_h, out_w});
    const double sy = out_h > 1 && h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
    const double sx = out_w > 1 && w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
    for (int ch = 0; ch < c; ++ch) {
        const double* sp = src.data() + static_cast<int64_t>(ch) * h * w;
        double* dp = dst.data() + static_cast<int64_t>(ch) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const double fy = y * sy;
            const int y0 = static_cast<int>(fy);
            const int y1 = y0 + 1 < h ? y0 + 1 : y0;
            const double wy = fy - y0;
            for (int x = 0; x < out_w; ++x) {
                const double fx = x * sx;
                const int x0 = static_cast<int>(fx);
                const int x1 = x0 + 1 < w ? x0 + 1 : x0;
                const double wx = fx - x0;
                const double top = sp[static_cast<int64_t>(y0) * w + x0] * (1.0 - wx) +
                                   sp[static_cast<int64_t>(y0) * w + x1] * wx;
                const double bot = sp[static_cast<int64_t>(y1) * w + x0] * (1.0 - wx) +
                                   sp[static_cast<int64_t>(y1) * w + x1] * wx;
                dp[static_cast<int64_t>(y) * out_w + x] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return dst;
}

// Tiles [1,H,W] images into a per_row x per_row grid image (fill -1).
inline Tensor tile_grid(const std::vector<Tensor>& images, int per_row) {
    if (images.empty() || per_row < 1) throw DataError("tile_grid: nothing to tile");
    const int h = images[0].dim(1), w = images[0].dim(2);
    const int rows = (static_cast<int>(images.size()) + per_row - 1) / per_row;
    Tensor grid = Tensor::full({1, rows * h, per_row * w}, -1.0);
    for (size_t i = 0; i < images.size(); ++i) {
        const Tensor& img = images[i];
        if (img.dim(1) != h || img.dim(2) != w) {
            throw ShapeError("tile_grid: images must share one size");
        }
        const int gy = static_cast<int>(i) / per_row * h;
        const int gx = static_cast<int>(i) % per_row * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                grid[static_cast<int64_t>(gy + y) * (per_row * w) + (gx + x)] =
                    img[static_cast<int64_t>(y) * w + x];
            }
        }
    }
    return grid;
}

}  // namespace advsyn
