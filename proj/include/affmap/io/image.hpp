#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "affmap/core/error.hpp"
#include "affmap/core/tensor.hpp"

namespace affmap {

namespace detail {

inline unsigned char quantize8(double v) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<unsigned char>(q);
}

inline int read_pnm_token(std::ifstream& f) {
    // skip whitespace and '#' comments, then read one non-negative integer
    int c = f.peek();
    while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
        if (c == '#')
            while (f.get() != '\n' && f.good()) {}
        else
            f.get();
        c = f.peek();
    }
    int val = 0;
    require<ConfigError>(f.good() && std::isdigit(c), "malformed PNM header");
    while (std::isdigit(f.peek())) val = val * 10 + (f.get() - '0');
    return val;
}

}  // namespace detail

// Binary PGM (P5), 8-bit. Input: (h,w) or (1,h,w)/(1,1,h,w)-shaped values in
// [0,1]; quantisation happens only here, compute stays in doubles.
inline void write_pgm(const std::filesystem::path& path, const Tensor& img) {
    int h = 0, w = 0;
    if (img.rank() == 2) { h = img.dim(0); w = img.dim(1); }
    else if (img.rank() == 3 && img.dim(0) == 1) { h = img.dim(1); w = img.dim(2); }
    else if (img.rank() == 4 && img.dim(0) == 1 && img.dim(1) == 1) { h = img.dim(2); w = img.dim(3); }
    else fail("write_pgm expects one grayscale image, got shape ", shape_str(img.shape));
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open ", path.string(), " for writing");
    f << "P5\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < img.v.size(); ++i) f.put(static_cast<char>(detail::quantize8(img.v[i])));
    require(f.good(), "write failed for ", path.string());
}

// Binary PPM (P6), 8-bit. Input: (3,h,w) or (1,3,h,w) planar channels in [0,1].
inline void write_ppm(const std::filesystem::path& path, const Tensor& img) {
    int h = 0, w = 0;
    const double* ch[3];
    if (img.rank() == 3 && img.dim(0) == 3) { h = img.dim(1); w = img.dim(2); }
    else if (img.rank() == 4 && img.dim(0) == 1 && img.dim(1) == 3) { h = img.dim(2); w = img.dim(3); }
    else fail("write_ppm expects one 3-channel image, got shape ", shape_str(img.shape));
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < 3; ++c) ch[c] = img.v.data() + c * plane;
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open ", path.string(), " for writing");
    f << "P6\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c) f.put(static_cast<char>(detail::quantize8(ch[c][i])));
    require(f.good(), "write failed for ", path.string());
}

// Reads P5 (→ (1,h,w)) or P6 (→ (3,h,w)), values scaled back to [0,1].
inline Tensor read_pnm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require<ConfigError>(f.good(), "cannot open image ", path.string());
    char magic[2] = {0, 0};
    f.read(magic, 2);
    require<ConfigError>(magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6'),
                         path.string(), " is not a binary PGM/PPM file");
    const bool color = magic[1] == '6';
    const int w = detail::read_pnm_token(f);
    const int h = detail::read_pnm_token(f);
    const int maxval = detail::read_pnm_token(f);
    require<ConfigError>(w >= 1 && h >= 1 && maxval == 255, "unsupported PNM geometry in ",
                         path.string());
    f.get();  // single whitespace after maxval
    const int channels = color ? 3 : 1;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<unsigned char> raw(plane * channels);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require<ConfigError>(f.gcount() == static_cast<std::streamsize>(raw.size()),
                         "truncated pixel data in ", path.string());
    Tensor out({channels, h, w});
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < channels; ++c)
            out.v[c * plane + i] = raw[i * channels + c] / 255.0;
    return out;
}

// Tile a batch (n,c,h,w) into one (c, rows·h, cols·w) grid image, row-major.
inline Tensor tile_images(const Tensor& batch, int cols) {
    require(batch.rank() == 4, "tile_images expects (n,c,h,w)");
    const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    require(cols >= 1, "tile_images: cols must be >= 1");
    const int rows = (n + cols - 1) / cols;
    Tensor grid({c, rows * h, cols * w});
    for (int i = 0; i < n; ++i) {
        const int gy = (i / cols) * h, gx = (i % cols) * w;
        for (int cc = 0; cc < c; ++cc)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    grid.v[(static_cast<std::size_t>(cc) * rows * h + gy + y) * cols * w + gx + x] =
                        batch.at4(i, cc, y, x);
    }
    return grid;
}

}  // namespace affmap
