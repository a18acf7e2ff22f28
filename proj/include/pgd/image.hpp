#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

namespace pgd {

/// Thrown for raster / container file problems.
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Single-channel amplitude image, values in [0, 1], row-major.
struct ImageChip {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * width + j]; }
    double& at(int i, int j) { return values[static_cast<std::size_t>(i) * width + j]; }

    bool in_bounds(int i, int j) const { return i >= 0 && i < height && j >= 0 && j < width; }
};

constexpr int kMinChipDim = 8;

inline void validate_chip(const ImageChip& chip) {
    if (chip.height < kMinChipDim || chip.width < kMinChipDim)
        throw std::invalid_argument("ImageChip: dimensions must be at least 8x8");
    if (chip.values.size() != static_cast<std::size_t>(chip.height) * chip.width)
        throw std::invalid_argument("ImageChip: value buffer does not match dimensions");
    for (double v : chip.values)
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("ImageChip: values must lie in [0, 1]");
}

/// Per-chip min-max normalization to [0, 1]. A constant image maps to all
/// zeros. Idempotent: normalizing twice equals normalizing once.
inline ImageChip normalize_minmax(ImageChip chip) {
    if (chip.values.empty())
        return chip;
    auto [lo_it, hi_it] = std::minmax_element(chip.values.begin(), chip.values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi <= lo) {
        std::fill(chip.values.begin(), chip.values.end(), 0.0);
        return chip;
    }
    const double inv = 1.0 / (hi - lo);
    for (double& v : chip.values)
        v = (v - lo) * inv;
    return chip;
}

namespace detail {

inline int pgm_next_token(std::istream& in, std::string& tok) {
    tok.clear();
    int c = in.get();
    while (c != EOF) {
        if (c == '#') { // comment runs to end of line
            while (c != EOF && c != '\n')
                c = in.get();
        } else if (std::isspace(c)) {
            if (!tok.empty())
                return 0;
        } else {
            tok.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return tok.empty() ? -1 : 0;
}

inline ImageChip load_pgm(std::istream& in, const std::string& path) {
    std::string tok;
    if (pgm_next_token(in, tok) != 0 || tok != "P5")
        throw io_error(path + ": not a P5 PGM");
    auto read_int = [&](const char* what) {
        if (pgm_next_token(in, tok) != 0)
            throw io_error(path + ": truncated PGM header (" + std::string(what) + ")");
        return std::stol(tok);
    };
    const long w = read_int("width");
    const long h = read_int("height");
    const long maxval = read_int("maxval");
    if (w <= 0 || h <= 0)
        throw io_error(path + ": zero-sized image");
    if (maxval <= 0 || maxval > 65535)
        throw io_error(path + ": unsupported PGM maxval");

    ImageChip chip;
    chip.height = static_cast<int>(h);
    chip.width = static_cast<int>(w);
    chip.values.resize(static_cast<std::size_t>(h) * w);

    const std::size_t n = chip.values.size();
    if (maxval < 256) {
        std::vector<std::uint8_t> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw io_error(path + ": truncated PGM payload");
        for (std::size_t i = 0; i < n; ++i)
            chip.values[i] = buf[i];
    } else {
        std::vector<std::uint8_t> buf(n * 2); // 16-bit PGM samples are big-endian
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 2));
        if (static_cast<std::size_t>(in.gcount()) != n * 2)
            throw io_error(path + ": truncated PGM payload");
        for (std::size_t i = 0; i < n; ++i)
            chip.values[i] = static_cast<double>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }
    return chip;
}

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadCloser() { png_destroy_read_struct(&png, &info, nullptr); }
};

inline ImageChip load_png(std::FILE* fp, const std::string& path) {
    PngReadCloser ctx;
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png)
        throw io_error(path + ": libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info)
        throw io_error(path + ": libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png)))
        throw io_error(path + ": malformed PNG");

    png_init_io(ctx.png, fp);
    png_set_sig_bytes(ctx.png, 0);
    png_read_info(ctx.png, ctx.info);

    const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
    const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
    const int depth = png_get_bit_depth(ctx.png, ctx.info);
    const int color = png_get_color_type(ctx.png, ctx.info);

    if (w == 0 || h == 0)
        throw io_error(path + ": zero-sized image");
    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA)
        throw io_error(path + ": unsupported format (PNG must be grayscale)");

    if (depth < 8)
        png_set_expand_gray_1_2_4_to_8(ctx.png);
    if (color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_strip_alpha(ctx.png);
    png_read_update_info(ctx.png, ctx.info);

    const int out_depth = png_get_bit_depth(ctx.png, ctx.info);
    const std::size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);

    std::vector<std::uint8_t> raster(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 i = 0; i < h; ++i)
        rows[i] = raster.data() + i * rowbytes;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);

    ImageChip chip;
    chip.height = static_cast<int>(h);
    chip.width = static_cast<int>(w);
    chip.values.resize(static_cast<std::size_t>(h) * w);
    for (png_uint_32 i = 0; i < h; ++i) {
        const std::uint8_t* row = rows[i];
        for (png_uint_32 j = 0; j < w; ++j) {
            if (out_depth == 16) // network byte order per PNG spec
                chip.values[static_cast<std::size_t>(i) * w + j] =
                    static_cast<double>((row[2 * j] << 8) | row[2 * j + 1]);
            else
                chip.values[static_cast<std::size_t>(i) * w + j] = row[j];
        }
    }
    return chip;
}

} // namespace detail

/// Load an 8/16-bit grayscale raster (PGM P5 or PNG) and min-max normalize
/// it to [0, 1]. Constant images map to all zeros.
inline ImageChip load_chip(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe)
        throw io_error(path + ": cannot open file");
    char sig[2] = {0, 0};
    probe.read(sig, 2);
    probe.seekg(0);

    ImageChip chip;
    if (sig[0] == 'P' && sig[1] == '5') {
        chip = detail::load_pgm(probe, path);
    } else if (static_cast<unsigned char>(sig[0]) == 0x89 && sig[1] == 'P') {
        probe.close();
        std::FILE* fp = std::fopen(path.c_str(), "rb");
        if (!fp)
            throw io_error(path + ": cannot open file");
        try {
            chip = detail::load_png(fp, path);
        } catch (...) {
            std::fclose(fp);
            throw;
        }
        std::fclose(fp);
    } else {
        throw io_error(path + ": unsupported format (expect PGM P5 or grayscale PNG)");
    }

    if (chip.height < kMinChipDim || chip.width < kMinChipDim)
        throw io_error(path + ": image smaller than 8x8");
    chip = normalize_minmax(std::move(chip));
    validate_chip(chip);
    return chip;
}

/// Write an 8-bit PGM P5, quantizing values with round(v * 255).
inline void save_pgm8(const std::string& path, const ImageChip& chip) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw io_error(path + ": cannot open for writing");
    out << "P5\n" << chip.width << " " << chip.height << "\n255\n";
    std::vector<std::uint8_t> buf(chip.values.size());
    for (std::size_t i = 0; i < chip.values.size(); ++i) {
        const double v = std::clamp(chip.values[i], 0.0, 1.0);
        buf[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out)
        throw io_error(path + ": write failed");
}

/// Write an 8-bit RGB PNG from interleaved rows (3 bytes per pixel).
inline void save_png_rgb8(const std::string& path, int height, int width,
                          const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(height) * width * 3)
        throw std::invalid_argument("save_png_rgb8: buffer does not match dimensions");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp)
        throw io_error(path + ": cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw io_error(path + ": libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw io_error(path + ": PNG write failed");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int i = 0; i < height; ++i)
        png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(i) * width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

} // namespace pgd
