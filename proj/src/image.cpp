#include "segfuse/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace segfuse {

std::int64_t BinaryMask::foreground_count() const {
    std::int64_t n = 0;
    for (auto p : pixels) n += p ? 1 : 0;
    return n;
}

BinaryMask threshold_mask(const SoftMask& soft, double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw DomainError("threshold " + std::to_string(threshold) + " outside (0,1)");
    BinaryMask out{soft.width, soft.height, {}};
    out.pixels.resize(soft.values.size());
    for (size_t i = 0; i < soft.values.size(); ++i)
        out.pixels[i] = soft.values[i] >= threshold ? 1 : 0;
    return out;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({3, img.height, img.width}, 0.0);
    auto& d = t.data();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                d[(static_cast<size_t>(c) * img.height + y) * img.width + x] =
                    img.at(x, y, c) / 255.0;
    return t;
}

Tensor mask_to_tensor(const BinaryMask& mask) {
    Tensor t({mask.height, mask.width}, 0.0);
    for (size_t i = 0; i < mask.pixels.size(); ++i) t.data()[i] = mask.pixels[i] ? 1.0 : 0.0;
    return t;
}

SoftMask soft_mask_from_tensor(const Tensor& probs) {
    Shape s = probs.shape();
    int h, w;
    if (s.size() == 2) {
        h = s[0];
        w = s[1];
    } else if (s.size() == 3 && s[0] == 1) {
        h = s[1];
        w = s[2];
    } else {
        throw ShapeError("soft_mask_from_tensor expects [H,W] or [1,H,W], got " + shape_str(s));
    }
    SoftMask out{w, h, probs.data()};
    return out;
}

SoftMask soft_from_binary(const BinaryMask& mask) {
    SoftMask out{mask.width, mask.height, {}};
    out.values.resize(mask.pixels.size());
    for (size_t i = 0; i < mask.pixels.size(); ++i) out.values[i] = mask.pixels[i] ? 1.0 : 0.0;
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::string& path, int width, int height, int color_type,
               const std::uint8_t* data, int channels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(data + static_cast<size_t>(y) * width * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png(const std::string& path, int& width, int& height,
                                   bool want_rgb) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open for reading: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (want_rgb) {
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
    } else {
        if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
            color == PNG_COLOR_TYPE_PALETTE)
            png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    png_read_update_info(png, info);
    const int channels = want_rgb ? 3 : 1;
    std::vector<std::uint8_t> data(static_cast<size_t>(width) * height * channels);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = data.data() + static_cast<size_t>(y) * width * channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return data;
}

}  // namespace

void write_png_rgb(const std::string& path, const Image& img) {
    write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, img.pixels.data(), 3);
}

Image read_png_rgb(const std::string& path) {
    Image img;
    img.pixels = read_png(path, img.width, img.height, true);
    return img;
}

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& gray) {
    write_png(path, width, height, PNG_COLOR_TYPE_GRAY, gray.data(), 1);
}

std::vector<std::uint8_t> read_png_gray(const std::string& path, int& width, int& height) {
    return read_png(path, width, height, false);
}

void write_mask_png(const std::string& path, const BinaryMask& mask) {
    std::vector<std::uint8_t> gray(mask.pixels.size());
    for (size_t i = 0; i < gray.size(); ++i) gray[i] = mask.pixels[i] ? 255 : 0;
    write_png_gray(path, mask.width, mask.height, gray);
}

BinaryMask read_mask_png(const std::string& path) {
    BinaryMask mask;
    const auto gray = read_png_gray(path, mask.width, mask.height);
    mask.pixels.resize(gray.size());
    for (size_t i = 0; i < gray.size(); ++i) mask.pixels[i] = gray[i] >= 128 ? 1 : 0;
    return mask;
}

void write_soft_mask_png(const std::string& path, const SoftMask& soft) {
    std::vector<std::uint8_t> gray(soft.values.size());
    for (size_t i = 0; i < gray.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, soft.values[i]));
        gray[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    write_png_gray(path, soft.width, soft.height, gray);
}

}  // namespace segfuse
