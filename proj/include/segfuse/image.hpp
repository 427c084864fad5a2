#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segfuse/tensor.hpp"

namespace segfuse {

// 8-bit RGB image, row-major, interleaved channels.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 3 * width * height

    std::uint8_t& at(int x, int y, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    std::uint8_t at(int x, int y, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

// Per-pixel foreground/background labeling, values in {0,1}.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
    std::int64_t foreground_count() const;
};

// Per-pixel foreground probability in [0,1].
struct SoftMask {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
};

// pixel = 1 iff value >= threshold
BinaryMask threshold_mask(const SoftMask& soft, double threshold);

Tensor image_to_tensor(const Image& img);              // [3,H,W], values in [0,1]
Tensor mask_to_tensor(const BinaryMask& mask);         // [H,W], {0,1}
SoftMask soft_mask_from_tensor(const Tensor& probs);   // [H,W] or [1,H,W]
SoftMask soft_from_binary(const BinaryMask& mask);

// PNG I/O. Masks are written 0/255; soft masks 0..255 rounded.
void write_png_rgb(const std::string& path, const Image& img);
Image read_png_rgb(const std::string& path);
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& gray);
std::vector<std::uint8_t> read_png_gray(const std::string& path, int& width, int& height);

void write_mask_png(const std::string& path, const BinaryMask& mask);
BinaryMask read_mask_png(const std::string& path);
void write_soft_mask_png(const std::string& path, const SoftMask& soft);

}  // namespace segfuse
