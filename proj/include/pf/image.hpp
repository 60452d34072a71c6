#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pf/tensor.hpp"

namespace pf {

// 8-bit raster image, row-major, interleaved channels (1 = grayscale,
// 3 = RGB).
struct PageImage {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t& at(int x, int y, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    static PageImage create(int width, int height, int channels, std::uint8_t fill = 0);
};

// Minimal PNG codec (8-bit, non-interlaced; gray / RGB / gray+alpha / RGBA on
// read, alpha dropped; gray / RGB on write). Deflate via zlib.
PageImage read_png(const std::string& path);
void write_png(const PageImage& img, const std::string& path);

// [0,255] bytes <-> [-1,1] floats, CxHxW. A 3-channel image requested as one
// channel is collapsed with Rec.601 luma; a grayscale image requested as
// three channels is replicated.
Tensor image_to_tensor(const PageImage& img, int out_channels);
PageImage tensor_to_image(const Tensor& t);

}  // namespace pf
