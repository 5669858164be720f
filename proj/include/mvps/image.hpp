#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mvps::img {

// 8-bit image, row-major interleaved HWC. channels is 1 (gray / class ids)
// or 3 (RGB).
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<uint8_t> data;

    Image() = default;
    Image(int h, int w, int c, uint8_t fill = 0)
        : height(h), width(w), channels(c),
          data(static_cast<size_t>(h) * w * c, fill) {}

    uint8_t& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    size_t pixel_count() const { return static_cast<size_t>(height) * width; }
    bool empty() const { return data.empty(); }
};

// Strict 8-bit reader: accepts gray and RGB, strips alpha, expands palettes.
// Throws IoError on filesystem failure, SchemaError on unsupported content.
Image read_png(const std::string& path);

// Writes gray (1 channel) or RGB (3 channels) 8-bit PNG.
void write_png(const std::string& path, const Image& image);

// Bilinear resize with +0.5 pixel centers (align_corners = false).
Image resize_bilinear(const Image& image, int out_height, int out_width);

// Box-filter (area-average) resize; exact mean over covered source area.
Image resize_area(const Image& image, int out_height, int out_width);

// Nearest-neighbor resize. The right choice for class-id maps, where any
// interpolation would invent labels.
Image resize_nearest(const Image& image, int out_height, int out_width);

enum class ResizeFilter { Bilinear, Area };

Image resize(const Image& image, int out_height, int out_width, ResizeFilter filter);

// Parses "bilinear" / "area"; throws SchemaError otherwise.
ResizeFilter parse_resize_filter(const std::string& name);

}  // namespace mvps::img
