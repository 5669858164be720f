#include "mvps/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "mvps/errors.hpp"

namespace mvps::img {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Image read_png(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open for reading: " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw SchemaError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw SchemaError("corrupt PNG: " + path);
    }

    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw SchemaError("unsupported channel count " + std::to_string(channels) + ": " + path);
    }

    Image out(static_cast<int>(h), static_cast<int>(w), channels);
    std::vector<png_bytep> rows(h);
    const size_t stride = static_cast<size_t>(w) * channels;
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = out.data.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const std::string& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3)
        throw SchemaError("write_png expects 1 or 3 channels, got " + std::to_string(image.channels));
    if (image.height <= 0 || image.width <= 0)
        throw SchemaError("write_png: empty image");

    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path);
    }

    png_init_io(png, file.get());
    const int color_type = image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, image.width, image.height, 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_bytep> rows(image.height);
    const size_t stride = static_cast<size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y)
        rows[y] = const_cast<png_bytep>(image.data.data() + y * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image resize_bilinear(const Image& image, int out_height, int out_width) {
    if (image.empty()) throw SchemaError("resize_bilinear: empty image");
    Image out(out_height, out_width, image.channels);
    const double sy = static_cast<double>(image.height) / out_height;
    const double sx = static_cast<double>(image.width) / out_width;
    for (int y = 0; y < out_height; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(src_y)), 0, image.height - 1);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double fy = std::clamp(src_y - y0, 0.0, 1.0);
        for (int x = 0; x < out_width; ++x) {
            const double src_x = (x + 0.5) * sx - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(src_x)), 0, image.width - 1);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double fx = std::clamp(src_x - x0, 0.0, 1.0);
            for (int c = 0; c < image.channels; ++c) {
                const double top = image.at(y0, x0, c) * (1.0 - fx) + image.at(y0, x1, c) * fx;
                const double bot = image.at(y1, x0, c) * (1.0 - fx) + image.at(y1, x1, c) * fx;
                const double val = top * (1.0 - fy) + bot * fy;
                out.at(y, x, c) = static_cast<uint8_t>(std::lround(std::clamp(val, 0.0, 255.0)));
            }
        }
    }
    return out;
}

Image resize_area(const Image& image, int out_height, int out_width) {
    if (image.empty()) throw SchemaError("resize_area: empty image");
    Image out(out_height, out_width, image.channels);
    const double sy = static_cast<double>(image.height) / out_height;
    const double sx = static_cast<double>(image.width) / out_width;
    for (int y = 0; y < out_height; ++y) {
        const double y0 = y * sy, y1 = (y + 1) * sy;
        for (int x = 0; x < out_width; ++x) {
            const double x0 = x * sx, x1 = (x + 1) * sx;
            for (int c = 0; c < image.channels; ++c) {
                double acc = 0.0, area = 0.0;
                for (int iy = static_cast<int>(std::floor(y0)); iy < y1 && iy < image.height; ++iy) {
                    const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
                    if (wy <= 0.0) continue;
                    for (int ix = static_cast<int>(std::floor(x0)); ix < x1 && ix < image.width; ++ix) {
                        const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
                        if (wx <= 0.0) continue;
                        acc += wy * wx * image.at(iy, ix, c);
                        area += wy * wx;
                    }
                }
                out.at(y, x, c) = static_cast<uint8_t>(std::lround(std::clamp(acc / area, 0.0, 255.0)));
            }
        }
    }
    return out;
}

Image resize_nearest(const Image& image, int out_height, int out_width) {
    if (image.empty()) throw SchemaError("resize_nearest: empty image");
    Image out(out_height, out_width, image.channels);
    const double sy = static_cast<double>(image.height) / out_height;
    const double sx = static_cast<double>(image.width) / out_width;
    for (int y = 0; y < out_height; ++y) {
        const int iy = std::min(static_cast<int>((y + 0.5) * sy), image.height - 1);
        for (int x = 0; x < out_width; ++x) {
            const int ix = std::min(static_cast<int>((x + 0.5) * sx), image.width - 1);
            for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(iy, ix, c);
        }
    }
    return out;
}

Image resize(const Image& image, int out_height, int out_width, ResizeFilter filter) {
    return filter == ResizeFilter::Area ? resize_area(image, out_height, out_width)
                                        : resize_bilinear(image, out_height, out_width);
}

ResizeFilter parse_resize_filter(const std::string& name) {
    if (name == "bilinear") return ResizeFilter::Bilinear;
    if (name == "area") return ResizeFilter::Area;
    throw SchemaError("unknown resize filter '" + name + "' (expected bilinear or area)");
}

}  // namespace mvps::img
