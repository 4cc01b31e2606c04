#include "image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace dwtnet {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Tensor read_png_rgb8(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image: " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw IoError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failure");
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<png_byte> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("PNG decode error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_set_strip_16(png);
    png_read_update_info(png, info);

    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    const size_t stride = png_get_rowbytes(png, info);
    pixels.resize(stride * h);
    row_ptrs.resize(h);
    for (int i = 0; i < h; ++i) row_ptrs[i] = &pixels[stride * i];
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor out = Tensor::zeros({3, h, w});
    auto& d = out.mutable_data();
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c)
                d[(static_cast<size_t>(c) * h + i) * w + j] =
                    pixels[stride * i + static_cast<size_t>(j) * 3 + c] / 255.0;
    return out;
}

namespace {

void write_png_raw(const std::string& path, const std::vector<png_byte>& pixels, int h, int w,
                   int color_type) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open image for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encode error: " + path);
    }
    const int comps = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int i = 0; i < h; ++i)
        png_write_row(png, const_cast<png_bytep>(&pixels[static_cast<size_t>(i) * w * comps]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray8(const std::string& path, const Tensor& img01) {
    int h = 0, w = 0;
    if (img01.ndim() == 3 && img01.extent(0) == 1) {
        h = img01.extent(1);
        w = img01.extent(2);
    } else if (img01.ndim() == 2) {
        h = img01.extent(0);
        w = img01.extent(1);
    } else {
        throw DimensionError("write_png_gray8 expects 1 x H x W or H x W");
    }
    std::vector<png_byte> pixels(static_cast<size_t>(h) * w);
    for (int i = 0; i < h * w; ++i) {
        double v = std::min(1.0, std::max(0.0, img01.data()[i]));
        pixels[i] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    write_png_raw(path, pixels, h, w, PNG_COLOR_TYPE_GRAY);
}

void write_png_rgb8(const std::string& path, const Tensor& img01) {
    if (img01.ndim() != 3 || img01.extent(0) != 3)
        throw DimensionError("write_png_rgb8 expects a 3 x H x W image");
    const int h = img01.extent(1), w = img01.extent(2);

    std::vector<png_byte> pixels(static_cast<size_t>(h) * w * 3);
    const auto& d = img01.data();
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c) {
                double v = d[(static_cast<size_t>(c) * h + i) * w + j];
                v = std::min(1.0, std::max(0.0, v));
                pixels[(static_cast<size_t>(i) * w + j) * 3 + c] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
    write_png_raw(path, pixels, h, w, PNG_COLOR_TYPE_RGB);
}

}  // namespace dwtnet
