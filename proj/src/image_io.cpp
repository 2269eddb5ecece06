#include "pairlora/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace pairlora {

uint8_t quantize_px(float v) {
    float x = std::clamp(v, -1.0f, 1.0f);
    int q = int(std::lround((double(x) + 1.0) * 127.5));
    return uint8_t(std::clamp(q, 0, 255));
}

float dequantize_px(uint8_t v) { return float(double(v) / 127.5 - 1.0); }

Tensor quantize_image(const Tensor& img) {
    Tensor out = Tensor::zeros(img.shape());
    auto src = img.data();
    auto dst = out.data();
    for (size_t i = 0; i < src.size(); ++i) dst[i] = dequantize_px(quantize_px(src[i]));
    return out;
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

void check_rgb_shape(const Tensor& img, const char* op) {
    if (img.shape().size() != 3 || img.shape()[0] != 3)
        tensor_fail(std::string(op) + ": need [3,H,W], got " + shape_str(img.shape()));
}

}  // namespace

void write_png(const std::string& path, const Tensor& img) {
    check_rgb_shape(img, "write_png");
    int H = img.shape()[1], W = img.shape()[2];
    std::unique_ptr<FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) tensor_fail("write_png: cannot open '" + path + "'");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        tensor_fail("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        tensor_fail("write_png: libpng error writing '" + path + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, png_uint_32(W), png_uint_32(H), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    auto src = img.data();
    size_t plane = size_t(H) * W;
    std::vector<uint8_t> row(size_t(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                row[size_t(x) * 3 + size_t(c)] =
                    quantize_px(src[size_t(c) * plane + size_t(y) * W + size_t(x)]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::string& path) {
    std::unique_ptr<FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) tensor_fail("read_png: cannot open '" + path + "'");
    uint8_t header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
        tensor_fail("read_png: '" + path + "' is not a PNG");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        tensor_fail("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        tensor_fail("read_png: libpng error reading '" + path + "'");
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // normalize anything reasonable to 8-bit RGB
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    png_uint_32 W = png_get_image_width(png, info);
    png_uint_32 H = png_get_image_height(png, info);
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        tensor_fail("read_png: unsupported channel layout in '" + path + "'");
    }
    std::vector<uint8_t> row(size_t(W) * 3);
    Tensor out = Tensor::zeros({3, int(H), int(W)});
    auto dst = out.data();
    size_t plane = size_t(H) * W;
    for (png_uint_32 y = 0; y < H; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                dst[size_t(c) * plane + size_t(y) * W + x] =
                    dequantize_px(row[size_t(x) * 3 + size_t(c)]);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

Tensor make_grid(const std::vector<Tensor>& images, int cols) {
    if (images.empty()) tensor_fail("make_grid: no images");
    check_rgb_shape(images[0], "make_grid");
    int H = images[0].shape()[1], W = images[0].shape()[2];
    for (const auto& im : images)
        if (im.shape() != images[0].shape()) tensor_fail("make_grid: mismatched image shapes");
    cols = std::max(1, std::min(cols, int(images.size())));
    int rows = int((images.size() + size_t(cols) - 1) / size_t(cols));
    int GH = rows * H + (rows - 1), GW = cols * W + (cols - 1);
    Tensor grid = Tensor::filled({3, GH, GW}, 1.0f);
    auto gd = grid.data();
    size_t gplane = size_t(GH) * GW;
    for (size_t idx = 0; idx < images.size(); ++idx) {
        int r = int(idx) / cols, col = int(idx) % cols;
        int oy = r * (H + 1), ox = col * (W + 1);
        auto src = images[idx].data();
        size_t plane = size_t(H) * W;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    gd[size_t(c) * gplane + size_t(oy + y) * GW + size_t(ox + x)] =
                        src[size_t(c) * plane + size_t(y) * W + size_t(x)];
    }
    return grid;
}

}  // namespace pairlora
