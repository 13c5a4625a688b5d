#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "dunet/pipeline.hpp"

namespace dunet::pipeline {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const std::filesystem::path& path, const char* mode) {
    File f(std::fopen(path.c_str(), mode));
    if (!f) throw Error("cannot open " + path.string());
    return f;
}

std::uint8_t to_byte(float v) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void write_rows(const std::filesystem::path& path, int width, int height, int color_type,
                const std::vector<std::uint8_t>& pixels, const std::map<std::string, std::string>& text) {
    File f = open(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("libpng: out of memory");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng: failed writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_text> chunks;
    for (const auto& [k, v] : text) {
        png_text t{};
        t.compression = PNG_TEXT_COMPRESSION_NONE;
        t.key = const_cast<char*>(k.c_str());
        t.text = const_cast<char*>(v.c_str());
        t.text_length = v.size();
        chunks.push_back(t);
    }
    if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
    png_write_info(png, info);
    const std::size_t stride = pixels.size() / static_cast<std::size_t>(height);
    for (int y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(pixels.data() + stride * static_cast<std::size_t>(y)));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw Error("cannot read PNG " + path.string() + ": " + img.message);
    }
    const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const int C = color ? 3 : 1;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    // A black background for composition keeps alpha-stripped pixels deterministic.
    png_color black{0, 0, 0};
    if (!png_image_finish_read(&img, &black, buf.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw Error("cannot decode PNG " + path.string() + ": " + msg);
    }
    const int H = static_cast<int>(img.height), W = static_cast<int>(img.width);
    Tensor t(Shape{1, C, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                t(0, c, y, x) = static_cast<float>(buf[(static_cast<std::size_t>(y) * W + x) * C + c]) / 255.0f;
    return t;
}

void write_png(const std::filesystem::path& path, const Tensor& image, const std::map<std::string, std::string>& text) {
    if (image.n() != 1 || (image.c() != 1 && image.c() != 3)) {
        throw ShapeError("write_png: expects 1x1xHxW or 1x3xHxW, got " + image.shape().str());
    }
    const int C = image.c(), H = image.h(), W = image.w();
    std::vector<std::uint8_t> px(static_cast<std::size_t>(C) * H * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) px[(static_cast<std::size_t>(y) * W + x) * C + c] = to_byte(image(0, c, y, x));
    write_rows(path, W, H, C == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, px, text);
}

BinaryMask read_mask_png(const std::filesystem::path& path) {
    const Tensor g = to_grayscale(read_png(path));
    return BinaryMask::from_tensor(g, 127.5f / 255.0f);
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask,
                    const std::map<std::string, std::string>& text) {
    std::vector<std::uint8_t> px(mask.bits.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.bits[i] ? 255 : 0;
    write_rows(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, px, text);
}

std::map<std::string, std::string> read_png_text(const std::filesystem::path& path) {
    File f = open(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("libpng: out of memory");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("cannot read PNG " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_textp text = nullptr;
    int n = 0;
    png_get_text(png, info, &text, &n);
    std::map<std::string, std::string> out;
    for (int i = 0; i < n; ++i) out[text[i].key] = std::string(text[i].text, text[i].text_length);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

Tensor to_grayscale(const Tensor& image) {
    if (image.c() == 1) return image;
    if (image.c() != 3) throw ShapeError("to_grayscale: expects 1 or 3 channels, got " + image.shape().str());
    Tensor g(Shape{image.n(), 1, image.h(), image.w()});
    for (int n = 0; n < image.n(); ++n)
        for (int y = 0; y < image.h(); ++y)
            for (int x = 0; x < image.w(); ++x)
                g(n, 0, y, x) = 0.299f * image(n, 0, y, x) + 0.587f * image(n, 1, y, x) + 0.114f * image(n, 2, y, x);
    return g;
}

std::size_t BinaryMask::count() const {
    std::size_t c = 0;
    for (auto b : bits) c += b != 0;
    return c;
}

Tensor BinaryMask::to_tensor() const {
    Tensor t(Shape{1, 1, height, width});
    for (std::size_t i = 0; i < bits.size(); ++i) t[i] = bits[i] ? 1.0f : 0.0f;
    return t;
}

BinaryMask BinaryMask::from_tensor(const Tensor& t, float threshold) {
    if (t.n() != 1 || t.c() != 1) throw ShapeError("mask: expects a 1x1xHxW tensor, got " + t.shape().str());
    BinaryMask m(t.h(), t.w());
    for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = t[i] >= threshold ? 1 : 0;
    return m;
}

}  // namespace dunet::pipeline
