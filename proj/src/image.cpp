#include "avatarforge/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace avatarforge {

Image::Image(int width, int height, int channels, float fill)
    : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0) {
        throw Error("image dimensions must be positive, got " + std::to_string(width) + "x" +
                    std::to_string(height));
    }
    if (channels < 1 || channels > 4) {
        throw Error("unsupported channel count " + std::to_string(channels));
    }
    pixels_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

namespace {

png_uint_32 png_format_for(int channels) {
    switch (channels) {
        case 1: return PNG_FORMAT_GRAY;
        case 3: return PNG_FORMAT_RGB;
        case 4: return PNG_FORMAT_RGBA;
        default: throw Error("PNG output supports 1, 3 or 4 channels, got " + std::to_string(channels));
    }
}

int channels_for(png_uint_32 file_format) {
    const bool color = (file_format & PNG_FORMAT_FLAG_COLOR) != 0;
    const bool alpha = (file_format & PNG_FORMAT_FLAG_ALPHA) != 0;
    if (!color) return 1;
    return alpha ? 4 : 3;
}

Image finish_read(png_image& png, const std::string& what) {
    const int channels = channels_for(png.format);
    png.format = png_format_for(channels);
    std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        const std::string message = png.message;
        png_image_free(&png);
        throw Error("failed to decode PNG " + what + ": " + message);
    }
    Image image(static_cast<int>(png.width), static_cast<int>(png.height), channels);
    auto& out = image.data();
    for (std::size_t i = 0; i < buffer.size(); ++i) out[i] = static_cast<float>(buffer[i]) / 255.0f;
    return image;
}

std::vector<unsigned char> to_bytes(const Image& image) {
    std::vector<unsigned char> bytes(image.data().size());
    const auto& px = image.data();
    for (std::size_t i = 0; i < px.size(); ++i) {
        const float v = std::clamp(px[i], 0.0f, 1.0f);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    return bytes;
}

png_image png_header(const Image& image) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width());
    png.height = static_cast<png_uint_32>(image.height());
    png.format = png_format_for(image.channels());
    return png;
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw Error("cannot read PNG " + path.string() + ": " + png.message);
    }
    return finish_read(png, path.string());
}

std::array<int, 2> png_dimensions(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw Error("cannot read PNG " + path.string() + ": " + png.message);
    }
    std::array<int, 2> dims{static_cast<int>(png.width), static_cast<int>(png.height)};
    png_image_free(&png);
    return dims;
}

Image decode_png(const std::vector<unsigned char>& bytes) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
        throw Error(std::string("cannot decode PNG buffer: ") + png.message);
    }
    return finish_read(png, "buffer");
}

void write_png(const std::filesystem::path& path, const Image& image) {
    png_image png = png_header(image);
    const auto bytes = to_bytes(image);
    if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        throw Error("cannot write PNG " + path.string() + ": " + png.message);
    }
}

std::vector<unsigned char> encode_png(const Image& image) {
    png_image png = png_header(image);
    const auto bytes = to_bytes(image);
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, bytes.data(), 0, nullptr)) {
        throw Error(std::string("cannot encode PNG: ") + png.message);
    }
    std::vector<unsigned char> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, bytes.data(), 0, nullptr)) {
        throw Error(std::string("cannot encode PNG: ") + png.message);
    }
    out.resize(size);
    return out;
}

void sample_bilinear(const Image& image, double x, double y, float* out) {
    const int w = image.width();
    const int h = image.height();
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    for (int c = 0; c < image.channels(); ++c) {
        const double top = (1.0 - fx) * image.at(x0, y0, c) + fx * image.at(x1, y0, c);
        const double bottom = (1.0 - fx) * image.at(x0, y1, c) + fx * image.at(x1, y1, c);
        out[c] = static_cast<float>((1.0 - fy) * top + fy * bottom);
    }
}

Image downsample2(const Image& image) {
    const int w = std::max(1, image.width() / 2);
    const int h = std::max(1, image.height() / 2);
    const int channels = image.channels();
    Image out(w, h, channels);
    for (int y = 0; y < h; ++y) {
        const int y_begin = 2 * y;
        const int y_end = (y == h - 1) ? image.height() : 2 * y + 2;
        for (int x = 0; x < w; ++x) {
            const int x_begin = 2 * x;
            const int x_end = (x == w - 1) ? image.width() : 2 * x + 2;
            for (int c = 0; c < channels; ++c) {
                double sum = 0.0;
                for (int sy = y_begin; sy < y_end; ++sy)
                    for (int sx = x_begin; sx < x_end; ++sx) sum += image.at(sx, sy, c);
                out.at(x, y, c) = static_cast<float>(sum / ((y_end - y_begin) * (x_end - x_begin)));
            }
        }
    }
    return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
    Image out(width, height, image.channels());
    const double sx = static_cast<double>(image.width()) / width;
    const double sy = static_cast<double>(image.height()) / height;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            sample_bilinear(image, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5, out.pixel(x, y));
    return out;
}

Image select_channels(const Image& image, std::initializer_list<int> channels) {
    Image out(image.width(), image.height(), static_cast<int>(channels.size()));
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            int k = 0;
            for (int c : channels) out.at(x, y, k++) = image.at(x, y, c);
        }
    }
    return out;
}

Image to_rgb(const Image& image) {
    if (image.channels() == 3) return image;
    if (image.channels() == 4) return select_channels(image, {0, 1, 2});
    if (image.channels() == 1) return select_channels(image, {0, 0, 0});
    throw Error("cannot convert " + std::to_string(image.channels()) + "-channel image to RGB");
}

void clamp01(Image& image) {
    for (auto& v : image.data()) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace avatarforge
