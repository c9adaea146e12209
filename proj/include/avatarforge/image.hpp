#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace avatarforge {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Color = std::array<float, 3>;

inline constexpr Color kWhite{1.0f, 1.0f, 1.0f};
inline constexpr Color kBlack{0.0f, 0.0f, 0.0f};

/// Row-major float image with interleaved channels. Samples are in [0,1]
/// for anything that came from or goes to disk; intermediate guide images
/// follow the same convention.
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels, float fill = 0.0f);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    bool empty() const { return pixels_.empty(); }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

    float& at(int x, int y, int c) { return pixels_[index(x, y, c)]; }
    float at(int x, int y, int c) const { return pixels_[index(x, y, c)]; }

    float* pixel(int x, int y) { return pixels_.data() + index(x, y, 0); }
    const float* pixel(int x, int y) const { return pixels_.data() + index(x, y, 0); }

    std::vector<float>& data() { return pixels_; }
    const std::vector<float>& data() const { return pixels_; }

    bool same_size(const Image& other) const {
        return width_ == other.width_ && height_ == other.height_;
    }

    bool operator==(const Image& other) const = default;

private:
    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<float> pixels_;
};

/// Reads an 8-bit PNG. Gray, gray+alpha, RGB and RGBA are accepted; the
/// channel count of the result follows the file (gray+alpha drops alpha).
Image read_png(const std::filesystem::path& path);

/// Writes 1, 3 or 4 channel images as 8-bit PNG (values rounded, clamped).
void write_png(const std::filesystem::path& path, const Image& image);

/// Width and height from the PNG header, without decoding pixels.
std::array<int, 2> png_dimensions(const std::filesystem::path& path);

std::vector<unsigned char> encode_png(const Image& image);
Image decode_png(const std::vector<unsigned char>& bytes);

/// Bilinear sample with clamp-to-edge addressing; (x, y) in pixel units.
void sample_bilinear(const Image& image, double x, double y, float* out);

/// 2x box downsample; odd trailing rows/columns fold into the last output pixel.
Image downsample2(const Image& image);

/// Resample to an explicit size with bilinear filtering (pixel-center aligned).
Image resize_bilinear(const Image& image, int width, int height);

/// Keeps the listed channels, in order.
Image select_channels(const Image& image, std::initializer_list<int> channels);

Image to_rgb(const Image& image);

void clamp01(Image& image);

}  // namespace avatarforge
