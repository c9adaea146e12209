#pragma once

// Synthetic inputs shared by the unit and acceptance tests.

#include "avatarforge/dataset.hpp"
#include "avatarforge/guides.hpp"
#include "avatarforge/image.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace fixtures {

using avatarforge::Image;

inline Image noise_image(int w, int h, int channels, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img(w, h, channels);
    for (auto& v : img.data()) v = u(rng);
    return img;
}

/// Independent uniform noise in every guide channel of source and target.
inline avatarforge::GuideStack noise_guides(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    avatarforge::GuideStack g;
    g.appearance_src = noise_image(w, h, 3, rng);
    g.appearance_tgt = noise_image(w, h, 3, rng);
    g.positional_src = noise_image(w, h, 2, rng);
    g.positional_tgt = noise_image(w, h, 2, rng);
    g.seg_src = noise_image(w, h, 1, rng);
    g.seg_tgt = noise_image(w, h, 1, rng);
    return g;
}

/// Smooth, patch-distinguishable colour texture on a disc over white; the
/// mask is the disc. Content is placed with its centre at (cx, cy).
struct TexturedDisc {
    Image image;
    Image mask;
};

inline avatarforge::Color disc_texture(double u, double v) {
    const double r = 0.5 + 0.35 * std::sin(0.31 * u + 0.17 * v) + 0.1 * std::cos(0.9 * v);
    const double g = 0.5 + 0.3 * std::cos(0.23 * u - 0.29 * v) + 0.12 * std::sin(0.7 * u);
    const double b = 0.45 + 0.3 * std::sin(0.4 * v + 1.0) * std::cos(0.2 * u);
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

inline TexturedDisc textured_disc(int w, int h, int cx, int cy, int radius) {
    TexturedDisc d{Image(w, h, 3, 1.0f), Image(w, h, 1, 0.0f)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int u = x - cx, v = y - cy;
            if (u * u + v * v > radius * radius) continue;
            const auto c = disc_texture(u, v);
            for (int k = 0; k < 3; ++k) d.image.at(x, y, k) = c[k];
            d.mask.at(x, y, 0) = 1.0f;
        }
    }
    return d;
}

/// Video of a textured disc translated by whole pixels per frame; landmarks
/// ride with the content so they encode the translation exactly.
struct TranslationVideo {
    avatarforge::FrameDataset dataset;
    std::vector<Image> images;
    std::vector<Image> masks;
};

inline TranslationVideo translation_video(const std::vector<std::pair<int, int>>& offsets, int size = 64,
                                          int radius = 20) {
    using namespace avatarforge;
    const Intrinsics intr{80.0, 80.0, size / 2.0, size / 2.0, size, size};
    const std::vector<Eigen::Vector2d> base = {{-10, -8}, {10, -8}, {0, 0}, {-8, 10}, {8, 10}, {0, -15}, {0, 15}};
    TranslationVideo v;
    std::vector<FrameRecord> records;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        const int cx = size / 2 + offsets[i].first, cy = size / 2 + offsets[i].second;
        const auto disc = textured_disc(size, size, cx, cy, radius);
        v.images.push_back(disc.image);
        v.masks.push_back(disc.mask);
        FrameRecord r;
        r.index = static_cast<int>(i);
        r.image_path = "frames/" + frame_stem(r.index) + ".png";
        r.mask_path = "masks/" + frame_stem(r.index) + ".png";
        r.expression = Eigen::VectorXd::Zero(0);
        for (const auto& p : base) r.landmarks.push_back(p + Eigen::Vector2d(cx, cy));
        records.push_back(r);
    }
    v.dataset = FrameDataset("", intr, records, 25.0);
    return v;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("avatarforge_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures
