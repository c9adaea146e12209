#include "avatarforge/guides.hpp"

#include <algorithm>
#include <cmath>

namespace avatarforge {

WarpField::WarpField(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw Error("warp field dimensions must be positive");
    map_.assign(static_cast<std::size_t>(width) * height, Eigen::Vector2d::Zero());
}

void GuideWeights::validate() const {
    for (double w : {appearance, positional, segmentation, style}) {
        if (!std::isfinite(w) || w < 0.0) throw Error("guide weights must be finite and non-negative");
    }
    if (appearance == 0.0 && positional == 0.0 && segmentation == 0.0 && style == 0.0) {
        throw Error("guide weights are all zero");
    }
}

void GuideStack::validate() const {
    weights.validate();
    const Image* all[] = {&appearance_src, &appearance_tgt, &positional_src, &positional_tgt, &seg_src, &seg_tgt};
    for (const Image* img : all) {
        if (img->empty() || !img->same_size(appearance_src)) throw Error("guide channels differ in resolution");
    }
    if (appearance_src.channels() != 3 || appearance_tgt.channels() != 3) throw Error("appearance guides must be RGB");
    if (positional_src.channels() != 2 || positional_tgt.channels() != 2) {
        throw Error("positional guides must have 2 channels");
    }
    if (seg_src.channels() != 1 || seg_tgt.channels() != 1) throw Error("segmentation guides must have 1 channel");
}

WarpField positional_guide(std::span<const Eigen::Vector2d> src_landmarks,
                           std::span<const Eigen::Vector2d> tgt_landmarks, int width, int height) {
    if (src_landmarks.empty()) throw Error("positional_guide: zero landmarks");
    if (src_landmarks.size() != tgt_landmarks.size()) throw Error("positional_guide: landmark count mismatch");

    std::vector<Eigen::Vector2d> displacement(src_landmarks.size());
    for (std::size_t j = 0; j < displacement.size(); ++j) displacement[j] = src_landmarks[j] - tgt_landmarks[j];

    WarpField warp(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const Eigen::Vector2d p(x, y);
            Eigen::Vector2d num = Eigen::Vector2d::Zero();
            double den = 0.0;
            for (std::size_t j = 0; j < displacement.size(); ++j) {
                const double w = 1.0 / ((p - tgt_landmarks[j]).squaredNorm() + kShepardEpsilon);
                num += w * displacement[j];
                den += w;
            }
            const Eigen::Vector2d q = p + num / den;
            warp.at(x, y) = {std::clamp(q.x(), 0.0, width - 1.0), std::clamp(q.y(), 0.0, height - 1.0)};
        }
    }
    return warp;
}

Image segmentation_guide(const Image& mask, int blur_radius) {
    if (mask.channels() != 1) throw Error("segmentation_guide: mask must be single-channel");
    if (blur_radius < 0) throw Error("segmentation_guide: negative blur radius");
    if (blur_radius == 0) return mask;

    const int w = mask.width();
    const int h = mask.height();
    const double norm = 1.0 / (2 * blur_radius + 1);
    Image horizontal(w, h, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sum = 0.0;
            for (int k = -blur_radius; k <= blur_radius; ++k) sum += mask.at(std::clamp(x + k, 0, w - 1), y, 0);
            horizontal.at(x, y, 0) = static_cast<float>(sum * norm);
        }
    }
    Image out(w, h, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sum = 0.0;
            for (int k = -blur_radius; k <= blur_radius; ++k) sum += horizontal.at(x, std::clamp(y + k, 0, h - 1), 0);
            out.at(x, y, 0) = std::clamp(static_cast<float>(sum * norm), 0.0f, 1.0f);
        }
    }
    return out;
}

Image identity_positional(int width, int height) {
    Image out(width, height, 2);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            out.at(x, y, 0) = static_cast<float>(static_cast<double>(x) / width);
            out.at(x, y, 1) = static_cast<float>(static_cast<double>(y) / height);
        }
    }
    return out;
}

Image positional_channels(const WarpField& warp) {
    Image out(warp.width(), warp.height(), 2);
    for (int y = 0; y < warp.height(); ++y) {
        for (int x = 0; x < warp.width(); ++x) {
            out.at(x, y, 0) = static_cast<float>(warp.at(x, y).x() / warp.width());
            out.at(x, y, 1) = static_cast<float>(warp.at(x, y).y() / warp.height());
        }
    }
    return out;
}

GuideStack build_guides(const FrameView& src, const FrameView& tgt, const GuideWeights& weights, int blur_radius) {
    if (!src.image.same_size(tgt.image)) throw Error("build_guides: source and target frames differ in size");
    const int w = src.image.width();
    const int h = src.image.height();

    GuideStack g;
    g.weights = weights;
    g.appearance_src = masked(to_rgb(src.image), src.mask, kWhite);
    g.appearance_tgt = masked(to_rgb(tgt.image), tgt.mask, kWhite);
    g.positional_src = identity_positional(w, h);
    g.positional_tgt = positional_channels(positional_guide(src.record.landmarks, tgt.record.landmarks, w, h));
    g.seg_src = segmentation_guide(src.mask, blur_radius);
    g.seg_tgt = segmentation_guide(tgt.mask, blur_radius);
    return g;
}

}  // namespace avatarforge
