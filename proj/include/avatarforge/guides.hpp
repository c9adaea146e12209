#pragma once

#include "avatarforge/dataset.hpp"
#include "avatarforge/image.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace avatarforge {

/// Dense map from every target pixel to a real-valued source position.
class WarpField {
public:
    WarpField(int width, int height);

    int width() const { return width_; }
    int height() const { return height_; }
    Eigen::Vector2d& at(int x, int y) { return map_[static_cast<std::size_t>(y) * width_ + x]; }
    const Eigen::Vector2d& at(int x, int y) const { return map_[static_cast<std::size_t>(y) * width_ + x]; }

private:
    int width_;
    int height_;
    std::vector<Eigen::Vector2d> map_;
};

/// Per-channel weights of the patch matching energy.
struct GuideWeights {
    double appearance = 2.0;
    double positional = 1.0;
    double segmentation = 1.5;
    double style = 1.0;

    /// Finite, non-negative and not all zero.
    void validate() const;
    /// True when no guide channel can drive matching (only the style term is weighted).
    bool guides_degenerate() const { return appearance == 0.0 && positional == 0.0 && segmentation == 0.0; }
};

/// Source (exemplar) and target channels steering patch matching.
struct GuideStack {
    Image appearance_src, appearance_tgt;  // RGB
    Image positional_src, positional_tgt;  // 2 channels, normalized coordinates
    Image seg_src, seg_tgt;                // 1 channel soft masks
    GuideWeights weights;

    int width() const { return appearance_src.width(); }
    int height() const { return appearance_src.height(); }
    void validate() const;
};

/// Image and tracked parameters of one frame as seen by guide construction.
struct FrameView {
    const FrameRecord& record;
    const Image& image;
    const Image& mask;
};

inline constexpr double kShepardEpsilon = 1.0;  // pixels^2
inline constexpr int kSegmentationBlurRadius = 3;

/// Inverse-distance-squared (Shepard) interpolation of landmark displacements:
/// maps each target pixel p to p + sum_j w_j (src_j - tgt_j) / sum_j w_j with
/// w_j = 1 / (|p - tgt_j|^2 + eps), clamped to the image.
WarpField positional_guide(std::span<const Eigen::Vector2d> src_landmarks,
                           std::span<const Eigen::Vector2d> tgt_landmarks, int width, int height);

/// Normalized box blur of a single-channel mask (clamp-to-edge borders).
Image segmentation_guide(const Image& mask, int blur_radius);

/// Two-channel image of each pixel's own coordinates divided by the image size.
Image identity_positional(int width, int height);

/// Two-channel image of warp.at(p) divided by the image size.
Image positional_channels(const WarpField& warp);

GuideStack build_guides(const FrameView& src, const FrameView& tgt, const GuideWeights& weights,
                        int blur_radius = kSegmentationBlurRadius);

}  // namespace avatarforge
