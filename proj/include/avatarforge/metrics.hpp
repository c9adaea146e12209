#pragma once

#include "avatarforge/guides.hpp"
#include "avatarforge/image.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace avatarforge {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over mask-weighted pixels and all channels; identical
/// inputs report the 99 dB cap.
double psnr(const Image& a, const Image& b, const Image* mask = nullptr);

/// Variance of the 3x3 Laplacian of luma over pixels with mask > 0.5.
double sharpness(const Image& image, const Image& mask);

/// Warps `source` into the target frame: out(p) = source(warp(p)), bilinear.
Image warp_image(const Image& source, const WarpField& warp);

struct ConsistencyResult {
    double mean = 0.0;
    /// pairs[i] compares frame i with frame i+1 warped onto it.
    std::vector<double> pairs;
};

/// Mean over consecutive pairs of the mask-weighted mean RGB Euclidean
/// distance between frame i and frame i+1 warped onto i by landmark Shepard
/// interpolation. 0 for perfectly consistent frames, at most sqrt(3).
ConsistencyResult temporal_consistency(const std::vector<Image>& frames, const std::vector<Image>& masks,
                                       const std::vector<std::vector<Eigen::Vector2d>>& landmarks);

struct MetricReport {
    std::vector<double> sharpness;
    std::vector<std::optional<double>> psnr;
    std::vector<double> consistency_pairs;
    double temporal_consistency = 0.0;
    double mean_sharpness = 0.0;
    std::optional<double> mean_psnr;
};

/// Full report; `references`, when given, must align with `frames`.
MetricReport evaluate_frames(const std::vector<Image>& frames, const std::vector<Image>& masks,
                             const std::vector<std::vector<Eigen::Vector2d>>& landmarks,
                             const std::vector<Image>* references = nullptr);

/// Structured-text (JSON) form of the report.
std::string report_to_json(const MetricReport& report, const std::string& label = {});
/// One row per frame: frame,sharpness,psnr,consistency_to_next.
std::string report_to_csv(const MetricReport& report);

}  // namespace avatarforge
