#include "avatarforge/metrics.hpp"

#include "avatarforge/guides.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>

namespace avatarforge {

double psnr(const Image& a, const Image& b, const Image* mask) {
    if (!a.same_size(b) || a.channels() != b.channels()) throw Error("psnr: image sizes differ");
    if (mask && (!mask->same_size(a) || mask->channels() != 1)) throw Error("psnr: mask size mismatch");
    double sum = 0.0;
    double weight = 0.0;
    for (int y = 0; y < a.height(); ++y) {
        for (int x = 0; x < a.width(); ++x) {
            const double m = mask ? mask->at(x, y, 0) : 1.0;
            if (m <= 0.0) continue;
            for (int c = 0; c < a.channels(); ++c) {
                const double d = static_cast<double>(a.at(x, y, c)) - b.at(x, y, c);
                sum += m * d * d;
            }
            weight += m * a.channels();
        }
    }
    if (weight <= 0.0) throw Error("psnr: empty mask");
    const double mse = sum / weight;
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double sharpness(const Image& image, const Image& mask) {
    if (!image.same_size(mask) || mask.channels() != 1) throw Error("sharpness: mask size mismatch");
    const int w = image.width();
    const int h = image.height();
    Image luma(w, h, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float* p = image.pixel(x, y);
            luma.at(x, y, 0) = image.channels() >= 3 ? 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2] : p[0];
        }
    }
    auto at = [&](int x, int y) { return static_cast<double>(luma.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1), 0)); };
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (mask.at(x, y, 0) <= 0.5f) continue;
            const double lap = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y);
            sum += lap;
            sum_sq += lap * lap;
            ++n;
        }
    }
    if (n == 0) throw Error("sharpness: empty mask");
    const double mean = sum / static_cast<double>(n);
    return std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
}

Image warp_image(const Image& source, const WarpField& warp) {
    Image out(warp.width(), warp.height(), source.channels());
    for (int y = 0; y < warp.height(); ++y)
        for (int x = 0; x < warp.width(); ++x)
            sample_bilinear(source, warp.at(x, y).x(), warp.at(x, y).y(), out.pixel(x, y));
    return out;
}

ConsistencyResult temporal_consistency(const std::vector<Image>& frames, const std::vector<Image>& masks,
                                       const std::vector<std::vector<Eigen::Vector2d>>& landmarks) {
    if (frames.size() < 2) throw Error("temporal_consistency: needs at least 2 frames");
    if (masks.size() != frames.size() || landmarks.size() != frames.size()) {
        throw Error("temporal_consistency: frames, masks and landmarks must align");
    }
    ConsistencyResult result;
    for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
        const Image& a = frames[i];
        const Image& mask = masks[i];
        if (!a.same_size(frames[i + 1]) || !a.same_size(mask)) throw Error("temporal_consistency: size mismatch");
        const WarpField warp = positional_guide(landmarks[i + 1], landmarks[i], a.width(), a.height());
        const Image b = warp_image(frames[i + 1], warp);
        double sum = 0.0, weight = 0.0;
        for (int y = 0; y < a.height(); ++y) {
            for (int x = 0; x < a.width(); ++x) {
                const double m = mask.at(x, y, 0);
                if (m <= 0.0) continue;
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double d = static_cast<double>(a.at(x, y, c)) - b.at(x, y, c);
                    d2 += d * d;
                }
                sum += m * std::sqrt(d2);
                weight += m;
            }
        }
        result.pairs.push_back(weight > 0.0 ? sum / weight : 0.0);
    }
    double total = 0.0;
    for (double v : result.pairs) total += v;
    result.mean = total / static_cast<double>(result.pairs.size());
    return result;
}

MetricReport evaluate_frames(const std::vector<Image>& frames, const std::vector<Image>& masks,
                             const std::vector<std::vector<Eigen::Vector2d>>& landmarks,
                             const std::vector<Image>* references) {
    if (references && references->size() != frames.size()) throw Error("evaluate: reference count mismatch");
    MetricReport report;
    double sharp_total = 0.0;
    double psnr_total = 0.0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        report.sharpness.push_back(sharpness(frames[i], masks[i]));
        sharp_total += report.sharpness.back();
        if (references) {
            report.psnr.push_back(psnr(frames[i], (*references)[i], &masks[i]));
            psnr_total += *report.psnr.back();
        } else {
            report.psnr.push_back(std::nullopt);
        }
    }
    if (!frames.empty()) report.mean_sharpness = sharp_total / static_cast<double>(frames.size());
    if (references && !frames.empty()) report.mean_psnr = psnr_total / static_cast<double>(frames.size());
    if (frames.size() >= 2) {
        const ConsistencyResult tc = temporal_consistency(frames, masks, landmarks);
        report.temporal_consistency = tc.mean;
        report.consistency_pairs = tc.pairs;
    }
    return report;
}

std::string report_to_json(const MetricReport& report, const std::string& label) {
    using nlohmann::json;
    json frames = json::array();
    for (std::size_t i = 0; i < report.sharpness.size(); ++i) {
        json f{{"frame", i}, {"sharpness", report.sharpness[i]}};
        if (report.psnr[i]) f["psnr_db"] = *report.psnr[i];
        if (i < report.consistency_pairs.size()) f["consistency_to_next"] = report.consistency_pairs[i];
        frames.push_back(f);
    }
    json j{{"metric_definitions",
            {{"temporal_consistency", "proxy: mean masked RGB distance between consecutive frames after landmark warp"},
             {"sharpness", "proxy: variance of 3x3 Laplacian of luma inside mask"}}},
           {"temporal_consistency", report.temporal_consistency},
           {"mean_sharpness", report.mean_sharpness},
           {"frames", frames}};
    if (report.mean_psnr) j["mean_psnr_db"] = *report.mean_psnr;
    if (!label.empty()) j["label"] = label;
    return j.dump(2);
}

std::string report_to_csv(const MetricReport& report) {
    std::ostringstream out;
    out << "frame,sharpness,psnr_db,consistency_to_next\n";
    for (std::size_t i = 0; i < report.sharpness.size(); ++i) {
        out << i << ',' << report.sharpness[i] << ',';
        if (report.psnr[i]) out << *report.psnr[i];
        out << ',';
        if (i < report.consistency_pairs.size()) out << report.consistency_pairs[i];
        out << '\n';
    }
    return out.str();
}

}  // namespace avatarforge
