#include "avatarforge/stylize.hpp"

#include "avatarforge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace avatarforge {

void SynthesisParams::validate() const {
    if (patch_size < 3 || patch_size % 2 == 0) throw Error("patch_size must be odd and >= 3");
    if (pm_iterations < 1) throw Error("pm_iterations must be >= 1");
    if (em_rounds < 1) throw Error("em_rounds must be >= 1");
    if (pyramid_factor != 2) throw Error("only pyramid_factor 2 is supported");
    if (pyramid_min_dim < patch_size) throw Error("pyramid_min_dim must be at least patch_size");
    if (!(random_search_radius_decay > 0.0 && random_search_radius_decay < 1.0)) {
        throw Error("random_search_radius_decay must be in (0, 1)");
    }
}

NNField::NNField(int image_width, int image_height, int patch_size)
    : width_(image_width - 2 * (patch_size / 2)),
      height_(image_height - 2 * (patch_size / 2)),
      patch_size_(patch_size) {
    if (width_ <= 0 || height_ <= 0) throw Error("image smaller than one patch");
    entries_.resize(static_cast<std::size_t>(width_) * height_);
}

double NNField::total_cost() const {
    double sum = 0.0;
    for (const auto& e : entries_) sum += e.cost;
    return sum;
}

NNField identity_nnf(int image_width, int image_height, int patch_size) {
    NNField nnf(image_width, image_height, patch_size);
    for (int gy = 0; gy < nnf.height(); ++gy)
        for (int gx = 0; gx < nnf.width(); ++gx) nnf.at(gx, gy) = {nnf.target_center(gx, gy), 0.0};
    return nnf;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t z = seed ^ (a * 0x9E3779B97F4A7C15ull) ^ (b * 0xC2B2AE3D27D4EB4Full);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

bool patch_inside(const Image& img, PixelPos c, int r) {
    return c.x - r >= 0 && c.y - r >= 0 && c.x + r < img.width() && c.y + r < img.height();
}

// Guide and style channels packed per pixel, pre-scaled by sqrt(weight) so a
// patch cost is a plain sum of squared differences.
class PackedLevel {
public:
    PackedLevel(const GuideStack& g, const Image& style, const Image* current) : w_(g.width()), h_(g.height()) {
        const GuideWeights& wt = g.weights;
        const float sa = static_cast<float>(std::sqrt(wt.appearance));
        const float sp = static_cast<float>(std::sqrt(wt.positional));
        const float ss = static_cast<float>(std::sqrt(wt.segmentation));
        const float st = static_cast<float>(std::sqrt(wt.style));
        with_style_ = current != nullptr && wt.style > 0.0;
        features_ = with_style_ ? 9 : 6;
        src_.resize(static_cast<std::size_t>(w_) * h_ * features_);
        tgt_.resize(src_.size());
        for (int y = 0; y < h_; ++y) {
            for (int x = 0; x < w_; ++x) {
                float* s = &src_[(static_cast<std::size_t>(y) * w_ + x) * features_];
                float* t = &tgt_[(static_cast<std::size_t>(y) * w_ + x) * features_];
                for (int c = 0; c < 3; ++c) {
                    s[c] = sa * g.appearance_src.at(x, y, c);
                    t[c] = sa * g.appearance_tgt.at(x, y, c);
                }
                for (int c = 0; c < 2; ++c) {
                    s[3 + c] = sp * g.positional_src.at(x, y, c);
                    t[3 + c] = sp * g.positional_tgt.at(x, y, c);
                }
                s[5] = ss * g.seg_src.at(x, y, 0);
                t[5] = ss * g.seg_tgt.at(x, y, 0);
                if (with_style_) {
                    for (int c = 0; c < 3; ++c) {
                        s[6 + c] = st * style.at(x, y, c);
                        t[6 + c] = st * current->at(x, y, c);
                    }
                }
            }
        }
    }

    // Sum of squared differences; stops early once `bound` is exceeded.
    float cost(PixelPos p, PixelPos q, int patch_size, float bound) const {
        const int r = patch_size / 2;
        const std::size_t row_len = static_cast<std::size_t>(patch_size) * features_;
        float sum = 0.0f;
        for (int dy = -r; dy <= r; ++dy) {
            const float* t = &tgt_[(static_cast<std::size_t>(p.y + dy) * w_ + (p.x - r)) * features_];
            const float* s = &src_[(static_cast<std::size_t>(q.y + dy) * w_ + (q.x - r)) * features_];
            for (std::size_t k = 0; k < row_len; ++k) {
                const float d = t[k] - s[k];
                sum += d * d;
            }
            if (sum >= bound) return sum;
        }
        return sum;
    }

private:
    int w_;
    int h_;
    int features_ = 6;
    bool with_style_ = false;
    std::vector<float> src_;
    std::vector<float> tgt_;
};

void check_search_inputs(const GuideStack& guides, const Image& style, int patch_size) {
    guides.validate();
    if (guides.weights.guides_degenerate()) {
        throw Error("degenerate weights: appearance, positional and segmentation weights are all zero");
    }
    if (!style.same_size(guides.appearance_src) || style.channels() != 3) {
        throw Error("style image must be RGB and match the guide resolution");
    }
    if (guides.width() < patch_size || guides.height() < patch_size) throw Error("image smaller than one patch");
}

}  // namespace

double patch_cost(const GuideStack& g, const Image& style, const Image* current, PixelPos p, PixelPos q,
                  int patch_size) {
    const int r = patch_size / 2;
    if (!patch_inside(g.appearance_tgt, p, r) || !patch_inside(g.appearance_src, q, r)) {
        throw Error("patch_cost: patch outside image bounds");
    }
    const GuideWeights& w = g.weights;
    auto sq = [](double a, double b) { return (a - b) * (a - b); };
    double app = 0.0, pos = 0.0, seg = 0.0, sty = 0.0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            const int tx = p.x + dx, ty = p.y + dy, sx = q.x + dx, sy = q.y + dy;
            for (int c = 0; c < 3; ++c) app += sq(g.appearance_tgt.at(tx, ty, c), g.appearance_src.at(sx, sy, c));
            for (int c = 0; c < 2; ++c) pos += sq(g.positional_tgt.at(tx, ty, c), g.positional_src.at(sx, sy, c));
            seg += sq(g.seg_tgt.at(tx, ty, 0), g.seg_src.at(sx, sy, 0));
            if (current) {
                for (int c = 0; c < 3; ++c) sty += sq(current->at(tx, ty, c), style.at(sx, sy, c));
            }
        }
    }
    return w.appearance * app + w.positional * pos + w.segmentation * seg + (current ? w.style * sty : 0.0);
}

NNField nnf_search(const GuideStack& guides, const Image& style, const Image* current, const SynthesisParams& params,
                   const NNField* init, SearchTrace* trace) {
    params.validate();
    const int ps = params.patch_size;
    check_search_inputs(guides, style, ps);
    if (current && !current->same_size(style)) throw Error("current output must match the style resolution");

    const int w = guides.width();
    const int h = guides.height();
    const int r = ps / 2;
    const PackedLevel level(guides, style, current);
    std::mt19937_64 rng(mix_seed(params.rng_seed, 0x5EA4C4));

    // Valid source centres: [r, w-1-r] x [r, h-1-r].
    const int qx_max = w - 1 - r;
    const int qy_max = h - 1 - r;
    auto clamp_source = [&](PixelPos q) { return PixelPos{std::clamp(q.x, r, qx_max), std::clamp(q.y, r, qy_max)}; };
    auto draw = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };

    NNField nnf(w, h, ps);
    if (init) {
        if (init->width() != nnf.width() || init->height() != nnf.height() || init->patch_size() != ps) {
            throw Error("initial NNF does not match the target grid");
        }
        nnf = *init;
        for (int gy = 0; gy < nnf.height(); ++gy)
            for (int gx = 0; gx < nnf.width(); ++gx) nnf.at(gx, gy).source = clamp_source(nnf.at(gx, gy).source);
    } else if (guides.weights.positional > 0.0) {
        for (int gy = 0; gy < nnf.height(); ++gy) {
            for (int gx = 0; gx < nnf.width(); ++gx) {
                const PixelPos p = nnf.target_center(gx, gy);
                const PixelPos q{static_cast<int>(std::lround(guides.positional_tgt.at(p.x, p.y, 0) * w)),
                                 static_cast<int>(std::lround(guides.positional_tgt.at(p.x, p.y, 1) * h))};
                nnf.at(gx, gy).source = clamp_source(q);
            }
        }
    } else {
        for (int gy = 0; gy < nnf.height(); ++gy)
            for (int gx = 0; gx < nnf.width(); ++gx) nnf.at(gx, gy).source = {draw(r, qx_max), draw(r, qy_max)};
    }

    constexpr float kInf = std::numeric_limits<float>::infinity();
    for (int gy = 0; gy < nnf.height(); ++gy) {
        for (int gx = 0; gx < nnf.width(); ++gx) {
            NNEntry& e = nnf.at(gx, gy);
            e.cost = level.cost(nnf.target_center(gx, gy), e.source, ps, kInf);
        }
    }
    if (trace) trace->sweep_totals.push_back(nnf.total_cost());

    const int max_radius = std::max(qx_max - r, qy_max - r);
    for (int iter = 0; iter < params.pm_iterations; ++iter) {
        const bool forward = iter % 2 == 0;
        const int step = forward ? 1 : -1;
        const int gy_begin = forward ? 0 : nnf.height() - 1;
        const int gx_begin = forward ? 0 : nnf.width() - 1;
        for (int gy = gy_begin; gy >= 0 && gy < nnf.height(); gy += step) {
            for (int gx = gx_begin; gx >= 0 && gx < nnf.width(); gx += step) {
                const PixelPos p = nnf.target_center(gx, gy);
                NNEntry& best = nnf.at(gx, gy);
                auto try_candidate = [&](PixelPos q) {
                    if (q.x < r || q.y < r || q.x > qx_max || q.y > qy_max) return;
                    if (q == best.source) return;
                    const float c = level.cost(p, q, ps, static_cast<float>(best.cost));
                    if (c < best.cost) best = {q, c};
                };

                // Propagation from the already-visited neighbours.
                const int nx = gx - step;
                const int ny = gy - step;
                if (nx >= 0 && nx < nnf.width()) {
                    const PixelPos n = nnf.at(nx, gy).source;
                    try_candidate({n.x + step, n.y});
                }
                if (ny >= 0 && ny < nnf.height()) {
                    const PixelPos n = nnf.at(gx, ny).source;
                    try_candidate({n.x, n.y + step});
                }

                // Random search around the current best.
                for (double radius = max_radius; radius >= 1.0; radius *= params.random_search_radius_decay) {
                    const int rad = static_cast<int>(radius);
                    const PixelPos c = best.source;
                    try_candidate(clamp_source({draw(c.x - rad, c.x + rad), draw(c.y - rad, c.y + rad)}));
                }
            }
        }
        if (trace) trace->sweep_totals.push_back(nnf.total_cost());
    }
    return nnf;
}

NNField nnf_brute_force(const GuideStack& guides, const Image& style, const Image* current, int patch_size) {
    check_search_inputs(guides, style, patch_size);
    const PackedLevel level(guides, style, current);
    NNField nnf(guides.width(), guides.height(), patch_size);
    const int r = patch_size / 2;
    for (int gy = 0; gy < nnf.height(); ++gy) {
        for (int gx = 0; gx < nnf.width(); ++gx) {
            const PixelPos p = nnf.target_center(gx, gy);
            NNEntry best{{r, r}, std::numeric_limits<double>::infinity()};
            for (int qy = r; qy < guides.height() - r; ++qy) {
                for (int qx = r; qx < guides.width() - r; ++qx) {
                    const float c = level.cost(p, {qx, qy}, patch_size, std::numeric_limits<float>::infinity());
                    if (c < best.cost) best = {{qx, qy}, c};
                }
            }
            nnf.at(gx, gy) = best;
        }
    }
    return nnf;
}

Image vote(const NNField& nnf, const Image& style) {
    if (nnf.empty()) throw Error("vote: empty NNF");
    const int w = nnf.image_width();
    const int h = nnf.image_height();
    const int r = nnf.radius();
    const int channels = style.channels();
    std::vector<double> sum(static_cast<std::size_t>(w) * h * channels, 0.0);
    std::vector<int> count(static_cast<std::size_t>(w) * h, 0);
    for (int gy = 0; gy < nnf.height(); ++gy) {
        for (int gx = 0; gx < nnf.width(); ++gx) {
            const PixelPos p = nnf.target_center(gx, gy);
            const PixelPos q = nnf.at(gx, gy).source;
            if (!patch_inside(style, q, r)) throw Error("vote: NNF entry outside the style image");
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const std::size_t o = static_cast<std::size_t>(p.y + dy) * w + (p.x + dx);
                    const float* s = style.pixel(q.x + dx, q.y + dy);
                    for (int c = 0; c < channels; ++c) sum[o * channels + c] += s[c];
                    ++count[o];
                }
            }
        }
    }
    Image out(w, h, channels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t o = static_cast<std::size_t>(y) * w + x;
            for (int c = 0; c < channels; ++c) out.at(x, y, c) = static_cast<float>(sum[o * channels + c] / count[o]);
        }
    }
    return out;
}

NNField upsample_nnf(const NNField& coarse, int image_width, int image_height) {
    const int ps = coarse.patch_size();
    const int r = coarse.radius();
    NNField fine(image_width, image_height, ps);
    for (int gy = 0; gy < fine.height(); ++gy) {
        for (int gx = 0; gx < fine.width(); ++gx) {
            const PixelPos p = fine.target_center(gx, gy);
            const int cgx = std::clamp(p.x / 2 - r, 0, coarse.width() - 1);
            const int cgy = std::clamp(p.y / 2 - r, 0, coarse.height() - 1);
            const PixelPos pc = coarse.target_center(cgx, cgy);
            const PixelPos qc = coarse.at(cgx, cgy).source;
            const PixelPos q{2 * qc.x + (p.x - 2 * pc.x), 2 * qc.y + (p.y - 2 * pc.y)};
            fine.at(gx, gy).source = {std::clamp(q.x, r, image_width - 1 - r), std::clamp(q.y, r, image_height - 1 - r)};
        }
    }
    return fine;
}

namespace {

struct PyramidLevel {
    GuideStack guides;
    Image style;
};

GuideStack downsample_guides(const GuideStack& g) {
    GuideStack out;
    out.weights = g.weights;
    out.appearance_src = downsample2(g.appearance_src);
    out.appearance_tgt = downsample2(g.appearance_tgt);
    out.positional_src = downsample2(g.positional_src);
    out.positional_tgt = downsample2(g.positional_tgt);
    out.seg_src = downsample2(g.seg_src);
    out.seg_tgt = downsample2(g.seg_tgt);
    return out;
}

}  // namespace

Image synthesize_frame(const GuideStack& guides, const Image& style, const SynthesisParams& params) {
    params.validate();
    check_search_inputs(guides, style, params.patch_size);

    // levels.back() is the coarsest.
    std::vector<PyramidLevel> levels{{guides, style}};
    while (std::min(levels.back().style.width(), levels.back().style.height()) > params.pyramid_min_dim &&
           std::min(levels.back().style.width(), levels.back().style.height()) / 2 >= params.patch_size) {
        const PyramidLevel& prev = levels.back();
        levels.push_back({downsample_guides(prev.guides), downsample2(prev.style)});
    }

    NNField nnf;
    Image current;
    for (std::size_t li = levels.size(); li-- > 0;) {
        const PyramidLevel& level = levels[li];
        const int w = level.style.width();
        const int h = level.style.height();
        std::optional<NNField> init;
        if (!nnf.empty()) init = upsample_nnf(nnf, w, h);
        for (int round = 0; round < params.em_rounds; ++round) {
            SynthesisParams round_params = params;
            round_params.rng_seed = mix_seed(params.rng_seed, li + 1, static_cast<std::uint64_t>(round) + 1);
            const Image* cur = round > 0 ? &current : nullptr;
            nnf = nnf_search(level.guides, level.style, cur, round_params, init ? &*init : nullptr);
            current = vote(nnf, level.style);
            init = nnf;
        }
    }
    return current;
}

std::vector<Image> propagate_sequence(const FrameDataset& dataset, std::size_t exemplar_index,
                                      const Image& edited_exemplar, const std::vector<Image>& targets,
                                      const std::vector<Image>& masks, const SynthesisParams& params,
                                      const GuideWeights& weights) {
    if (exemplar_index >= dataset.size()) throw Error("propagate_sequence: exemplar index out of range");
    if (targets.size() != dataset.size() || masks.size() != dataset.size()) {
        throw Error("propagate_sequence: targets/masks not aligned with dataset frames");
    }
    params.validate();

    std::vector<Image> out(dataset.size());
    const FrameView src{dataset.frame(exemplar_index), targets[exemplar_index], masks[exemplar_index]};
    const Image style = to_rgb(edited_exemplar);
    parallel_for(dataset.size(), [&](std::size_t i) {
        if (i == exemplar_index) {
            out[i] = edited_exemplar;
            return;
        }
        const FrameView tgt{dataset.frame(i), targets[i], masks[i]};
        const GuideStack guides = build_guides(src, tgt, weights);
        SynthesisParams frame_params = params;
        frame_params.rng_seed = mix_seed(params.rng_seed, static_cast<std::uint64_t>(dataset.frame(i).index) + 1);
        out[i] = synthesize_frame(guides, style, frame_params);
    });
    return out;
}

}  // namespace avatarforge
