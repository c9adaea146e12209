#pragma once

#include "avatarforge/dataset.hpp"
#include "avatarforge/guides.hpp"
#include "avatarforge/image.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace avatarforge {

struct SynthesisParams {
    int patch_size = 5;
    int pyramid_min_dim = 32;
    int pyramid_factor = 2;
    int pm_iterations = 6;
    int em_rounds = 3;
    double random_search_radius_decay = 0.5;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

struct PixelPos {
    int x = 0;
    int y = 0;
    bool operator==(const PixelPos&) const = default;
};

struct NNEntry {
    PixelPos source;
    double cost = 0.0;
    bool operator==(const NNEntry&) const = default;
};

/// Nearest-neighbour field over target patch centres. Only centres whose
/// whole patch lies inside the image are represented, so grid cell (gx, gy)
/// is the patch centred on pixel (gx + r, gy + r).
class NNField {
public:
    NNField() = default;
    NNField(int image_width, int image_height, int patch_size);

    int width() const { return width_; }
    int height() const { return height_; }
    int patch_size() const { return patch_size_; }
    int radius() const { return patch_size_ / 2; }
    int image_width() const { return width_ + 2 * radius(); }
    int image_height() const { return height_ + 2 * radius(); }
    bool empty() const { return entries_.empty(); }

    NNEntry& at(int gx, int gy) { return entries_[static_cast<std::size_t>(gy) * width_ + gx]; }
    const NNEntry& at(int gx, int gy) const { return entries_[static_cast<std::size_t>(gy) * width_ + gx]; }
    PixelPos target_center(int gx, int gy) const { return {gx + radius(), gy + radius()}; }

    double total_cost() const;
    double mean_cost() const { return empty() ? 0.0 : total_cost() / static_cast<double>(entries_.size()); }

    bool operator==(const NNField&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    int patch_size_ = 0;
    std::vector<NNEntry> entries_;
};

/// Identity field: every target patch maps to the co-located source patch.
NNField identity_nnf(int image_width, int image_height, int patch_size);

/// Matching energy between target patch p and source patch q:
/// sum over patch offsets of w_app|app_t - app_s|^2 + w_pos|pos_t - pos_s|^2
/// + w_seg|seg_t - seg_s|^2, plus w_sty|current - style|^2 when a current
/// output exists. Direct evaluation; used as reference by tests.
double patch_cost(const GuideStack& guides, const Image& style, const Image* current, PixelPos p, PixelPos q,
                  int patch_size);

/// Total NNF cost after initialisation and after each propagation/search sweep.
struct SearchTrace {
    std::vector<double> sweep_totals;
};

/// PatchMatch: alternating-direction neighbour propagation plus exponentially
/// shrinking random search, accepting only strict improvements. Without an
/// initial field, entries start at the location predicted by the target
/// positional guide (or uniformly at random when w_pos = 0).
NNField nnf_search(const GuideStack& guides, const Image& style, const Image* current, const SynthesisParams& params,
                   const NNField* init = nullptr, SearchTrace* trace = nullptr);

/// Exhaustive minimum-cost field (test oracle; quadratic in pixel count).
NNField nnf_brute_force(const GuideStack& guides, const Image& style, const Image* current, int patch_size);

/// Uniform-weight voting: each output pixel averages the style pixels of all
/// matched patches overlapping it.
Image vote(const NNField& nnf, const Image& style);

/// Coordinates doubled (plus the in-cell offset) and re-clamped; costs are not
/// meaningful until the next search recomputes them.
NNField upsample_nnf(const NNField& coarse, int image_width, int image_height);

/// Coarse-to-fine exemplar-guided synthesis of the target frame.
Image synthesize_frame(const GuideStack& guides, const Image& style, const SynthesisParams& params);

/// Stylises every frame from the edited exemplar. `targets` are the appearance
/// images per frame (originals or renders); targets[exemplar_index] is the
/// appearance source. The exemplar slot of the result is `edited_exemplar`.
std::vector<Image> propagate_sequence(const FrameDataset& dataset, std::size_t exemplar_index,
                                      const Image& edited_exemplar, const std::vector<Image>& targets,
                                      const std::vector<Image>& masks, const SynthesisParams& params,
                                      const GuideWeights& weights = {});

}  // namespace avatarforge
