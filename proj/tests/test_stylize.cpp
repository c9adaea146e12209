#include "avatarforge/metrics.hpp"
#include "avatarforge/stylize.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <algorithm>

using namespace avatarforge;

namespace {

GuideStack flat_guides(int w, int h, GuideWeights weights) {
    GuideStack g;
    g.appearance_src = Image(w, h, 3, 0.5f);
    g.appearance_tgt = Image(w, h, 3, 0.5f);
    g.positional_src = identity_positional(w, h);
    g.positional_tgt = identity_positional(w, h);
    g.seg_src = Image(w, h, 1, 1.0f);
    g.seg_tgt = Image(w, h, 1, 1.0f);
    g.weights = weights;
    return g;
}

Image sepia_like(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const float r = img.at(x, y, 0), g = img.at(x, y, 1), b = img.at(x, y, 2);
            out.at(x, y, 0) = std::min(1.0f, 0.393f * r + 0.769f * g + 0.189f * b);
            out.at(x, y, 1) = std::min(1.0f, 0.349f * r + 0.686f * g + 0.168f * b);
            out.at(x, y, 2) = std::min(1.0f, 0.272f * r + 0.534f * g + 0.131f * b);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("patch_cost closed forms") {
    const Image style(20, 12, 3, 0.3f);

    SUBCASE("identical patches cost nothing") {
        auto video = fixtures::translation_video({{0, 0}});
        const FrameView v{video.dataset.frame(0), video.images[0], video.masks[0]};
        const GuideStack g = build_guides(v, v, {});
        CHECK(patch_cost(g, video.images[0], nullptr, {30, 30}, {30, 30}, 5) == 0.0);
    }
    SUBCASE("positional term only") {
        const GuideStack g = flat_guides(20, 12, {0, 1, 0, 0});
        CHECK(patch_cost(g, style, nullptr, {8, 6}, {8, 6}, 5) == 0.0);
        for (int d : {1, 3, 5}) {
            const double expected = 25.0 * (d / 20.0) * (d / 20.0);
            CHECK(patch_cost(g, style, nullptr, {8, 6}, {8 + d, 6}, 5) == doctest::Approx(expected).epsilon(1e-6));
        }
    }
    SUBCASE("appearance offset in one channel") {
        GuideStack g = flat_guides(20, 12, {1, 0, 0, 0});
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 20; ++x) g.appearance_tgt.at(x, y, 1) = 0.6f;
        CHECK(patch_cost(g, style, nullptr, {8, 6}, {11, 5}, 5) == doctest::Approx(25 * 0.01).epsilon(1e-5));
    }
    SUBCASE("style term needs a current output") {
        const GuideStack g = flat_guides(20, 12, {1, 0, 0, 2});
        const Image current(20, 12, 3, 0.5f);
        CHECK(patch_cost(g, style, nullptr, {8, 6}, {8, 6}, 3) == 0.0);
        CHECK(patch_cost(g, style, &current, {8, 6}, {8, 6}, 3) == doctest::Approx(2 * 9 * 3 * 0.04).epsilon(1e-5));
    }
    SUBCASE("out of bounds") {
        const GuideStack g = flat_guides(20, 12, {1, 0, 0, 0});
        CHECK_THROWS_AS(patch_cost(g, style, nullptr, {1, 6}, {8, 6}, 5), Error);
        CHECK_THROWS_AS(patch_cost(g, style, nullptr, {8, 6}, {8, 11}, 5), Error);
    }
}

TEST_CASE("identity field is already optimal on identical guides") {
    auto video = fixtures::translation_video({{0, 0}}, 32, 10);
    const FrameView v{video.dataset.frame(0), video.images[0], video.masks[0]};
    const GuideStack g = build_guides(v, v, {});
    const NNField init = identity_nnf(32, 32, 5);
    const NNField out = nnf_search(g, video.images[0], nullptr, {}, &init);
    CHECK(out.total_cost() == 0.0);
    for (int gy = 0; gy < out.height(); ++gy)
        for (int gx = 0; gx < out.width(); ++gx) CHECK(out.at(gx, gy).source == out.target_center(gx, gy));
}

TEST_CASE("unique motif is found at its source location") {
    GuideStack g = flat_guides(8, 8, {1, 0, 0, 0});
    g.appearance_src = Image(8, 8, 3, 0.0f);
    g.appearance_tgt = Image(8, 8, 3, 0.0f);
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<float> u(0.2f, 1.0f);
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
            for (int c = 0; c < 3; ++c) {
                const float v = u(rng);
                g.appearance_src.at(2 + dx, 2 + dy, c) = v;
                g.appearance_tgt.at(5 + dx, 4 + dy, c) = v;
            }
        }
    }
    const Image style(8, 8, 3, 0.5f);
    SynthesisParams params;
    params.patch_size = 3;
    params.rng_seed = 4;
    const NNField nnf = nnf_search(g, style, nullptr, params);
    const NNField oracle = nnf_brute_force(g, style, nullptr, 3);
    CHECK(oracle.at(4, 3).source == PixelPos{2, 2});
    CHECK(nnf.at(4, 3).source == PixelPos{2, 2});
    CHECK(nnf.at(4, 3).cost == 0.0);
}

TEST_CASE("PatchMatch cost never increases across sweeps") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        const GuideStack g = fixtures::noise_guides(24, 20, seed);
        std::mt19937_64 rng(seed + 100);
        const Image style = fixtures::noise_image(24, 20, 3, rng);
        const Image current = fixtures::noise_image(24, 20, 3, rng);
        SynthesisParams params;
        params.rng_seed = seed;
        SearchTrace trace;
        const NNField nnf = nnf_search(g, style, &current, params, nullptr, &trace);
        REQUIRE(trace.sweep_totals.size() >= 2);
        for (std::size_t i = 1; i < trace.sweep_totals.size(); ++i) CHECK(trace.sweep_totals[i] <= trace.sweep_totals[i - 1]);
        CHECK(nnf.total_cost() == doctest::Approx(trace.sweep_totals.back()).epsilon(1e-6));

        // every entry's stored cost matches direct evaluation and is no better than the exhaustive optimum
        const NNField oracle = nnf_brute_force(g, style, &current, params.patch_size);
        for (int gy = 0; gy < nnf.height(); ++gy) {
            for (int gx = 0; gx < nnf.width(); ++gx) {
                const double direct = patch_cost(g, style, &current, nnf.target_center(gx, gy), nnf.at(gx, gy).source, 5);
                CHECK(nnf.at(gx, gy).cost == doctest::Approx(direct).epsilon(1e-4));
                CHECK(oracle.at(gx, gy).cost <= nnf.at(gx, gy).cost + 1e-6);
            }
        }
    }
}

TEST_CASE("search and synthesis are deterministic for a fixed seed") {
    const GuideStack g = fixtures::noise_guides(40, 36, 9);
    std::mt19937_64 rng(10);
    const Image style = fixtures::noise_image(40, 36, 3, rng);
    SynthesisParams params;
    params.rng_seed = 77;
    CHECK(nnf_search(g, style, nullptr, params) == nnf_search(g, style, nullptr, params));
    CHECK(synthesize_frame(g, style, params) == synthesize_frame(g, style, params));
}

TEST_CASE("degenerate weights are rejected at search time") {
    const GuideStack g = flat_guides(16, 16, {0, 0, 0, 1});
    const Image style(16, 16, 3, 0.5f);
    try {
        nnf_search(g, style, nullptr, {});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("degenerate weights") != std::string::npos);
    }
    CHECK_THROWS_AS(synthesize_frame(g, style, {}), Error);
}

TEST_CASE("vote") {
    SUBCASE("identity field reproduces the style") {
        std::mt19937_64 rng(2);
        const Image style = fixtures::noise_image(12, 9, 3, rng);
        CHECK(vote(identity_nnf(12, 9, 5), style) == style);
    }
    SUBCASE("constant style") {
        NNField nnf(10, 10, 3);
        for (int gy = 0; gy < nnf.height(); ++gy)
            for (int gx = 0; gx < nnf.width(); ++gx) nnf.at(gx, gy).source = {1 + (gx * 3) % 8, 1 + (gy * 5) % 8};
        CHECK(vote(nnf, Image(10, 10, 3, 0.7f)) == Image(10, 10, 3, 0.7f));
    }
    SUBCASE("two overlapping patches average") {
        // target 4x3 with 3x3 patches: centres (1,1) and (2,1)
        Image style(6, 3, 3, 0.2f);
        for (int y = 0; y < 3; ++y)
            for (int x = 3; x < 6; ++x)
                for (int c = 0; c < 3; ++c) style.at(x, y, c) = 0.6f;
        NNField nnf(4, 3, 3);
        nnf.at(0, 0).source = {1, 1};
        nnf.at(1, 0).source = {4, 1};
        const Image out = vote(nnf, style);
        CHECK(out.at(0, 1, 0) == doctest::Approx(0.2));
        CHECK(out.at(1, 1, 0) == doctest::Approx(0.4));
        CHECK(out.at(2, 1, 1) == doctest::Approx(0.4));
        CHECK(out.at(3, 1, 2) == doctest::Approx(0.6));
    }
    SUBCASE("output bounded by the style range") {
        std::mt19937_64 rng(8);
        const Image style = fixtures::noise_image(15, 13, 3, rng);
        NNField nnf(15, 13, 5);
        for (int gy = 0; gy < nnf.height(); ++gy)
            for (int gx = 0; gx < nnf.width(); ++gx)
                nnf.at(gx, gy).source = {2 + static_cast<int>(rng() % 11), 2 + static_cast<int>(rng() % 9)};
        const Image out = vote(nnf, style);
        for (int c = 0; c < 3; ++c) {
            float lo = 1.0f, hi = 0.0f;
            for (int y = 0; y < 13; ++y)
                for (int x = 0; x < 15; ++x) lo = std::min(lo, style.at(x, y, c)), hi = std::max(hi, style.at(x, y, c));
            for (int y = 0; y < 13; ++y) {
                for (int x = 0; x < 15; ++x) {
                    CHECK(out.at(x, y, c) >= lo);
                    CHECK(out.at(x, y, c) <= hi);
                }
            }
        }
    }
    CHECK_THROWS_AS(vote(NNField(), Image(4, 4, 3)), Error);
}

TEST_CASE("upsample_nnf doubles coordinates") {
    const NNField coarse = identity_nnf(16, 16, 5);
    const NNField fine = upsample_nnf(coarse, 32, 32);
    CHECK(fine == identity_nnf(32, 32, 5));
}

TEST_CASE("synthesis params validation") {
    SynthesisParams p;
    CHECK_NOTHROW(p.validate());
    p.patch_size = 4;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.pm_iterations = 0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.em_rounds = 0;
    CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("propagate_sequence") {
    SUBCASE("single frame returns the edit") {
        auto video = fixtures::translation_video({{0, 0}});
        const Image edited = sepia_like(video.images[0]);
        const auto out = propagate_sequence(video.dataset, 0, edited, video.images, video.masks, {});
        REQUIRE(out.size() == 1);
        CHECK(out[0] == edited);
    }
    SUBCASE("static video reproduces the edit") {
        auto video = fixtures::translation_video({{0, 0}, {0, 0}, {0, 0}});
        const Image edited = sepia_like(video.images[0]);
        SynthesisParams params;
        params.rng_seed = 3;
        const auto out = propagate_sequence(video.dataset, 1, edited, video.images, video.masks, params);
        REQUIRE(out.size() == 3);
        CHECK(out[1] == edited);
        for (const Image& img : out) CHECK(psnr(img, edited) >= 40.0);
        CHECK(propagate_sequence(video.dataset, 1, edited, video.images, video.masks, params) == out);
    }
    SUBCASE("misaligned inputs") {
        auto video = fixtures::translation_video({{0, 0}, {1, 0}});
        CHECK_THROWS_AS(propagate_sequence(video.dataset, 2, video.images[0], video.images, video.masks, {}), Error);
        CHECK_THROWS_AS(propagate_sequence(video.dataset, 0, video.images[0], {video.images[0]}, video.masks, {}), Error);
    }
}
