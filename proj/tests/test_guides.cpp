#include "avatarforge/guides.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace avatarforge;
using Eigen::Vector2d;

TEST_CASE("identical landmarks give the identity warp") {
    const std::vector<Vector2d> lm = {{3, 4}, {10, 2}, {7, 12}};
    const WarpField w = positional_guide(lm, lm, 16, 14);
    for (int y = 0; y < 14; ++y)
        for (int x = 0; x < 16; ++x) CHECK(w.at(x, y) == Vector2d(x, y));
}

TEST_CASE("one displaced landmark shifts every pixel") {
    const std::vector<Vector2d> src = {{13, 6}}, tgt = {{8, 6}};
    const WarpField w = positional_guide(src, tgt, 40, 20);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 35; ++x) CHECK(w.at(x, y) == Vector2d(x + 5, y));
    // clamped to the image on the right edge
    CHECK(w.at(39, 0).x() == 39.0);
}

TEST_CASE("two landmarks: Shepard value at the first target landmark") {
    const std::vector<Vector2d> tgt = {{6, 6}, {20, 14}};
    const std::vector<Vector2d> src = {tgt[0] + Vector2d(4, 0), tgt[1] + Vector2d(0, 4)};
    const WarpField w = positional_guide(src, tgt, 32, 24);

    const Vector2d p(6, 6);
    const double w0 = 1.0 / ((p - tgt[0]).squaredNorm() + 1.0);
    const double w1 = 1.0 / ((p - tgt[1]).squaredNorm() + 1.0);
    const Vector2d expected = p + (w0 * Vector2d(4, 0) + w1 * Vector2d(0, 4)) / (w0 + w1);
    CHECK(w.at(6, 6).x() == doctest::Approx(expected.x()).epsilon(1e-12));
    CHECK(w.at(6, 6).y() == doctest::Approx(expected.y()).epsilon(1e-12));
    CHECK((w.at(6, 6) - src[0]).norm() < 0.05);
}

TEST_CASE("positional_guide rejects bad landmark sets") {
    const std::vector<Vector2d> none, one = {{1, 1}}, two = {{1, 1}, {2, 2}};
    CHECK_THROWS_AS(positional_guide(none, none, 8, 8), Error);
    CHECK_THROWS_AS(positional_guide(one, two, 8, 8), Error);
}

TEST_CASE("translations are reproduced to within half a pixel") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(8.0, 40.0), d(-6.0, 6.0);
    for (int trial = 0; trial < 10; ++trial) {
        const Vector2d shift(d(rng), d(rng));
        std::vector<Vector2d> tgt, src;
        for (int j = 0; j < 6; ++j) {
            tgt.emplace_back(u(rng), u(rng));
            src.push_back(tgt.back() + shift);
        }
        const WarpField w = positional_guide(src, tgt, 48, 48);
        for (int y = 8; y < 40; ++y)
            for (int x = 8; x < 40; ++x) CHECK((w.at(x, y) - (Vector2d(x, y) + shift)).norm() <= 0.5);
    }
}

TEST_CASE("segmentation_guide") {
    Image mask(10, 6, 1);
    for (int y = 0; y < 6; ++y)
        for (int x = 5; x < 10; ++x) mask.at(x, y, 0) = 1.0f;

    CHECK(segmentation_guide(mask, 0) == mask);
    CHECK(segmentation_guide(Image(10, 6, 1, 1.0f), 3) == Image(10, 6, 1, 1.0f));

    // radius 2 across the step: direct 5-tap box convolution
    const Image blurred = segmentation_guide(mask, 2);
    for (int y = 0; y < 6; ++y) {
        for (int x = 0; x < 10; ++x) {
            double sum = 0.0;
            for (int k = -2; k <= 2; ++k) sum += (std::clamp(x + k, 0, 9) >= 5) ? 1.0 : 0.0;
            CHECK(blurred.at(x, y, 0) == doctest::Approx(sum / 5.0).epsilon(1e-6));
        }
    }
    const float ramp[] = {0.0f, 0.2f, 0.4f, 0.6f, 0.8f, 1.0f};
    for (int i = 0; i < 6; ++i) CHECK(blurred.at(2 + i, 0, 0) == doctest::Approx(ramp[i]).epsilon(1e-6));

    CHECK_THROWS_AS(segmentation_guide(Image(4, 4, 3), 1), Error);
}

TEST_CASE("build_guides on the same frame") {
    const auto video = fixtures::translation_video({{0, 0}, {2, 1}});
    const FrameView v{video.dataset.frame(0), video.images[0], video.masks[0]};
    const GuideStack g = build_guides(v, v, {});
    CHECK(g.positional_src == g.positional_tgt);
    CHECK(g.appearance_src == g.appearance_tgt);
    CHECK(g.seg_src == g.seg_tgt);
    CHECK_NOTHROW(g.validate());
}

TEST_CASE("10-pixel translation shifts the positional guide by 10/width") {
    const auto video = fixtures::translation_video({{0, 0}, {10, 0}});
    const FrameView src{video.dataset.frame(0), video.images[0], video.masks[0]};
    const FrameView tgt{video.dataset.frame(1), video.images[1], video.masks[1]};
    const GuideStack g = build_guides(src, tgt, {});
    const int w = g.width();
    for (int y = 0; y < g.height(); ++y) {
        for (int x = 10; x < w; ++x) {
            CHECK(g.positional_tgt.at(x, y, 0) == doctest::Approx(g.positional_src.at(x - 10, y, 0)).epsilon(1e-6));
            CHECK(g.positional_tgt.at(x, y, 1) == doctest::Approx(g.positional_src.at(x, y, 1)).epsilon(1e-6));
        }
    }
}

TEST_CASE("guide channels stay in [0,1] and are deterministic") {
    const auto video = fixtures::translation_video({{-5, 3}, {7, -4}});
    const FrameView src{video.dataset.frame(0), video.images[0], video.masks[0]};
    const FrameView tgt{video.dataset.frame(1), video.images[1], video.masks[1]};
    const GuideStack a = build_guides(src, tgt, {});
    const GuideStack b = build_guides(src, tgt, {});
    for (const Image* img : {&a.appearance_src, &a.appearance_tgt, &a.positional_src, &a.positional_tgt, &a.seg_src,
                             &a.seg_tgt}) {
        for (float v : img->data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    CHECK(a.positional_tgt == b.positional_tgt);
    CHECK(a.seg_tgt == b.seg_tgt);
    CHECK(a.appearance_tgt == b.appearance_tgt);
}

TEST_CASE("guide weights") {
    CHECK_NOTHROW(GuideWeights{0, 0, 0, 1}.validate());
    CHECK(GuideWeights{0, 0, 0, 1}.guides_degenerate());
    CHECK_THROWS_AS(GuideWeights({0, 0, 0, 0}).validate(), Error);
    CHECK_THROWS_AS(GuideWeights({-1, 1, 1, 1}).validate(), Error);
    CHECK_THROWS_AS(GuideWeights({NAN, 1, 1, 1}).validate(), Error);
}
