#include "avatarforge/metrics.hpp"
#include "fixtures.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <sstream>

using namespace avatarforge;

TEST_CASE("psnr") {
    const Image a(8, 8, 3, 0.5f);
    CHECK(psnr(a, a) == kPsnrCap);
    // constant error 0.1 -> MSE 0.01 -> 20 dB
    CHECK(psnr(a, Image(8, 8, 3, 0.6f)) == doctest::Approx(20.0).epsilon(1e-5));

    Image b = a, mask(8, 8, 1, 0.0f);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 4; ++x) {
            mask.at(x, y, 0) = 1.0f;
            for (int c = 0; c < 3; ++c) b.at(x + 4, y, c) = 0.0f;  // error only outside the mask
        }
    }
    CHECK(psnr(a, b, &mask) == kPsnrCap);
    CHECK(psnr(a, b) < 20.0);

    CHECK_THROWS_AS(psnr(a, Image(4, 4, 3)), Error);
    const Image empty_mask(8, 8, 1, 0.0f);
    CHECK_THROWS_AS(psnr(a, b, &empty_mask), Error);
}

TEST_CASE("sharpness") {
    const Image mask(10, 10, 1, 1.0f);
    CHECK(sharpness(Image(10, 10, 3, 0.3f), mask) == doctest::Approx(0.0));
    Image ramp(10, 10, 3);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x)
            for (int c = 0; c < 3; ++c) ramp.at(x, y, c) = 0.05f * x;
    Image interior(10, 10, 1, 0.0f);
    for (int y = 1; y < 9; ++y)
        for (int x = 1; x < 9; ++x) interior.at(x, y, 0) = 1.0f;
    CHECK(sharpness(ramp, interior) == doctest::Approx(0.0).scale(1e-3));

    std::mt19937_64 rng(1);
    const Image noisy = fixtures::noise_image(10, 10, 3, rng);
    CHECK(sharpness(noisy, mask) > sharpness(ramp, mask));
}

TEST_CASE("warp_image with the identity warp") {
    std::mt19937_64 rng(2);
    const Image img = fixtures::noise_image(9, 7, 3, rng);
    WarpField id(9, 7);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 9; ++x) id.at(x, y) = {x, y};
    CHECK(warp_image(img, id) == img);
}

TEST_CASE("temporal consistency") {
    SUBCASE("static frames are perfectly consistent") {
        const auto video = fixtures::translation_video({{0, 0}, {0, 0}, {0, 0}});
        std::vector<std::vector<Eigen::Vector2d>> lms;
        for (const auto& f : video.dataset.frames()) lms.push_back(f.landmarks);
        const auto tc = temporal_consistency(video.images, video.masks, lms);
        CHECK(tc.mean == 0.0);
        CHECK(tc.pairs.size() == 2);
    }
    SUBCASE("translations are compensated by the landmarks") {
        const auto video = fixtures::translation_video({{0, 0}, {3, -2}, {-4, 1}});
        std::vector<std::vector<Eigen::Vector2d>> lms;
        for (const auto& f : video.dataset.frames()) lms.push_back(f.landmarks);
        CHECK(temporal_consistency(video.images, video.masks, lms).mean < 1e-5);

        // ignoring the motion is much worse
        const std::vector<std::vector<Eigen::Vector2d>> frozen(3, lms[0]);
        CHECK(temporal_consistency(video.images, video.masks, frozen).mean > 0.01);
    }
    SUBCASE("flicker is measured") {
        const auto video = fixtures::translation_video({{0, 0}, {0, 0}});
        std::vector<Image> frames = video.images;
        for (auto& v : frames[1].data()) v = std::min(1.0f, v + 0.1f);
        std::vector<std::vector<Eigen::Vector2d>> lms(2, video.dataset.frame(0).landmarks);
        const double expected_max = 0.1 * std::sqrt(3.0);
        const double tc = temporal_consistency(frames, video.masks, lms).mean;
        CHECK(tc > 0.0);
        CHECK(tc <= expected_max + 1e-6);
    }
    CHECK_THROWS_AS(temporal_consistency({Image(4, 4, 3)}, {Image(4, 4, 1)}, {{}}), Error);
}

TEST_CASE("report serialisation") {
    const auto video = fixtures::translation_video({{0, 0}, {2, 0}, {4, 0}});
    std::vector<std::vector<Eigen::Vector2d>> lms;
    for (const auto& f : video.dataset.frames()) lms.push_back(f.landmarks);

    const MetricReport plain = evaluate_frames(video.images, video.masks, lms);
    CHECK_FALSE(plain.mean_psnr);
    CHECK(plain.sharpness.size() == 3);
    CHECK(plain.consistency_pairs.size() == 2);

    const MetricReport ref = evaluate_frames(video.images, video.masks, lms, &video.images);
    REQUIRE(ref.mean_psnr);
    CHECK(*ref.mean_psnr == kPsnrCap);

    const auto j = nlohmann::json::parse(report_to_json(ref, "renders"));
    CHECK(j["label"] == "renders");
    CHECK(j["frames"].size() == 3);
    CHECK(j["temporal_consistency"].get<double>() == doctest::Approx(ref.temporal_consistency));
    CHECK(j.contains("metric_definitions"));

    std::istringstream csv(report_to_csv(ref));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "frame,sharpness,psnr_db,consistency_to_next");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 3);

    const std::vector<Image> short_refs(2, video.images[0]);
    CHECK_THROWS_AS(evaluate_frames(video.images, video.masks, lms, &short_refs), Error);
}
