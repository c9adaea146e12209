#include "avatarforge/editor.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <chrono>
#include <thread>

using namespace avatarforge;

namespace {

EditRequest request_for(const Image& img) {
    EditRequest r;
    r.image = img;
    r.instruction = "make it sepia";
    r.seed = 42;
    return r;
}

Image gradient_image(int w, int h) {
    Image img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>((x * 7 + y * 3 + c * 50) % 256) / 255.0f;
    return img;
}

/// EditServer on a free loopback port, serving from a background thread.
class StubServer {
public:
    explicit StubServer(EditServer::Handler handler) : server_(std::move(handler)) {
        port_ = server_.bind("127.0.0.1", 0);
        thread_ = std::thread([this] { server_.listen(); });
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

private:
    EditServer server_;
    int port_ = 0;
    std::thread thread_;
};

std::string error_text(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("request defaults and validation") {
    EditRequest r = request_for(Image(4, 4, 3));
    CHECK(EditRequest{}.image_guidance == 1.5);
    CHECK(EditRequest{}.text_guidance == 3.5);
    CHECK(EditRequest{}.steps == 100);
    CHECK_NOTHROW(r.validate());
    r.steps = 0;
    CHECK_THROWS_AS(r.validate(), Error);
    r = request_for(Image(4, 4, 3));
    r.text_guidance = 0.0;
    CHECK_THROWS_AS(r.validate(), Error);
    CHECK_THROWS_AS(request_for(Image()).validate(), Error);
}

TEST_CASE("mock editors") {
    const Image img = gradient_image(9, 7);
    CHECK(edit_mock(parse_mock_spec("identity"), request_for(img)).image == img);

    const Image white = edit_mock(parse_mock_spec("sepia"), request_for(Image(2, 2, 3, 1.0f))).image;
    CHECK(white.at(1, 1, 0) == 1.0f);
    CHECK(white.at(1, 1, 1) == 1.0f);
    CHECK(white.at(1, 1, 2) == doctest::Approx(0.937).epsilon(1e-6));

    const Image gray = edit_mock(parse_mock_spec("posterize:2"), request_for(Image(3, 3, 3, 0.4f))).image;
    CHECK(gray == Image(3, 3, 3, 0.0f));
    const Image levels = edit_mock(parse_mock_spec("posterize:3"), request_for(Image(1, 1, 3, 0.6f))).image;
    CHECK(levels.at(0, 0, 0) == doctest::Approx(0.5));
}

TEST_CASE("sepia applies the colour matrix") {
    const Image img = gradient_image(6, 5);
    const Image out = edit_mock(parse_mock_spec("sepia"), request_for(img)).image;
    const double m[3][3] = {{0.393, 0.769, 0.189}, {0.349, 0.686, 0.168}, {0.272, 0.534, 0.131}};
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 6; ++x) {
            for (int r = 0; r < 3; ++r) {
                double v = 0.0;
                for (int c = 0; c < 3; ++c) v += m[r][c] * img.at(x, y, c);
                CHECK(out.at(x, y, r) == doctest::Approx(std::min(v, 1.0)).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("mocks are pure; noise depends on seed and content") {
    const Image img = gradient_image(16, 16);
    const MockSpec noisy = parse_mock_spec("sepia:noise=0.1");
    EditRequest req = request_for(img);
    const Image a = edit_mock(noisy, req).image;
    CHECK(edit_mock(noisy, req).image == a);
    CHECK(req.image == img);
    CHECK(a != edit_mock(parse_mock_spec("sepia"), req).image);
    req.seed = 43;
    CHECK(edit_mock(noisy, req).image != a);
    for (float v : a.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("mock editor descriptors") {
    CHECK(parse_mock_spec("posterize:5").levels == 5);
    CHECK(parse_mock_spec("identity:noise=0.25").noise == 0.25);
    CHECK(parse_mock_spec(parse_mock_spec("posterize:3:noise=0.5").to_string()).levels == 3);
    for (const char* bad : {"blur", "posterize", "posterize:1", "posterize:x", "sepia:strength=2", "sepia:noise=-1"})
        CHECK_THROWS_AS(parse_mock_spec(bad), Error);
    CHECK_THROWS_AS(make_editor("ftp://host"), Error);
    CHECK(make_editor("mock:sepia")->describe() == "mock:sepia");
}

TEST_CASE("base64") {
    CHECK(base64_encode({}) == "");
    CHECK(base64_encode({'f'}) == "Zg==");
    CHECK(base64_encode({'f', 'o'}) == "Zm8=");
    CHECK(base64_encode({'f', 'o', 'o', 'b', 'a', 'r'}) == "Zm9vYmFy");
    std::vector<unsigned char> bytes(1000);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<unsigned char>(i * 37 + 11);
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
    CHECK_THROWS_AS(base64_decode("abc"), Error);
}

TEST_CASE("request JSON round trip") {
    EditRequest r = request_for(gradient_image(5, 4));
    r.image_guidance = 1.25;
    r.steps = 20;
    const EditRequest back = edit_request_from_json(edit_request_to_json(r));
    CHECK(back.image == r.image);
    CHECK(back.instruction == r.instruction);
    CHECK(back.image_guidance == 1.25);
    CHECK(back.text_guidance == 3.5);
    CHECK(back.steps == 20);
    CHECK(back.seed == 42);
}

TEST_CASE("remote editor against stub servers") {
    const Image img = gradient_image(12, 10);

    SUBCASE("echo") {
        StubServer stub([](const EditRequest& r) { return r.image; });
        const EditResponse res = edit_remote(stub.endpoint(), request_for(img), 10.0);
        CHECK(res.image == img);
        CHECK(res.latency_seconds >= 0.0);
    }
    SUBCASE("conditioning reaches the server") {
        EditRequest seen;
        StubServer stub([&seen](const EditRequest& r) {
            seen = r;
            return r.image;
        });
        RemoteEditor editor(stub.endpoint(), 10.0);
        editor.edit(request_for(img));
        CHECK(seen.instruction == "make it sepia");
        CHECK(seen.seed == 42);
        CHECK(seen.steps == 100);
    }
    SUBCASE("wrong size") {
        StubServer stub([](const EditRequest&) { return Image(3, 3, 3, 0.5f); });
        CHECK(error_text([&] { edit_remote(stub.endpoint(), request_for(img), 10.0); }).find("resolution mismatch") !=
              std::string::npos);
    }
    SUBCASE("error status carries the server message") {
        StubServer stub([](const EditRequest&) -> Image { throw Error("model not loaded"); });
        const std::string err = error_text([&] { edit_remote(stub.endpoint(), request_for(img), 10.0); });
        CHECK(err.find("status 400") != std::string::npos);
        CHECK(err.find("model not loaded") != std::string::npos);
    }
    SUBCASE("timeout after retries") {
        StubServer stub([](const EditRequest& r) {
            std::this_thread::sleep_for(std::chrono::milliseconds(700));
            return r.image;
        });
        const double timeout = 0.2;
        const auto start = std::chrono::steady_clock::now();
        const std::string err = error_text([&] { edit_remote(stub.endpoint(), request_for(img), timeout); });
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        CHECK(err.find("after 2 retries") != std::string::npos);
        CHECK(elapsed.count() >= 3 * timeout);
    }
    SUBCASE("unreachable endpoint") {
        CHECK(error_text([&] { edit_remote("http://127.0.0.1:1", request_for(img), 1.0); }).find("transport failure") !=
              std::string::npos);
    }
}

TEST_CASE("counting editor") {
    auto counting = std::make_shared<CountingEditor>(make_editor("mock:identity"));
    const Image img = gradient_image(4, 4);
    for (int i = 0; i < 3; ++i) counting->edit(request_for(img));
    CHECK(counting->calls() == 3);
}
