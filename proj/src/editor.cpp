#include "avatarforge/editor.hpp"

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>

namespace avatarforge {

using nlohmann::json;

void EditRequest::validate() const {
    if (image.empty()) throw Error("edit request: empty image");
    if (!(image_guidance > 0.0) || !(text_guidance > 0.0)) throw Error("edit request: guidance scales must be positive");
    if (steps < 1) throw Error("edit request: steps must be >= 1");
}

std::string base64_encode(const std::vector<unsigned char>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw Error("invalid base64 payload length");
    std::vector<unsigned char> out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw Error("invalid base64 payload");
    std::size_t padding = 0;
    if (!text.empty() && text.back() == '=') ++padding;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
    out.resize(static_cast<std::size_t>(n) - padding);
    return out;
}

std::string edit_request_to_json(const EditRequest& req) {
    const json body{{"image_png_base64", base64_encode(encode_png(req.image))},
                    {"instruction", req.instruction},
                    {"image_guidance", req.image_guidance},
                    {"text_guidance", req.text_guidance},
                    {"steps", req.steps},
                    {"seed", req.seed}};
    return body.dump();
}

EditRequest edit_request_from_json(const std::string& text) {
    const json body = json::parse(text);
    EditRequest req;
    req.image = to_rgb(decode_png(base64_decode(body.at("image_png_base64").get<std::string>())));
    req.instruction = body.at("instruction").get<std::string>();
    req.image_guidance = body.at("image_guidance").get<double>();
    req.text_guidance = body.at("text_guidance").get<double>();
    req.steps = body.at("steps").get<int>();
    req.seed = body.at("seed").get<std::uint64_t>();
    return req;
}

namespace {

struct Endpoint {
    std::string scheme_host_port;
    std::string path_prefix;
};

Endpoint split_endpoint(const std::string& endpoint) {
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) throw Error("editor endpoint must start with http://, got " + endpoint);
    const auto path_begin = endpoint.find('/', scheme_end + 3);
    Endpoint e;
    e.scheme_host_port = endpoint.substr(0, path_begin);
    e.path_prefix = path_begin == std::string::npos ? "" : endpoint.substr(path_begin);
    while (!e.path_prefix.empty() && e.path_prefix.back() == '/') e.path_prefix.pop_back();
    return e;
}

void set_timeouts(httplib::Client& client, double seconds) {
    const auto sec = static_cast<time_t>(seconds);
    const auto usec = static_cast<time_t>((seconds - static_cast<double>(sec)) * 1e6);
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);
}

constexpr int kTransportRetries = 2;

}  // namespace

EditResponse edit_remote(const std::string& endpoint, const EditRequest& request, double timeout_seconds) {
    request.validate();
    if (!(timeout_seconds > 0.0)) throw Error("edit timeout must be positive");
    const Endpoint ep = split_endpoint(endpoint);
    const std::string body = edit_request_to_json(request);
    const auto start = std::chrono::steady_clock::now();

    httplib::Client client(ep.scheme_host_port);
    set_timeouts(client, timeout_seconds);

    std::string last_error;
    for (int attempt = 0; attempt <= kTransportRetries; ++attempt) {
        auto res = client.Post(ep.path_prefix + "/edit", body, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            std::string message = res->body;
            try {
                message = json::parse(res->body).at("error").get<std::string>();
            } catch (const std::exception&) {
            }
            throw Error("editor returned status " + std::to_string(res->status) + ": " + message);
        }
        Image edited;
        try {
            const json reply = json::parse(res->body);
            edited = to_rgb(decode_png(base64_decode(reply.at("image_png_base64").get<std::string>())));
        } catch (const json::exception& e) {
            throw Error(std::string("malformed editor response: ") + e.what());
        }
        if (!edited.same_size(request.image)) {
            throw Error("editor resolution mismatch: sent " + std::to_string(request.image.width()) + "x" +
                        std::to_string(request.image.height()) + ", received " + std::to_string(edited.width()) +
                        "x" + std::to_string(edited.height()));
        }
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        return {std::move(edited), elapsed.count()};
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    throw Error("editor transport failure after " + std::to_string(kTransportRetries) + " retries (" +
                std::to_string(elapsed.count()) + " s): " + last_error);
}

std::string MockSpec::to_string() const {
    std::string s;
    switch (kind) {
        case MockKind::identity: s = "identity"; break;
        case MockKind::sepia: s = "sepia"; break;
        case MockKind::posterize: s = "posterize:" + std::to_string(levels); break;
    }
    if (noise > 0.0) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), ":noise=%g", noise);
        s += buf;
    }
    return s;
}

MockSpec parse_mock_spec(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t begin = 0;
    while (true) {
        const auto end = text.find(':', begin);
        parts.push_back(text.substr(begin, end - begin));
        if (end == std::string::npos) break;
        begin = end + 1;
    }
    MockSpec spec;
    std::size_t next = 1;
    if (parts[0] == "identity") {
        spec.kind = MockKind::identity;
    } else if (parts[0] == "sepia") {
        spec.kind = MockKind::sepia;
    } else if (parts[0] == "posterize") {
        spec.kind = MockKind::posterize;
        if (parts.size() < 2) throw Error("posterize needs a level count, e.g. posterize:4");
        try {
            spec.levels = std::stoi(parts[1]);
        } catch (const std::exception&) {
            throw Error("invalid posterize level count '" + parts[1] + "'");
        }
        if (spec.levels < 2) throw Error("posterize level count must be >= 2");
        next = 2;
    } else {
        throw Error("unknown mock editor kind '" + parts[0] + "'");
    }
    for (; next < parts.size(); ++next) {
        if (parts[next].rfind("noise=", 0) != 0) throw Error("unknown mock editor option '" + parts[next] + "'");
        spec.noise = std::stod(parts[next].substr(6));
        if (!(spec.noise >= 0.0)) throw Error("mock noise must be non-negative");
    }
    return spec;
}

namespace {

std::uint64_t splitmix(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t content_hash(const Image& image) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (float v : image.data()) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int b = 0; b < 4; ++b) {
            h ^= (bits >> (8 * b)) & 0xFFu;
            h *= 0x100000001B3ull;
        }
    }
    return h;
}

// Smooth per-channel noise: a 4x4 lattice of normal deviates, bilinearly upsampled.
void add_smooth_noise(Image& image, double sigma, std::uint64_t seed) {
    constexpr int kLattice = 4;
    std::uint64_t state = seed;
    std::vector<float> lattice(kLattice * kLattice * 3);
    for (auto& v : lattice) {
        const double u1 = (static_cast<double>(splitmix(state) >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(splitmix(state) >> 11) * 0x1.0p-53;
        v = static_cast<float>(sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2));
    }
    Image field(kLattice, kLattice, 3);
    field.data() = lattice;
    const Image up = resize_bilinear(field, image.width(), image.height());
    for (std::size_t i = 0; i < image.data().size(); ++i) image.data()[i] += up.data()[i];
}

}  // namespace

EditResponse edit_mock(const MockSpec& spec, const EditRequest& request) {
    request.validate();
    Image out = to_rgb(request.image);
    switch (spec.kind) {
        case MockKind::identity:
            break;
        case MockKind::sepia: {
            static constexpr float m[3][3] = {{0.393f, 0.769f, 0.189f}, {0.349f, 0.686f, 0.168f}, {0.272f, 0.534f, 0.131f}};
            for (int y = 0; y < out.height(); ++y) {
                for (int x = 0; x < out.width(); ++x) {
                    float* p = out.pixel(x, y);
                    const float r = p[0], g = p[1], b = p[2];
                    for (int c = 0; c < 3; ++c) p[c] = m[c][0] * r + m[c][1] * g + m[c][2] * b;
                }
            }
            break;
        }
        case MockKind::posterize: {
            const float steps = static_cast<float>(spec.levels - 1);
            for (auto& v : out.data()) v = std::round(std::clamp(v, 0.0f, 1.0f) * steps) / steps;
            break;
        }
    }
    if (spec.noise > 0.0) add_smooth_noise(out, spec.noise, request.seed ^ content_hash(request.image));
    if (spec.kind != MockKind::identity || spec.noise > 0.0) clamp01(out);
    return {std::move(out), 0.0};
}

RemoteEditor::RemoteEditor(std::string endpoint, double timeout_seconds)
    : endpoint_(std::move(endpoint)), timeout_(timeout_seconds) {}

EditResponse RemoteEditor::edit(const EditRequest& request) { return edit_remote(endpoint_, request, timeout_); }

std::shared_ptr<Editor> make_editor(const std::string& spec, double timeout_seconds) {
    if (spec.rfind("mock:", 0) == 0) return std::make_shared<MockEditor>(parse_mock_spec(spec.substr(5)));
    if (spec.rfind("http://", 0) == 0) return std::make_shared<RemoteEditor>(spec, timeout_seconds);
    throw Error("editor must be mock:<kind> or an http:// endpoint, got '" + spec + "'");
}

struct EditServer::Impl {
    httplib::Server server;
};

EditServer::EditServer(Handler handler) : impl_(std::make_unique<Impl>()) {
    impl_->server.Post("/edit", [handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
        try {
            const EditRequest edit = edit_request_from_json(req.body);
            const Image out = handler(edit);
            res.set_content(json{{"image_png_base64", base64_encode(encode_png(out))}}.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    });
}

EditServer::~EditServer() { stop(); }

int EditServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind edit server to port " + std::to_string(port));
    return port;
}

void EditServer::listen() { impl_->server.listen_after_bind(); }

void EditServer::stop() { impl_->server.stop(); }

}  // namespace avatarforge
