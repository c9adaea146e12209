#pragma once

#include "avatarforge/image.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace avatarforge {

/// Conditioning for one instruction-driven edit of the exemplar frame.
struct EditRequest {
    Image image;              // unedited exemplar (image conditioning)
    std::string instruction;  // text conditioning
    double image_guidance = 1.5;
    double text_guidance = 3.5;
    int steps = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EditResponse {
    Image image;
    double latency_seconds = 0.0;
};

class Editor {
public:
    virtual ~Editor() = default;
    virtual EditResponse edit(const EditRequest& request) = 0;
    virtual std::string describe() const = 0;
};

inline constexpr double kDefaultEditTimeout = 600.0;

/// POST {endpoint}/edit with the request as JSON (image as base64 PNG).
/// Transport failures are retried twice; non-success statuses surface the
/// server's error text; the decoded image must match the request size.
EditResponse edit_remote(const std::string& endpoint, const EditRequest& request,
                         double timeout_seconds = kDefaultEditTimeout);

enum class MockKind { identity, sepia, posterize };

/// Deterministic stand-in editors. With noise > 0 a smooth colour field,
/// seeded by the request seed and the image content, is added after the
/// base edit, so different frames get different "details" under one seed.
struct MockSpec {
    MockKind kind = MockKind::identity;
    int levels = 4;  // posterize only
    double noise = 0.0;

    std::string to_string() const;
};

/// Parses "identity", "sepia", "posterize:K", each optionally followed by ":noise=S".
MockSpec parse_mock_spec(const std::string& text);

EditResponse edit_mock(const MockSpec& spec, const EditRequest& request);

class RemoteEditor final : public Editor {
public:
    explicit RemoteEditor(std::string endpoint, double timeout_seconds = kDefaultEditTimeout);
    EditResponse edit(const EditRequest& request) override;
    std::string describe() const override { return endpoint_; }

private:
    std::string endpoint_;
    double timeout_;
};

class MockEditor final : public Editor {
public:
    explicit MockEditor(MockSpec spec) : spec_(spec) {}
    EditResponse edit(const EditRequest& request) override { return edit_mock(spec_, request); }
    std::string describe() const override { return "mock:" + spec_.to_string(); }

private:
    MockSpec spec_;
};

/// Forwards to another editor and counts the calls.
class CountingEditor final : public Editor {
public:
    explicit CountingEditor(std::shared_ptr<Editor> inner) : inner_(std::move(inner)) {}
    EditResponse edit(const EditRequest& request) override {
        ++calls_;
        return inner_->edit(request);
    }
    std::string describe() const override { return inner_->describe(); }
    int calls() const { return calls_.load(); }

private:
    std::shared_ptr<Editor> inner_;
    std::atomic<int> calls_{0};
};

/// "mock:<spec>" or an http:// endpoint.
std::shared_ptr<Editor> make_editor(const std::string& spec, double timeout_seconds = kDefaultEditTimeout);

std::string base64_encode(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> base64_decode(const std::string& text);

std::string edit_request_to_json(const EditRequest& request);
EditRequest edit_request_from_json(const std::string& body);

/// Minimal HTTP edit service speaking the same protocol as edit_remote;
/// used for local testing with the mock editors.
class EditServer {
public:
    using Handler = std::function<Image(const EditRequest&)>;

    explicit EditServer(Handler handler);
    ~EditServer();
    EditServer(const EditServer&) = delete;
    EditServer& operator=(const EditServer&) = delete;

    /// Binds to host:port (port 0 picks a free port) and returns the port.
    int bind(const std::string& host, int port = 0);
    /// Serves until stop() is called.
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace avatarforge
