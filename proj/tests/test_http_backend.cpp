#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "bag/errors.hpp"
#include "bag/gateway.hpp"

using namespace bag;
using nlohmann::json;

namespace {

// A local chat-completions endpoint whose behaviour is chosen per test.
class FakeEndpoint {
public:
    explicit FakeEndpoint(std::function<void(const json&, httplib::Response&)> handler) {
        server_.Post("/v1/chat/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            last_auth = req.get_header_value("Authorization");
            handler(json::parse(req.body), res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeEndpoint() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

    std::atomic<int> hits{0};
    std::string last_auth;

private:
    httplib::Server server_;
    int port_{0};
    std::thread thread_;
};

void reply(httplib::Response& res, const std::string& text) {
    res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}}.dump(),
                    "application/json");
}

ChatRequest request() {
    ChatRequest r;
    r.model_id = "test-model";
    r.messages = {{Role::User, "What is 2+2?"}};
    r.params = {0.6, 0.95, 20, 0.0, 128, 1};
    return r;
}

}  // namespace

TEST_CASE("http backend sends an OpenAI-style body") {
    json seen;
    FakeEndpoint ep([&](const json& body, httplib::Response& res) {
        seen = body;
        reply(res, "4");
    });
    HttpBackend backend({ep.url(), "secret", std::chrono::seconds(5), true});
    CHECK(backend.sample(request(), 0) == "4");
    CHECK(seen["model"] == "test-model");
    CHECK(seen["messages"][0]["role"] == "user");
    CHECK(seen["messages"][0]["content"] == "What is 2+2?");
    CHECK(seen["temperature"] == 0.6);
    CHECK(seen["top_k"] == 20);
    CHECK_FALSE(seen.contains("min_p"));
    CHECK(ep.last_auth == "Bearer secret");
}

TEST_CASE("http status mapping") {
    SUBCASE("401 is an auth error") {
        FakeEndpoint ep([](const json&, httplib::Response& res) { res.status = 401; });
        HttpBackend backend({ep.url(), "", std::chrono::seconds(5), true});
        CHECK_THROWS_AS(backend.sample(request(), 0), AuthError);
    }
    SUBCASE("429 then success is retried by the gateway") {
        std::atomic<int> n{0};
        FakeEndpoint ep([&](const json&, httplib::Response& res) {
            if (n++ < 2)
                res.status = 429;
            else
                reply(res, "done");
        });
        RetryPolicy retry;
        retry.sleep = [](std::chrono::milliseconds) {};
        Gateway gw(std::make_shared<HttpBackend>(HttpBackendConfig{ep.url(), "", std::chrono::seconds(5), true}),
                   nullptr, retry);
        CHECK(gw.complete(request()).texts.front() == "done");
        CHECK(ep.hits == 3);
    }
    SUBCASE("malformed body") {
        FakeEndpoint ep([](const json&, httplib::Response& res) { res.set_content("{}", "application/json"); });
        HttpBackend backend({ep.url(), "", std::chrono::seconds(5), true});
        CHECK_THROWS_AS(backend.sample(request(), 0), MalformedResponse);
    }
    SUBCASE("rejected decode fields are dropped and recorded") {
        FakeEndpoint ep([](const json& body, httplib::Response& res) {
            if (body.contains("top_k")) {
                res.status = 400;
                res.set_content(R"({"error": "unknown field top_k"})", "application/json");
            } else {
                reply(res, "fine");
            }
        });
        HttpBackend backend({ep.url(), "", std::chrono::seconds(5), true});
        CHECK(backend.sample(request(), 0) == "fine");
        CHECK(backend.metadata()["dropped_decode_fields"].size() == 2);
        CHECK_FALSE(backend.request_body(request()).contains("top_k"));
    }
}

TEST_CASE("http backend needs a base url") {
    CHECK_THROWS_AS(HttpBackend(HttpBackendConfig{}), ConfigError);
    CHECK_THROWS_AS(HttpBackend(HttpBackendConfig{"localhost:8080", "", std::chrono::seconds(5), true}), ConfigError);
}
