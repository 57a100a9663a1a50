#include <httplib.h>

#include <cstdlib>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "bag/errors.hpp"
#include "bag/gateway.hpp"

using nlohmann::json;

namespace bag {

namespace {

// Splits "https://host:port/v1" into ("https://host:port", "/v1").
std::pair<std::string, std::string> split_base_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError(fmt::format("base url '{}' has no scheme", url));
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, ""};
    std::string path = url.substr(path_start);
    while (!path.empty() && path.back() == '/') path.pop_back();
    return {url.substr(0, path_start), path};
}

bool mentions_extra_field(const std::string& body) {
    return body.find("top_k") != std::string::npos || body.find("min_p") != std::string::npos;
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendConfig config)
    : config_(std::move(config)), send_extras_(config_.extra_decode_fields) {
    if (config_.base_url.empty()) throw ConfigError("no base url configured (BAG_BASE_URL)");
    std::tie(scheme_host_port_, path_prefix_) = split_base_url(config_.base_url);
}

json HttpBackend::request_body(const ChatRequest& request) const {
    json body;
    body["model"] = request.model_id;
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.text}});
    }
    body["messages"] = std::move(messages);
    body["temperature"] = request.params.temperature;
    body["top_p"] = request.params.top_p;
    body["max_tokens"] = request.params.max_tokens;
    if (send_extras_.load()) {
        if (request.params.top_k > 0) body["top_k"] = request.params.top_k;
        if (request.params.min_p > 0.0) body["min_p"] = request.params.min_p;
    }
    return body;
}

json HttpBackend::metadata() const {
    json meta;
    meta["base_url"] = config_.base_url;
    meta["dropped_decode_fields"] =
        extras_dropped_.load() ? json::array({"top_k", "min_p"}) : json::array();
    return meta;
}

std::string HttpBackend::sample(const ChatRequest& request, int /*sample_index*/) {
    calls_.fetch_add(1);
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    const std::string path = path_prefix_ + "/chat/completions";
    for (int pass = 0; pass < 2; ++pass) {
        const bool had_extras = send_extras_.load();
        const auto res = client.Post(path, headers, request_body(request).dump(), "application/json");
        if (!res) {
            throw TransientError(fmt::format("http error: {}", httplib::to_string(res.error())));
        }
        const int status = res->status;
        if (status == 200) {
            try {
                const json j = json::parse(res->body);
                const auto& content = j.at("choices").at(0).at("message").at("content");
                if (!content.is_string() || content.get<std::string>().empty())
                    throw MalformedResponse("response carried no text");
                return content.get<std::string>();
            } catch (const json::exception& e) {
                throw MalformedResponse(fmt::format("unparseable response: {}", e.what()));
            }
        }
        if (status == 401 || status == 403) {
            throw AuthError(fmt::format("HTTP {}: {}", status, res->body.substr(0, 200)));
        }
        if (status == 429 || status == 408 || status >= 500) {
            throw TransientError(fmt::format("HTTP {}", status));
        }
        if (status == 400 && had_extras && mentions_extra_field(res->body)) {
            spdlog::warn("endpoint rejected top_k/min_p; dropping them for this backend");
            send_extras_.store(false);
            extras_dropped_.store(true);
            continue;
        }
        throw BackendUnavailable(fmt::format("HTTP {}: {}", status, res->body.substr(0, 200)));
    }
    throw BackendUnavailable("endpoint rejected request");
}

HttpBackendConfig http_config_from_env() {
    HttpBackendConfig c;
    if (const char* v = std::getenv("BAG_BASE_URL")) c.base_url = v;
    if (const char* v = std::getenv("BAG_API_KEY")) c.api_key = v;
    return c;
}

}  // namespace bag
