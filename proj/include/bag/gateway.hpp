#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bag/types.hpp"

namespace bag {

struct ChatRequest {
    std::string model_id;
    MessageList messages;
    SamplingParams params;
    Purpose purpose{Purpose::Direct};
};

/// Throws std::invalid_argument when the request violates its invariants.
void validate(const ChatRequest& request);

struct ChatResponse {
    std::vector<std::string> texts;
    std::string model_id;
    bool cached{false};
    std::int64_t latency_ms{0};
};

struct CacheKey {
    std::string digest;  // 64 hex chars

    bool operator==(const CacheKey&) const = default;
    auto operator<=>(const CacheKey&) const = default;
};

/// Canonical JSON of (model_id, messages, params) with sorted keys. The
/// purpose tag is routing metadata for the mock and is not part of the key.
std::string canonical_serialization(const ChatRequest& request);
CacheKey cache_key(const ChatRequest& request);

/// A single-sample chat backend. Implementations throw TransientError for
/// retryable failures and AuthError / MalformedResponse / NoScriptMatch
/// otherwise. Must be safe to call from several threads.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string sample(const ChatRequest& request, int sample_index) = 0;
    /// Number of sample() invocations so far, failed ones included.
    virtual std::uint64_t calls() const = 0;
    virtual nlohmann::json metadata() const { return nlohmann::json::object(); }
};

using BackendHandle = std::shared_ptr<Backend>;

// ---------------------------------------------------------------------------
// Content-addressed response cache. One file per (key, sample index), written
// by atomic rename.

struct CacheStats {
    std::size_t entries{0};
    std::uintmax_t bytes{0};
};

class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }

    std::optional<std::string> lookup_sample(const CacheKey& key, int sample_index) const;
    /// Present iff all of samples 0..n-1 are cached. cached=true on the result.
    std::optional<ChatResponse> lookup(const CacheKey& key, int n_samples) const;
    std::optional<ChatResponse> lookup(const ChatRequest& request) const;

    void store_sample(const CacheKey& key, int sample_index, const std::string& request_canonical,
                      const std::string& model_id, const std::string& text) const;

    std::filesystem::path entry_path(const CacheKey& key, int sample_index) const;

    CacheStats stats() const;
    /// Removes every entry; returns the number removed.
    std::size_t purge() const;

private:
    std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------

struct RetryPolicy {
    int max_attempts{6};
    std::chrono::milliseconds base{1000};
    std::chrono::milliseconds cap{60000};
    /// Replaced in tests to avoid real sleeping.
    std::function<void(std::chrono::milliseconds)> sleep;

    /// Exponential backoff with equal jitter for the given 0-based retry.
    std::chrono::milliseconds delay(int retry) const;
};

class Gateway {
public:
    explicit Gateway(BackendHandle backend, std::shared_ptr<ResponseCache> cache = nullptr,
                     RetryPolicy retry = {});

    /// Fans out request.params.n_samples independent single-sample calls
    /// (cached per sample index) and returns them in index order.
    ChatResponse complete(const ChatRequest& request) const;

    Backend& backend() const { return *backend_; }
    const std::shared_ptr<ResponseCache>& cache() const { return cache_; }
    const RetryPolicy& retry_policy() const { return retry_; }

private:
    std::string fetch_with_retry(const ChatRequest& request, int sample_index) const;

    BackendHandle backend_;
    std::shared_ptr<ResponseCache> cache_;
    RetryPolicy retry_;
};

// ---------------------------------------------------------------------------
// Scripted mock backend.

struct ScriptEntry {
    Purpose purpose{Purpose::Direct};
    /// Substrings that must all occur in the last user message (none = any).
    std::vector<std::string> patterns;
    /// Substrings that must each occur in some message of the request.
    std::vector<std::string> context;
    std::vector<std::string> responses;
    /// cycle: response = responses[sample_index % size];
    /// exhaust: sample_index >= size raises NoScriptMatch.
    bool cycle{true};
    /// Number of leading calls on this entry that fail with a transient error.
    int fail_first{0};
    /// When set, every call on this entry raises AuthError.
    bool auth_error{false};
};

class MockBackend : public Backend {
public:
    explicit MockBackend(std::vector<ScriptEntry> script);

    std::string sample(const ChatRequest& request, int sample_index) override;
    std::uint64_t calls() const override { return calls_.load(); }

    /// Copies of every request received, in arrival order.
    std::vector<ChatRequest> requests() const;
    void reset_counters();

private:
    struct Entry {
        ScriptEntry script;
        std::unique_ptr<std::atomic<int>> failures_left;
    };
    std::vector<Entry> entries_;
    std::atomic<std::uint64_t> calls_{0};
    mutable std::mutex log_mutex_;
    std::vector<ChatRequest> log_;
};

/// Builds a handle from a script; equivalent to make_shared<MockBackend>.
std::shared_ptr<MockBackend> mock_register(std::vector<ScriptEntry> script);

/// Script file: JSON array of {purpose, pattern? (string or list), context?, responses[], mode?:
/// "cycle"|"exhaust", fail_first?, auth_error?}.
std::vector<ScriptEntry> load_script(const std::filesystem::path& path);
std::vector<ScriptEntry> script_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// OpenAI-compatible chat-completions client.

struct HttpBackendConfig {
    std::string base_url;  // e.g. https://api.example.com/v1
    std::string api_key;
    std::chrono::seconds timeout{120};
    /// Send top_k / min_p. Turned off automatically when the endpoint rejects them.
    bool extra_decode_fields{true};
};

class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config);

    std::string sample(const ChatRequest& request, int sample_index) override;
    std::uint64_t calls() const override { return calls_.load(); }
    nlohmann::json metadata() const override;

    /// Request body for the given request, honouring the extra-field setting.
    nlohmann::json request_body(const ChatRequest& request) const;

private:
    HttpBackendConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
    std::atomic<bool> send_extras_;
    std::atomic<bool> extras_dropped_{false};
    std::atomic<std::uint64_t> calls_{0};
};

/// Reads BAG_BASE_URL / BAG_API_KEY. Empty strings when unset.
HttpBackendConfig http_config_from_env();

}  // namespace bag
