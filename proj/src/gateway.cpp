#include "bag/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <future>
#include <random>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "bag/errors.hpp"
#include "bag/hash.hpp"
#include "bag/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bag {

void validate(const ChatRequest& request) {
    if (request.model_id.empty()) throw std::invalid_argument("model_id is empty");
    if (request.messages.empty()) throw std::invalid_argument("messages is empty");
    if (request.messages.front().role == Role::Assistant)
        throw std::invalid_argument("first message must be system or user");
    validate(request.params);
}

std::string canonical_serialization(const ChatRequest& request) {
    json j;
    j["model_id"] = request.model_id;
    j["messages"] = request.messages;
    j["params"] = request.params;
    // nlohmann::json objects are key-sorted, so dump() is canonical.
    return j.dump();
}

CacheKey cache_key(const ChatRequest& request) {
    return CacheKey{sha256_hex(canonical_serialization(request))};
}

// ---------------------------------------------------------------------------

namespace {

std::string utc_now_iso() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string read_entry(const fs::path& path, const CacheKey& key, int sample_index) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw CacheCorrupt(fmt::format("{}: {}", path.string(), e.what()));
    }
    try {
        if (j.at("key").get<std::string>() != key.digest)
            throw CacheCorrupt(fmt::format("{}: key mismatch", path.string()));
        if (j.at("sample_index").get<int>() != sample_index)
            throw CacheCorrupt(fmt::format("{}: sample index mismatch", path.string()));
        if (sha256_hex(j.at("request_canonical").get<std::string>()) != key.digest)
            throw CacheCorrupt(fmt::format("{}: request digest mismatch", path.string()));
        const auto& texts = j.at("texts");
        if (!texts.is_array() || texts.size() != 1 || !texts[0].is_string())
            throw CacheCorrupt(fmt::format("{}: bad texts field", path.string()));
        return texts[0].get<std::string>();
    } catch (const json::exception& e) {
        throw CacheCorrupt(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
}

fs::path ResponseCache::entry_path(const CacheKey& key, int sample_index) const {
    return dir_ / key.digest.substr(0, 2) / fmt::format("{}_{}.json", key.digest, sample_index);
}

std::optional<std::string> ResponseCache::lookup_sample(const CacheKey& key,
                                                        int sample_index) const {
    const auto path = entry_path(key, sample_index);
    std::error_code ec;
    if (!fs::exists(path, ec)) return std::nullopt;
    try {
        return read_entry(path, key, sample_index);
    } catch (const CacheCorrupt& e) {
        spdlog::warn("ignoring corrupt cache entry: {}", e.what());
        return std::nullopt;
    }
}

std::optional<ChatResponse> ResponseCache::lookup(const CacheKey& key, int n_samples) const {
    ChatResponse out;
    out.cached = true;
    for (int i = 0; i < n_samples; ++i) {
        auto text = lookup_sample(key, i);
        if (!text) return std::nullopt;
        out.texts.push_back(std::move(*text));
    }
    // model_id is recoverable from the entry but callers already hold it.
    return out;
}

std::optional<ChatResponse> ResponseCache::lookup(const ChatRequest& request) const {
    auto r = lookup(cache_key(request), request.params.n_samples);
    if (r) r->model_id = request.model_id;
    return r;
}

void ResponseCache::store_sample(const CacheKey& key, int sample_index,
                                 const std::string& request_canonical,
                                 const std::string& model_id, const std::string& text) const {
    const auto path = entry_path(key, sample_index);
    fs::create_directories(path.parent_path());
    json j;
    j["key"] = key.digest;
    j["sample_index"] = sample_index;
    j["request_canonical"] = request_canonical;
    j["texts"] = json::array({text});
    j["created_at"] = utc_now_iso();
    j["model_id"] = model_id;

    static std::atomic<std::uint64_t> counter{0};
    const auto tmp = path.parent_path() /
                     fmt::format(".tmp-{}-{}-{}", key.digest.substr(0, 12),
                                 std::hash<std::thread::id>{}(std::this_thread::get_id()),
                                 counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << j.dump();
        if (!out) throw std::runtime_error("cannot write cache entry " + tmp.string());
    }
    fs::rename(tmp, path);
}

CacheStats ResponseCache::stats() const {
    CacheStats s;
    if (!fs::exists(dir_)) return s;
    for (const auto& e : fs::recursive_directory_iterator(dir_)) {
        if (e.is_regular_file() && e.path().extension() == ".json") {
            ++s.entries;
            s.bytes += e.file_size();
        }
    }
    return s;
}

std::size_t ResponseCache::purge() const {
    std::size_t n = 0;
    if (!fs::exists(dir_)) return n;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir_)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    for (const auto& f : files) n += fs::remove(f) ? 1 : 0;
    return n;
}

// ---------------------------------------------------------------------------

std::chrono::milliseconds RetryPolicy::delay(int retry) const {
    const double raw = static_cast<double>(base.count()) * std::pow(2.0, retry);
    const double capped = std::min(raw, static_cast<double>(cap.count()));
    thread_local std::mt19937_64 rng{std::random_device{}()};
    std::uniform_real_distribution<double> jitter(0.0, capped / 2.0);
    return std::chrono::milliseconds(static_cast<std::int64_t>(capped / 2.0 + jitter(rng)));
}

Gateway::Gateway(BackendHandle backend, std::shared_ptr<ResponseCache> cache, RetryPolicy retry)
    : backend_(std::move(backend)), cache_(std::move(cache)), retry_(std::move(retry)) {
    if (!backend_) throw std::invalid_argument("gateway requires a backend");
    if (retry_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
    if (!retry_.sleep) {
        retry_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
}

std::string Gateway::fetch_with_retry(const ChatRequest& request, int sample_index) const {
    std::string last_error;
    for (int attempt = 0; attempt < retry_.max_attempts; ++attempt) {
        if (attempt > 0) retry_.sleep(retry_.delay(attempt - 1));
        try {
            std::string text = backend_->sample(request, sample_index);
            if (text.empty()) throw MalformedResponse("backend returned no text");
            return text;
        } catch (const TransientError& e) {
            last_error = e.what();
        }
    }
    throw BackendUnavailable(
        fmt::format("gave up after {} attempts: {}", retry_.max_attempts, last_error));
}

ChatResponse Gateway::complete(const ChatRequest& request) const {
    validate(request);
    const auto start = std::chrono::steady_clock::now();
    const int n = request.params.n_samples;
    const CacheKey key = cache_key(request);
    const std::string canonical = canonical_serialization(request);

    std::vector<std::optional<std::string>> texts(n);
    std::vector<int> missing;
    for (int i = 0; i < n; ++i) {
        if (cache_) texts[i] = cache_->lookup_sample(key, i);
        if (!texts[i]) missing.push_back(i);
    }

    auto fetch = [&](int i) {
        std::string text = fetch_with_retry(request, i);
        if (cache_) cache_->store_sample(key, i, canonical, request.model_id, text);
        return text;
    };

    std::vector<std::exception_ptr> errors;
    if (missing.size() == 1) {
        try {
            texts[missing.front()] = fetch(missing.front());
        } catch (...) {
            errors.push_back(std::current_exception());
        }
    } else if (!missing.empty()) {
        std::vector<std::future<std::string>> futures;
        futures.reserve(missing.size());
        for (int i : missing) futures.push_back(std::async(std::launch::async, fetch, i));
        for (std::size_t j = 0; j < missing.size(); ++j) {
            try {
                texts[missing[j]] = futures[j].get();
            } catch (...) {
                errors.push_back(std::current_exception());
            }
        }
    }

    if (!errors.empty()) {
        if (errors.size() == static_cast<std::size_t>(n)) std::rethrow_exception(errors.front());
        std::string first;
        try {
            std::rethrow_exception(errors.front());
        } catch (const std::exception& e) {
            first = e.what();
        }
        throw PartialFailure(errors.size(), static_cast<std::size_t>(n), first);
    }

    ChatResponse out;
    out.model_id = request.model_id;
    out.cached = missing.empty();
    out.texts.reserve(n);
    for (auto& t : texts) out.texts.push_back(std::move(*t));
    out.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    return out;
}

// ---------------------------------------------------------------------------

MockBackend::MockBackend(std::vector<ScriptEntry> script) {
    entries_.reserve(script.size());
    for (auto& s : script) {
        const int fails = s.fail_first;
        entries_.push_back(Entry{std::move(s), std::make_unique<std::atomic<int>>(fails)});
    }
}

std::string MockBackend::sample(const ChatRequest& request, int sample_index) {
    calls_.fetch_add(1);
    {
        std::lock_guard lock(log_mutex_);
        log_.push_back(request);
    }
    std::string_view last_user;
    for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
        if (it->role == Role::User) {
            last_user = it->text;
            break;
        }
    }
    for (auto& entry : entries_) {
        const auto& s = entry.script;
        if (s.purpose != request.purpose) continue;
        const bool matched = std::all_of(s.patterns.begin(), s.patterns.end(), [&](const auto& p) {
            return last_user.find(p) != std::string_view::npos;
        });
        if (!matched) continue;
        const bool in_context = std::all_of(s.context.begin(), s.context.end(), [&](const auto& p) {
            return std::any_of(request.messages.begin(), request.messages.end(),
                               [&](const Message& m) { return m.text.find(p) != std::string::npos; });
        });
        if (!in_context) continue;
        if (s.auth_error) throw AuthError("mock: authentication rejected");
        if (entry.failures_left->fetch_sub(1) > 0) throw TransientError("mock: scripted failure");
        if (s.responses.empty()) throw NoScriptMatch("mock: entry has no responses");
        const auto idx = static_cast<std::size_t>(sample_index);
        if (!s.cycle && idx >= s.responses.size())
            throw NoScriptMatch(fmt::format("mock: script exhausted for purpose {} at sample {}",
                                            to_string(s.purpose), sample_index));
        return s.responses[idx % s.responses.size()];
    }
    throw NoScriptMatch(fmt::format("mock: no script entry for purpose {} (last user message: {:.80})",
                                    to_string(request.purpose), last_user));
}

std::vector<ChatRequest> MockBackend::requests() const {
    std::lock_guard lock(log_mutex_);
    return log_;
}

void MockBackend::reset_counters() {
    calls_.store(0);
    std::lock_guard lock(log_mutex_);
    log_.clear();
}

std::shared_ptr<MockBackend> mock_register(std::vector<ScriptEntry> script) {
    return std::make_shared<MockBackend>(std::move(script));
}

std::vector<ScriptEntry> script_from_json(const json& j) {
    if (!j.is_array()) throw std::invalid_argument("mock script must be a JSON array");
    std::vector<ScriptEntry> out;
    for (const auto& e : j) {
        ScriptEntry s;
        s.purpose = parse_purpose(e.at("purpose").get<std::string>());
        if (e.contains("pattern") && !e["pattern"].is_null()) {
            if (e["pattern"].is_array())
                s.patterns = e["pattern"].get<std::vector<std::string>>();
            else
                s.patterns.push_back(e["pattern"].get<std::string>());
        }
        if (e.contains("context")) s.context = e["context"].get<std::vector<std::string>>();
        s.responses = e.at("responses").get<std::vector<std::string>>();
        const std::string mode = e.value("mode", "cycle");
        if (mode != "cycle" && mode != "exhaust")
            throw std::invalid_argument("mock script mode must be cycle or exhaust");
        s.cycle = mode == "cycle";
        s.fail_first = e.value("fail_first", 0);
        s.auth_error = e.value("auth_error", false);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ScriptEntry> load_script(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open mock script " + path.string());
    return script_from_json(json::parse(in));
}

}  // namespace bag
