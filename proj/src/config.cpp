#include "bag/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "bag/errors.hpp"
#include "bag/text.hpp"

namespace bag {

namespace {

std::string unquote(const std::string& v, int line_no) {
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'')) {
        if (v.back() != v.front()) throw ConfigError(fmt::format("line {}: unterminated string", line_no));
        return v.substr(1, v.size() - 2);
    }
    return v;
}

// Drops a trailing '#' comment outside quotes.
std::string strip_comment(const std::string& line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end)
        throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, v));
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    const auto l = text::to_lower(v);
    if (l == "true" || l == "1" || l == "yes") return true;
    if (l == "false" || l == "0" || l == "no") return false;
    throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, v));
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <typename Enum>
Setter enum_setter(Enum RunConfig::*field, Enum (*parse)(std::string_view)) {
    return [=](RunConfig& c, const std::string& key, const std::string& v) {
        try {
            c.*field = parse(v);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(fmt::format("{}: {}", key, e.what()));
        }
    };
}

void add_decode_keys(std::map<std::string, Setter>& m, const std::string& prefix, ModelSpec RunConfig::*model) {
    m[prefix + "temperature"] = [=](RunConfig& c, const auto& k, const auto& v) {
        (c.*model).decode.temperature = parse_number<double>(k, v);
    };
    m[prefix + "top_p"] = [=](RunConfig& c, const auto& k, const auto& v) {
        (c.*model).decode.top_p = parse_number<double>(k, v);
    };
    m[prefix + "top_k"] = [=](RunConfig& c, const auto& k, const auto& v) {
        (c.*model).decode.top_k = parse_number<int>(k, v);
    };
    m[prefix + "min_p"] = [=](RunConfig& c, const auto& k, const auto& v) {
        (c.*model).decode.min_p = parse_number<double>(k, v);
    };
    m[prefix + "max_tokens"] = [=](RunConfig& c, const auto& k, const auto& v) {
        (c.*model).decode.max_tokens = parse_number<int>(k, v);
    };
    m[prefix + "id"] = [=](RunConfig& c, const auto&, const auto& v) { (c.*model).id = v; };
}

const std::map<std::string, Setter>& setters() {
    static const auto table = [] {
        std::map<std::string, Setter> m;
        m["dataset"] = [](RunConfig& c, const auto&, const auto& v) { c.dataset_path = v; };
        m["setting"] = enum_setter(&RunConfig::setting, &parse_setting);
        m["brevity"] = enum_setter(&RunConfig::brevity, &parse_brevity);
        m["plus"] = [](RunConfig& c, const auto& k, const auto& v) { c.plus = parse_bool(k, v); };
        m["k"] = [](RunConfig& c, const auto& k, const auto& v) { c.k = parse_number<int>(k, v); };
        m["seed"] = [](RunConfig& c, const auto& k, const auto& v) { c.seed = parse_number<std::uint64_t>(k, v); };
        m["concurrency"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.concurrency = parse_number<int>(k, v);
        };
        m["out_dir"] = [](RunConfig& c, const auto&, const auto& v) { c.out_dir = v; };
        m["cache_dir"] = [](RunConfig& c, const auto&, const auto& v) { c.cache_dir = v; };
        m["base_url"] = [](RunConfig& c, const auto&, const auto& v) { c.base_url = v; };
        m["brevity_max_tokens"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.brevity_max_tokens = parse_number<int>(k, v);
        };
        m["decision_max_tokens"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.decision_max_tokens = parse_number<int>(k, v);
        };
        m["consensus_threshold"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.consensus_threshold = parse_number<int>(k, v);
        };
        m["post_clarification_belief"] = [](RunConfig& c, const auto& k, const auto& v) {
            c.post_clarification_belief = parse_bool(k, v);
        };
        add_decode_keys(m, "model.", &RunConfig::model);
        add_decode_keys(m, "judge.", &RunConfig::judge_model);
        add_decode_keys(m, "sim.", &RunConfig::sim_model);
        // Short aliases.
        m["model"] = m["model.id"];
        m["judge_model"] = m["judge.id"];
        m["sim_model"] = m["sim.id"];
        for (const char* k : {"temperature", "top_p", "top_k", "min_p", "max_tokens"})
            m[k] = m[std::string("model.") + k];
        return m;
    }();
    return table;
}

}  // namespace

ConfigMap parse_config(std::string_view text) {
    ConfigMap out;
    std::string section;
    int line_no = 0;
    for (const auto& raw : text::split_lines(text)) {
        ++line_no;
        const std::string line = text::trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(fmt::format("line {}: malformed section header", line_no));
            section = text::trim(std::string_view(line).substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key = value", line_no));
        std::string key = text::trim(std::string_view(line).substr(0, eq));
        if (key.empty()) throw ConfigError(fmt::format("line {}: empty key", line_no));
        if (!section.empty()) key = section + "." + key;
        out[key] = unquote(text::trim(std::string_view(line).substr(eq + 1)), line_no);
    }
    return out;
}

ConfigMap load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

RunConfig apply_config(const ConfigMap& values, RunConfig base) {
    const auto& table = setters();
    for (const auto& [key, value] : values) {
        const auto leaf = key.substr(key.rfind('.') == std::string::npos ? 0 : key.rfind('.') + 1);
        if (leaf == "api_key")
            throw ConfigError(fmt::format("{}: credentials are read from the environment (BAG_API_KEY)", key));
        const auto it = table.find(key);
        if (it == table.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
        it->second(base, key, value);
    }
    return base;
}

const std::vector<std::string>& config_keys() {
    static const auto keys = [] {
        std::vector<std::string> out;
        for (const auto& [k, _] : setters()) out.push_back(k);
        return out;
    }();
    return keys;
}

}  // namespace bag
