#include "bag/prompts.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "bag/errors.hpp"
#include "bag/hash.hpp"
#include "bag/prompt_assets.hpp"
#include "bag/text.hpp"

using nlohmann::json;

namespace bag {

namespace {

constexpr std::array<std::pair<PromptKind, std::string_view>, 14> kKinds{{
    {PromptKind::Direct, "direct"},
    {PromptKind::Disambig, "disambig"},
    {PromptKind::Sag, "sag"},
    {PromptKind::Bag1, "bag1"},
    {PromptKind::Bag2, "bag2"},
    {PromptKind::Bag3, "bag3"},
    {PromptKind::SagPlusFinal, "sag_plus_final"},
    {PromptKind::BagPlusFinal, "bag_plus_final"},
    {PromptKind::UserSimAmbiguous, "user_sim_ambiguous"},
    {PromptKind::UserSimUnambiguous, "user_sim_unambiguous"},
    {PromptKind::JudgeOne, "judge_one"},
    {PromptKind::JudgeAny, "judge_any"},
    {PromptKind::ClusterAssign, "cluster_assign"},
    {PromptKind::StrategyClassify, "strategy_classify"},
}};

std::string_view strip_final_newline(std::string_view s) {
    if (!s.empty() && s.back() == '\n') s.remove_suffix(1);
    return s;
}

bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

}  // namespace

std::string_view to_string(PromptKind kind) {
    for (const auto& [k, name] : kKinds)
        if (k == kind) return name;
    return "?";
}

PromptKind parse_prompt_kind(std::string_view s) {
    for (const auto& [k, name] : kKinds)
        if (name == s) return k;
    throw std::invalid_argument(fmt::format("unknown prompt kind '{}'", s));
}

bool is_strategy_kind(PromptKind kind) {
    switch (kind) {
        case PromptKind::Sag:
        case PromptKind::Bag1:
        case PromptKind::Bag2:
        case PromptKind::Bag3:
        case PromptKind::SagPlusFinal:
        case PromptKind::BagPlusFinal:
            return true;
        default:
            return false;
    }
}

// ---------------------------------------------------------------------------

std::vector<std::string> find_placeholders(std::string_view t) {
    std::set<std::string> names;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] == '{') {
            if (i + 1 < t.size() && t[i + 1] == '{') {
                ++i;
                continue;
            }
            const auto close = t.find('}', i);
            if (close == std::string_view::npos)
                throw std::logic_error("unterminated placeholder in template");
            std::string name(t.substr(i + 1, close - i - 1));
            if (name.empty() || !std::all_of(name.begin(), name.end(), is_ident_char))
                throw std::logic_error(fmt::format("bad placeholder '{{{}}}' in template", name));
            names.insert(std::move(name));
            i = close;
        } else if (t[i] == '}' && i + 1 < t.size() && t[i + 1] == '}') {
            ++i;
        }
    }
    return {names.begin(), names.end()};
}

std::string substitute(std::string_view t, const SlotMap& slots) {
    const auto declared = find_placeholders(t);
    for (const auto& [name, value] : slots) {
        if (!std::binary_search(declared.begin(), declared.end(), name)) throw UnknownSlot(name);
    }
    for (const auto& name : declared) {
        if (!slots.contains(name)) throw MissingSlot(name);
    }
    std::string out;
    out.reserve(t.size() + 256);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const char c = t[i];
        if (c == '{' && i + 1 < t.size() && t[i + 1] == '{') {
            out.push_back('{');
            ++i;
        } else if (c == '}' && i + 1 < t.size() && t[i + 1] == '}') {
            out.push_back('}');
            ++i;
        } else if (c == '{') {
            const auto close = t.find('}', i);
            out += slots.find(t.substr(i + 1, close - i - 1))->second;
            i = close;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

PromptCatalog::PromptCatalog() {
    const auto assets = detail::prompt_assets();
    auto find_asset = [&](std::string_view file) -> std::string_view {
        for (const auto& a : assets)
            if (a.file == file) return a.content;
        throw std::logic_error(fmt::format("prompt asset '{}' is not embedded", file));
    };

    std::string digest_input;
    for (const auto& a : assets) {
        digest_input += a.file;
        digest_input += '\0';
        digest_input += a.content;
        digest_input += '\0';
    }
    digest_ = sha256_hex(digest_input);

    const json manifest = json::parse(find_asset("manifest.json"));
    version_ = manifest.at("version").get<std::string>();
    for (const auto& entry : manifest.at("prompts")) {
        PromptTemplate t;
        t.kind = parse_prompt_kind(entry.at("kind").get<std::string>());
        t.file = entry.at("file").get<std::string>();
        t.placeholders = entry.at("placeholders").get<std::vector<std::string>>();
        std::sort(t.placeholders.begin(), t.placeholders.end());
        t.text = strip_final_newline(find_asset(t.file));
        if (find_placeholders(t.text) != t.placeholders)
            throw std::logic_error(
                fmt::format("prompt '{}' placeholders disagree with the manifest", t.file));
        templates_.push_back(std::move(t));
    }
    for (const auto& [kind, name] : kKinds) {
        (void)get(kind);
    }
}

const PromptCatalog& PromptCatalog::instance() {
    static const PromptCatalog catalog;
    return catalog;
}

const PromptTemplate& PromptCatalog::get(PromptKind kind) const {
    for (const auto& t : templates_)
        if (t.kind == kind) return t;
    throw std::logic_error(fmt::format("prompt kind '{}' missing from manifest", to_string(kind)));
}

MessageList render(PromptKind kind, const SlotMap& slots) {
    const auto& t = PromptCatalog::instance().get(kind);
    return {Message{Role::User, substitute(t.text, slots)}};
}

std::string format_belief_state(std::span<const std::string> samples) {
    std::string out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (i) out.push_back('\n');
        out += fmt::format("{}. {}", i + 1, samples[i]);
    }
    return out;
}

std::string_view brevity_instruction(Brevity mode) {
    switch (mode) {
        case Brevity::Concise:
            return "Please provide a concise answer to the following question:";
        case Brevity::Sentence:
            return "Please provide a short answer of at most 1 sentence to the following question";
        case Brevity::Free:
            break;
    }
    return "";
}

std::string apply_brevity(std::string_view question, Brevity mode) {
    if (mode == Brevity::Free) return std::string(question);
    return fmt::format("{}\n{}", brevity_instruction(mode), question);
}

// ---------------------------------------------------------------------------

namespace {

std::string header_alternation(std::span<const std::string_view> headers) {
    std::string alt;
    for (const auto h : headers) {
        if (!alt.empty()) alt += '|';
        for (char c : h) alt += (c == ' ') ? std::string("[ _]") : std::string(1, c);
    }
    return alt;
}

std::string canonical_header(std::string_view matched) {
    std::string h = text::to_upper(matched);
    std::replace(h.begin(), h.end(), '_', ' ');
    return h;
}

bool strip_wrapping(std::string& s, std::string_view open, std::string_view close) {
    if (s.size() < open.size() + close.size()) return false;
    if (s.compare(0, open.size(), open) != 0) return false;
    if (s.compare(s.size() - close.size(), close.size(), close) != 0) return false;
    if (open == "[") {
        // Only strip when the opening bracket closes at the very end.
        int depth = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '[') ++depth;
            if (s[i] == ']' && --depth == 0 && i + 1 != s.size()) return false;
        }
    }
    s = text::trim(std::string_view(s).substr(open.size(), s.size() - open.size() - close.size()));
    return true;
}

std::string clean_value(std::string_view v) {
    std::string s = text::trim(v);
    bool changed = true;
    while (changed) {
        changed = strip_wrapping(s, "**", "**") || strip_wrapping(s, "[", "]") ||
                  strip_wrapping(s, "__", "__");
    }
    // The header match may already have eaten the opening marker of a bold value.
    for (std::string_view mark : {"**", "__"}) {
        if (s.size() >= mark.size() && s.ends_with(mark) && s.find(mark) == s.size() - mark.size())
            s = text::trim(std::string_view(s).substr(0, s.size() - mark.size()));
        if (s.starts_with(mark) && s.find(mark, mark.size()) == std::string::npos)
            s = text::trim(std::string_view(s).substr(mark.size()));
    }
    return s;
}

std::optional<Strategy> match_strategy(std::string_view value) {
    std::string first = text::trim(text::split_lines(value).front());
    if (auto paren = first.find('('); paren != std::string::npos) first.resize(paren);
    std::string token;
    for (char c : first) {
        if (c == '*' || c == '[' || c == ']' || c == '"' || c == '\'' || c == '`') continue;
        token.push_back(c);
    }
    token = text::trim(token);
    while (!token.empty() && std::string_view(".!,;:").find(token.back()) != std::string_view::npos)
        token.pop_back();
    token = text::to_upper(text::trim(token));
    std::string norm;
    for (char c : token) {
        const char d = (c == ' ' || c == '-' || c == '\t') ? '_' : c;
        if (d == '_' && !norm.empty() && norm.back() == '_') continue;
        norm.push_back(d);
    }
    for (Strategy s : {Strategy::DirectAnswer, Strategy::ClarificationQuestion, Strategy::Abstain}) {
        if (norm == to_string(s)) return s;
    }
    return std::nullopt;
}

std::vector<ClusterLine> parse_cluster_lines(std::string_view body) {
    static const std::regex re(
        R"(^\s*(?:[-*]\s*)?\[?([A-Za-z]{1,2})\]?\s*\(\s*(\d+)\s*/\s*(\d+)\s*\)\s*[:\-]?\s*(.*)$)");
    std::vector<ClusterLine> out;
    for (const auto& line : text::split_lines(body)) {
        std::smatch m;
        if (std::regex_match(line, m, re)) {
            out.push_back(ClusterLine{text::to_upper(m[1].str()), std::stoi(m[2].str()),
                                      std::stoi(m[3].str()), clean_value(m[4].str())});
        }
    }
    return out;
}

std::vector<InterpretationLine> parse_interpretation_lines(std::string_view body) {
    static const std::regex re(R"(^\s*(?:[-*]\s*)?\[?([A-Za-z]{1,2})\]?\s*(?:->|→|:|–|-)\s*(.*)$)");
    std::vector<InterpretationLine> out;
    for (const auto& line : text::split_lines(body)) {
        std::smatch m;
        if (std::regex_match(line, m, re)) {
            out.push_back(InterpretationLine{text::to_upper(m[1].str()), clean_value(m[2].str())});
        }
    }
    return out;
}

}  // namespace

std::map<std::string, std::string> parse_sections(std::string_view raw,
                                                  std::span<const std::string_view> headers) {
    const std::regex re(
        R"(^\s*(?:#+\s*)?(?:[-*]\s+)?(?:\*\*|__)?\[?\s*()" + header_alternation(headers) +
            R"()\s*\]?(?:\*\*|__)?\s*(?:\(turn\s*\d\))?\s*(?:\*\*|__)?\s*:\s*(?:\*\*|__)?(.*)$)",
        std::regex::icase);

    std::map<std::string, std::string> sections;
    std::string current;
    std::vector<std::string> buffer;
    auto flush = [&] {
        if (!current.empty() && !sections.contains(current)) {
            sections[current] = text::trim(text::join(buffer, "\n"));
        }
        buffer.clear();
    };
    for (const auto& line : text::split_lines(raw)) {
        std::smatch m;
        if (std::regex_match(line, m, re)) {
            flush();
            current = canonical_header(m[1].str());
            buffer.push_back(m[2].str());
        } else if (!current.empty()) {
            buffer.push_back(line);
        }
    }
    flush();
    return sections;
}

StrategyDecision parse_decision(std::string_view raw, PromptKind kind) {
    if (!is_strategy_kind(kind))
        throw std::invalid_argument(
            fmt::format("prompt kind '{}' does not produce strategy decisions", to_string(kind)));
    static constexpr std::array<std::string_view, 6> kHeaders{
        "STRATEGY", "REASONING", "RESPONSE", "CLUSTERS", "INTERPRETATIONS", "CONSENSUS"};
    const auto sections = parse_sections(raw, kHeaders);

    const auto strategy_it = sections.find("STRATEGY");
    if (strategy_it == sections.end() || strategy_it->second.empty())
        throw UnparseableStrategy("no STRATEGY header");
    const auto strategy = match_strategy(strategy_it->second);
    if (!strategy)
        throw UnparseableStrategy(
            fmt::format("unrecognized strategy '{}'", text::split_lines(strategy_it->second).front()));
    if ((kind == PromptKind::BagPlusFinal || kind == PromptKind::SagPlusFinal) &&
        *strategy == Strategy::ClarificationQuestion)
        throw UnparseableStrategy(
            fmt::format("CLARIFICATION_QUESTION is not allowed for {}", to_string(kind)));

    StrategyDecision d;
    d.strategy = *strategy;
    d.raw = std::string(raw);
    if (auto it = sections.find("REASONING"); it != sections.end()) d.reasoning = clean_value(it->second);
    if (auto it = sections.find("RESPONSE"); it != sections.end()) d.response = clean_value(it->second);
    if (d.strategy != Strategy::Abstain && d.response.empty())
        throw UnparseableStrategy(fmt::format("{} without a RESPONSE", to_string(d.strategy)));

    if (kind == PromptKind::Bag3) {
        if (auto it = sections.find("CLUSTERS"); it != sections.end())
            d.clusters = parse_cluster_lines(it->second);
        if (auto it = sections.find("INTERPRETATIONS"); it != sections.end())
            d.interpretations = parse_interpretation_lines(it->second);
    }
    if (kind == PromptKind::BagPlusFinal) {
        if (auto it = sections.find("CONSENSUS"); it != sections.end())
            d.consensus = clean_value(it->second);
    }
    return d;
}

std::string canonical_format(Strategy strategy, std::string_view reasoning,
                             std::string_view response) {
    return fmt::format("STRATEGY: {}\nREASONING: {}\nRESPONSE: {}", to_string(strategy), reasoning,
                       response);
}

UserAnswer parse_user_answer(std::string_view raw) {
    static constexpr std::array<std::string_view, 2> kHeaders{"REASONING", "USER ANSWER"};
    const auto sections = parse_sections(raw, kHeaders);
    UserAnswer out;
    const auto it = sections.find("USER ANSWER");
    if (it == sections.end() || clean_value(it->second).empty()) {
        out.answer = text::trim(raw);
        out.fallback = true;
        return out;
    }
    out.answer = clean_value(it->second);
    if (auto r = sections.find("REASONING"); r != sections.end()) out.reasoning = clean_value(r->second);
    return out;
}

ParsedVerdict parse_verdict(std::string_view raw) {
    static constexpr std::array<std::string_view, 2> kHeaders{"REASONING", "VERDICT"};
    const auto sections = parse_sections(raw, kHeaders);
    const auto it = sections.find("VERDICT");
    if (it == sections.end()) throw UnparseableVerdict("no VERDICT line");
    std::string word;
    for (char c : it->second) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!word.empty()) {
            break;
        }
    }
    if (word.empty()) throw UnparseableVerdict("empty VERDICT line");
    if (word != "yes" && word != "no") throw UnparseableVerdict(fmt::format("verdict '{}' is neither yes nor no", word));
    ParsedVerdict v;
    v.verdict = word == "yes";
    if (auto r = sections.find("REASONING"); r != sections.end()) v.reasoning = clean_value(r->second);
    return v;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const StrategyDecision& d) {
    j = json{{"strategy", std::string(to_string(d.strategy))},
             {"reasoning", d.reasoning},
             {"response", d.response},
             {"raw", d.raw}};
    if (d.clusters) {
        json arr = json::array();
        for (const auto& c : *d.clusters)
            arr.push_back({{"label", c.label},
                           {"size", c.size},
                           {"total", c.total},
                           {"representative", c.representative}});
        j["clusters"] = std::move(arr);
    }
    if (d.interpretations) {
        json arr = json::array();
        for (const auto& i : *d.interpretations) arr.push_back({{"label", i.label}, {"text", i.text}});
        j["interpretations"] = std::move(arr);
    }
    if (d.consensus) j["consensus"] = *d.consensus;
}

void from_json(const json& j, StrategyDecision& d) {
    d.strategy = parse_strategy_name(j.at("strategy").get<std::string>());
    d.reasoning = j.at("reasoning").get<std::string>();
    d.response = j.at("response").get<std::string>();
    d.raw = j.at("raw").get<std::string>();
    d.clusters.reset();
    d.interpretations.reset();
    d.consensus.reset();
    if (j.contains("clusters")) {
        d.clusters.emplace();
        for (const auto& c : j["clusters"])
            d.clusters->push_back(ClusterLine{c.at("label"), c.at("size"), c.at("total"),
                                              c.at("representative")});
    }
    if (j.contains("interpretations")) {
        d.interpretations.emplace();
        for (const auto& i : j["interpretations"])
            d.interpretations->push_back(InterpretationLine{i.at("label"), i.at("text")});
    }
    if (j.contains("consensus")) d.consensus = j["consensus"].get<std::string>();
}

}  // namespace bag
