#include "bag/types.hpp"

#include <array>
#include <stdexcept>
#include <utility>

#include <fmt/format.h>

namespace bag {

namespace {

template <typename E, std::size_t N>
E lookup(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s,
         std::string_view what) {
    for (const auto& [value, name] : table) {
        if (name == s) return value;
    }
    throw std::invalid_argument(fmt::format("unknown {} '{}'", what, s));
}

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E e) {
    for (const auto& [value, name] : table) {
        if (value == e) return name;
    }
    return "?";
}

constexpr std::array<std::pair<Role, std::string_view>, 3> kRoles{{
    {Role::System, "system"},
    {Role::User, "user"},
    {Role::Assistant, "assistant"},
}};

constexpr std::array<std::pair<Purpose, std::string_view>, 11> kPurposes{{
    {Purpose::Direct, "direct"},
    {Purpose::Disambig, "disambig"},
    {Purpose::Sag, "sag"},
    {Purpose::Bag1, "bag1"},
    {Purpose::Bag2, "bag2"},
    {Purpose::Bag3, "bag3"},
    {Purpose::BagPlus, "bag_plus"},
    {Purpose::UserSim, "user_sim"},
    {Purpose::Judge, "judge"},
    {Purpose::Cluster, "cluster"},
    {Purpose::Classify, "classify"},
}};

constexpr std::array<std::pair<Strategy, std::string_view>, 3> kStrategies{{
    {Strategy::DirectAnswer, "DIRECT_ANSWER"},
    {Strategy::ClarificationQuestion, "CLARIFICATION_QUESTION"},
    {Strategy::Abstain, "ABSTAIN"},
}};

constexpr std::array<std::pair<Brevity, std::string_view>, 3> kBrevity{{
    {Brevity::Free, "free"},
    {Brevity::Concise, "concise"},
    {Brevity::Sentence, "sentence"},
}};

constexpr std::array<std::pair<Setting, std::string_view>, 6> kSettings{{
    {Setting::Standard, "standard"},
    {Setting::Disambig, "disambig"},
    {Setting::Sag, "sag"},
    {Setting::Bag1, "bag1"},
    {Setting::Bag2, "bag2"},
    {Setting::Bag3, "bag3"},
}};

}  // namespace

void validate(const SamplingParams& p) {
    if (!(p.temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
    if (!(p.top_p > 0.0 && p.top_p <= 1.0)) throw std::invalid_argument("top_p must be in (0,1]");
    if (p.top_k < 0) throw std::invalid_argument("top_k must be >= 0");
    if (!(p.min_p >= 0.0 && p.min_p <= 1.0)) throw std::invalid_argument("min_p must be in [0,1]");
    if (p.max_tokens <= 0) throw std::invalid_argument("max_tokens must be > 0");
    if (p.n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
}

std::string_view to_string(Role r) { return name_of(kRoles, r); }
std::string_view to_string(Purpose p) { return name_of(kPurposes, p); }
std::string_view to_string(Strategy s) { return name_of(kStrategies, s); }
std::string_view to_string(Brevity b) { return name_of(kBrevity, b); }
std::string_view to_string(Setting s) { return name_of(kSettings, s); }

Role parse_role(std::string_view s) { return lookup(kRoles, s, "role"); }
Purpose parse_purpose(std::string_view s) { return lookup(kPurposes, s, "purpose"); }
Strategy parse_strategy_name(std::string_view s) { return lookup(kStrategies, s, "strategy"); }
Brevity parse_brevity(std::string_view s) { return lookup(kBrevity, s, "brevity mode"); }
Setting parse_setting(std::string_view s) { return lookup(kSettings, s, "setting"); }

}  // namespace bag
