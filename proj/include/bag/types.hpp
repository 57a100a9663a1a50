#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bag {

enum class Role { System, User, Assistant };

struct Message {
    Role role{Role::User};
    std::string text;

    bool operator==(const Message&) const = default;
};

using MessageList = std::vector<Message>;

/// Decoding controls for one request. n_samples is the fan-out count: the
/// gateway issues that many independent single-sample calls.
struct SamplingParams {
    double temperature{1.0};
    double top_p{1.0};
    int top_k{0};  // 0 = disabled
    double min_p{0.0};
    int max_tokens{512};
    int n_samples{1};

    bool operator==(const SamplingParams&) const = default;
};

/// Throws std::invalid_argument naming the first violated bound.
void validate(const SamplingParams& params);

enum class Purpose {
    Direct,
    Disambig,
    Sag,
    Bag1,
    Bag2,
    Bag3,
    BagPlus,
    UserSim,
    Judge,
    Cluster,
    Classify,
};

enum class Strategy { DirectAnswer, ClarificationQuestion, Abstain };

enum class Brevity { Free, Concise, Sentence };

enum class Setting { Standard, Disambig, Sag, Bag1, Bag2, Bag3 };

std::string_view to_string(Role role);
std::string_view to_string(Purpose purpose);
std::string_view to_string(Strategy strategy);
std::string_view to_string(Brevity brevity);
std::string_view to_string(Setting setting);

// Parsers accept the exact lower-case names produced by to_string
// (Strategy uses the canonical upper-case tokens). They throw
// std::invalid_argument on unknown input.
Role parse_role(std::string_view s);
Purpose parse_purpose(std::string_view s);
Strategy parse_strategy_name(std::string_view s);
Brevity parse_brevity(std::string_view s);
Setting parse_setting(std::string_view s);

inline bool is_augmented(Setting s) {
    return s == Setting::Sag || s == Setting::Bag1 || s == Setting::Bag2 || s == Setting::Bag3;
}

inline bool is_belief_setting(Setting s) {
    return s == Setting::Bag1 || s == Setting::Bag2 || s == Setting::Bag3;
}

}  // namespace bag
