#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bag/types.hpp"

namespace bag {

enum class PromptKind {
    Direct,
    Disambig,
    Sag,
    Bag1,
    Bag2,
    Bag3,
    SagPlusFinal,
    BagPlusFinal,
    UserSimAmbiguous,
    UserSimUnambiguous,
    JudgeOne,
    JudgeAny,
    ClusterAssign,
    StrategyClassify,
};

std::string_view to_string(PromptKind kind);
PromptKind parse_prompt_kind(std::string_view s);

/// True for kinds whose completion carries a STRATEGY header.
bool is_strategy_kind(PromptKind kind);

using SlotMap = std::map<std::string, std::string, std::less<>>;

struct PromptTemplate {
    PromptKind kind;
    std::string file;
    std::vector<std::string> placeholders;  // sorted
    std::string_view text;
};

/// The embedded catalog, validated on first use: every manifest entry has a
/// file and its declared placeholders equal those found in the text.
class PromptCatalog {
public:
    static const PromptCatalog& instance();

    const PromptTemplate& get(PromptKind kind) const;
    const std::string& version() const { return version_; }
    /// sha256 over the manifest and every asset, in file order.
    const std::string& digest() const { return digest_; }
    std::span<const PromptTemplate> templates() const { return templates_; }

private:
    PromptCatalog();
    std::string version_;
    std::string digest_;
    std::vector<PromptTemplate> templates_;
};

/// Placeholder names occurring in a template ("{{" / "}}" are escapes).
std::vector<std::string> find_placeholders(std::string_view text);

/// Substitutes {name} slots; "{{" and "}}" render as literal braces.
/// Throws MissingSlot / UnknownSlot naming the offender.
std::string substitute(std::string_view text, const SlotMap& slots);

/// Renders a catalog prompt as a single user message.
MessageList render(PromptKind kind, const SlotMap& slots);

/// "1. <s0>\n2. <s1>\n..." with no trailing newline.
std::string format_belief_state(std::span<const std::string> samples);

std::string_view brevity_instruction(Brevity mode);
/// Prefixes the instruction (newline separated); Free returns the question.
std::string apply_brevity(std::string_view question, Brevity mode);

// ---------------------------------------------------------------------------
// Structured output parsing.

struct ClusterLine {
    std::string label;
    int size{0};
    int total{0};
    std::string representative;
    bool operator==(const ClusterLine&) const = default;
};

struct InterpretationLine {
    std::string label;
    std::string text;
    bool operator==(const InterpretationLine&) const = default;
};

struct StrategyDecision {
    Strategy strategy{Strategy::DirectAnswer};
    std::string reasoning;
    std::string response;
    std::optional<std::vector<ClusterLine>> clusters;                // bag3 only
    std::optional<std::vector<InterpretationLine>> interpretations;  // bag3 only
    std::optional<std::string> consensus;                            // bag_plus_final only
    std::string raw;

    bool operator==(const StrategyDecision&) const = default;
};

/// Lenient parse of a strategy-bearing completion. Throws
/// UnparseableStrategy when the strategy is missing, unrecognized, or not
/// allowed for the kind, or when a non-abstain decision has no response.
StrategyDecision parse_decision(std::string_view raw, PromptKind expected_kind);

/// Canonical three-header form; parse_decision inverts it.
std::string canonical_format(Strategy strategy, std::string_view reasoning,
                             std::string_view response);

struct UserAnswer {
    std::string reasoning;
    std::string answer;
    bool fallback{false};  // no USER ANSWER header; the whole text was used
};

UserAnswer parse_user_answer(std::string_view raw);

struct ParsedVerdict {
    std::string reasoning;
    bool verdict{false};
};

/// Throws UnparseableVerdict unless a VERDICT line starts with yes or no.
ParsedVerdict parse_verdict(std::string_view raw);

/// Header name -> section body, for the given header names. Exposed for
/// the analysis-side parsers.
std::map<std::string, std::string> parse_sections(std::string_view raw,
                                                  std::span<const std::string_view> headers);

void to_json(nlohmann::json& j, const StrategyDecision& d);
void from_json(const nlohmann::json& j, StrategyDecision& d);

}  // namespace bag
