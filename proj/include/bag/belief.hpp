#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bag/gateway.hpp"
#include "bag/types.hpp"

namespace bag {

/// K ordered samples drawn under identical decoding parameters.
struct BeliefState {
    std::vector<std::string> samples;  // index order 0..k-1
    CacheKey context_digest;           // key of the generating request
    int k{0};
    Brevity brevity{Brevity::Free};

    bool operator==(const BeliefState&) const = default;
};

/// Messages sampled for a belief state: the (brevity-prefixed) question, or
/// the flattened history with brevity applied to its first user turn.
MessageList belief_messages(const std::string& question, const std::optional<MessageList>& history,
                            Brevity brevity);

/// Samples params.n_samples responses. A history, when given, must be the
/// three-turn (user, assistant, user) prefix of a clarified conversation.
/// Throws PartialBelief when some samples fail after retries.
BeliefState build_belief(const std::string& question, const std::optional<MessageList>& history,
                         const std::string& model_id, const SamplingParams& params,
                         Brevity brevity, const Gateway& gateway);

/// sha256 over the samples in order (length-prefixed).
std::string belief_digest(const BeliefState& belief);

void to_json(nlohmann::json& j, const BeliefState& b);
void from_json(const nlohmann::json& j, BeliefState& b);

}  // namespace bag
