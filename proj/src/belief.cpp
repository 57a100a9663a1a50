#include "bag/belief.hpp"

#include <fmt/format.h>

#include "bag/errors.hpp"
#include "bag/hash.hpp"
#include "bag/prompts.hpp"

using nlohmann::json;

namespace bag {

MessageList belief_messages(const std::string& question, const std::optional<MessageList>& history,
                            Brevity brevity) {
    if (!history) return {Message{Role::User, apply_brevity(question, brevity)}};
    const auto& h = *history;
    if (h.size() != 3 || h[0].role != Role::User || h[1].role != Role::Assistant ||
        h[2].role != Role::User)
        throw std::invalid_argument("belief history must be (user, assistant, user)");
    MessageList out = h;
    out.front().text = apply_brevity(out.front().text, brevity);
    return out;
}

BeliefState build_belief(const std::string& question, const std::optional<MessageList>& history,
                         const std::string& model_id, const SamplingParams& params,
                         Brevity brevity, const Gateway& gateway) {
    ChatRequest request{model_id, belief_messages(question, history, brevity), params,
                        Purpose::Direct};
    BeliefState b;
    b.k = params.n_samples;
    b.brevity = brevity;
    b.context_digest = cache_key(request);
    try {
        b.samples = gateway.complete(request).texts;
    } catch (const PartialFailure& e) {
        throw PartialBelief(e.failed, e.total);
    }
    if (b.samples.size() != static_cast<std::size_t>(b.k))
        throw PartialBelief(static_cast<std::size_t>(b.k) - b.samples.size(),
                            static_cast<std::size_t>(b.k));
    return b;
}

std::string belief_digest(const BeliefState& belief) {
    std::string buf;
    for (const auto& s : belief.samples) {
        buf += fmt::format("{}:", s.size());
        buf += s;
    }
    return sha256_hex(buf);
}

void to_json(json& j, const BeliefState& b) {
    j = json{{"samples", b.samples},
             {"context_digest", b.context_digest.digest},
             {"k", b.k},
             {"brevity", std::string(to_string(b.brevity))}};
}

void from_json(const json& j, BeliefState& b) {
    b.samples = j.at("samples").get<std::vector<std::string>>();
    b.context_digest.digest = j.at("context_digest").get<std::string>();
    b.k = j.at("k").get<int>();
    b.brevity = parse_brevity(j.at("brevity").get<std::string>());
}

}  // namespace bag
