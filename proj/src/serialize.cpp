#include "bag/serialize.hpp"

namespace bag {

void to_json(nlohmann::json& j, const Message& m) {
    j = nlohmann::json{{"role", std::string(to_string(m.role))}, {"text", m.text}};
}

void from_json(const nlohmann::json& j, Message& m) {
    m.role = parse_role(j.at("role").get<std::string>());
    m.text = j.at("text").get<std::string>();
}

void to_json(nlohmann::json& j, const SamplingParams& p) {
    j = nlohmann::json{{"temperature", p.temperature}, {"top_p", p.top_p},
                       {"top_k", p.top_k},             {"min_p", p.min_p},
                       {"max_tokens", p.max_tokens},   {"n_samples", p.n_samples}};
}

void from_json(const nlohmann::json& j, SamplingParams& p) {
    p.temperature = j.at("temperature").get<double>();
    p.top_p = j.at("top_p").get<double>();
    p.top_k = j.at("top_k").get<int>();
    p.min_p = j.at("min_p").get<double>();
    p.max_tokens = j.at("max_tokens").get<int>();
    p.n_samples = j.at("n_samples").get<int>();
}

}  // namespace bag
