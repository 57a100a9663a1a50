#pragma once

// nlohmann::json bindings for the core value types.

#include <nlohmann/json.hpp>

#include "bag/types.hpp"

namespace bag {

void to_json(nlohmann::json& j, const Message& m);
void from_json(const nlohmann::json& j, Message& m);

void to_json(nlohmann::json& j, const SamplingParams& p);
void from_json(const nlohmann::json& j, SamplingParams& p);

}  // namespace bag
