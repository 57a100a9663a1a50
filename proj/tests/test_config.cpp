#include <doctest.h>

#include "bag/config.hpp"
#include "bag/errors.hpp"

using namespace bag;

TEST_CASE("config text parsing") {
    const auto m = parse_config(R"(
# a comment
setting = bag3
k = 8   # trailing comment
dataset = "data/dev # not a comment.json"

[model]
id = 'qwen'
temperature = 0.6
)");
    CHECK(m.at("setting") == "bag3");
    CHECK(m.at("k") == "8");
    CHECK(m.at("dataset") == "data/dev # not a comment.json");
    CHECK(m.at("model.id") == "qwen");
    CHECK(m.at("model.temperature") == "0.6");
    CHECK_THROWS_AS(parse_config("just words"), ConfigError);
    CHECK_THROWS_AS(parse_config("[unterminated\n"), ConfigError);
}

TEST_CASE("config keys apply to the run config") {
    const auto cfg = apply_config(parse_config(R"(
setting = sag
plus = true
k = 5
seed = 99
brevity = concise
concurrency = 4
consensus_threshold = 80
[model]
id = m1
top_k = 20
[judge]
id = j1
[sim]
temperature = 0.2
)"));
    CHECK(cfg.setting == Setting::Sag);
    CHECK(cfg.plus);
    CHECK(cfg.k == 5);
    CHECK(cfg.seed == 99);
    CHECK(cfg.brevity == Brevity::Concise);
    CHECK(cfg.concurrency == 4);
    CHECK(cfg.consensus_threshold == 80);
    CHECK(cfg.model.id == "m1");
    CHECK(cfg.model.decode.top_k == 20);
    CHECK(cfg.judge_model.id == "j1");
    CHECK(cfg.sim_model.decode.temperature == 0.2);
}

TEST_CASE("config rejects unknown keys, bad values and secrets") {
    CHECK_THROWS_AS(apply_config({{"colour", "blue"}}), ConfigError);
    CHECK_THROWS_AS(apply_config({{"k", "ten"}}), ConfigError);
    CHECK_THROWS_AS(apply_config({{"plus", "maybe"}}), ConfigError);
    CHECK_THROWS_AS(apply_config({{"setting", "bag9"}}), ConfigError);
    try {
        apply_config({{"api_key", "sk-123"}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("sk-123") == std::string::npos);
    }
    CHECK_FALSE(config_keys().empty());
}
