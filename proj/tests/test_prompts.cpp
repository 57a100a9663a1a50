#include <doctest.h>

#include <random>
#include <set>

#include "bag/errors.hpp"
#include "bag/prompts.hpp"
#include "parser_cases.hpp"

using namespace bag;

TEST_CASE("catalog covers every kind with consistent placeholders") {
    const auto& cat = PromptCatalog::instance();
    CHECK(cat.templates().size() == 14);
    CHECK(cat.digest().size() == 64);
    CHECK_FALSE(cat.version().empty());
    for (int i = 0; i <= static_cast<int>(PromptKind::StrategyClassify); ++i) {
        const auto kind = static_cast<PromptKind>(i);
        const auto& t = cat.get(kind);
        CHECK(t.kind == kind);
        CHECK(find_placeholders(t.text) == t.placeholders);
        CHECK(parse_prompt_kind(to_string(kind)) == kind);
    }
    CHECK(cat.get(PromptKind::Bag1).placeholders == std::vector<std::string>{"K", "belief_state_text", "question"});
    CHECK(cat.get(PromptKind::BagPlusFinal).placeholders ==
          std::vector<std::string>{"belief_state_text", "consensus_threshold", "n"});
    CHECK(cat.get(PromptKind::Sag).placeholders == std::vector<std::string>{"question"});
}

TEST_CASE("substitution") {
    CHECK(substitute("Q: {question}", {{"question", "why?"}}) == "Q: why?");
    CHECK(substitute("{{literal}} {x}", {{"x", "1"}}) == "{literal} 1");
    CHECK(substitute("{a}{a}", {{"a", "{b}"}}) == "{b}{b}");
    try {
        substitute("{question} {belief_state}", {{"question", "q"}});
        FAIL("expected MissingSlot");
    } catch (const MissingSlot& e) {
        CHECK(e.slot == "belief_state");
    }
    try {
        substitute("{question}", {{"question", "q"}, {"extra", "x"}});
        FAIL("expected UnknownSlot");
    } catch (const UnknownSlot& e) {
        CHECK(e.slot == "extra");
    }
}

TEST_CASE("render yields one user message") {
    const auto msgs = render(PromptKind::Sag, {{"question", "Who won?"}});
    REQUIRE(msgs.size() == 1);
    CHECK(msgs.front().role == Role::User);
    CHECK(msgs.front().text.find("Who won?") != std::string::npos);
    CHECK(msgs.front().text.find('{') == std::string::npos);
    CHECK_THROWS_AS(render(PromptKind::Bag2, {{"question", "q"}}), MissingSlot);
}

TEST_CASE("belief state formatting") {
    const std::vector<std::string> samples{"Paris", "Lyon\nor Paris"};
    CHECK(format_belief_state(samples) == "1. Paris\n2. Lyon\nor Paris");
    CHECK(format_belief_state(std::vector<std::string>{}) == "");
}

TEST_CASE("brevity instructions") {
    CHECK(brevity_instruction(Brevity::Concise) == "Please provide a concise answer to the following question:");
    CHECK(brevity_instruction(Brevity::Sentence) ==
          "Please provide a short answer of at most 1 sentence to the following question");
    CHECK(apply_brevity("Who?", Brevity::Free) == "Who?");
    CHECK(apply_brevity("Who?", Brevity::Concise) ==
          "Please provide a concise answer to the following question:\nWho?");
}

TEST_CASE("strategy parser variants") {
    for (const auto& c : test::parser_cases()) {
        CAPTURE(c.name);
        const auto d = parse_decision(c.raw, c.kind);
        CHECK(d.strategy == c.strategy);
        CHECK(d.response == c.response);
        CHECK(d.reasoning == c.reasoning);
        CHECK(d.raw == c.raw);
        if (c.n_clusters) {
            REQUIRE(d.clusters.has_value());
            CHECK(d.clusters->size() == *c.n_clusters);
        }
        if (c.consensus) CHECK(d.consensus == c.consensus);
    }
    for (const auto& c : test::parser_error_cases()) {
        CAPTURE(c.name);
        CHECK_THROWS_AS(parse_decision(c.raw, c.kind), UnparseableStrategy);
    }
}

TEST_CASE("bag3 cluster lines") {
    const auto d = parse_decision(test::parser_cases()[13].raw, PromptKind::Bag3);
    REQUIRE(d.clusters);
    CHECK(d.clusters->at(0) == ClusterLine{"A", 6, 10, "Argentina"});
    CHECK(d.clusters->at(2) == ClusterLine{"C", 1, 10, "England"});
    REQUIRE(d.interpretations);
    CHECK(d.interpretations->at(1) == InterpretationLine{"B", "2018 FIFA"});
}

TEST_CASE("missing response is only allowed for abstain") {
    CHECK_THROWS_AS(parse_decision("STRATEGY: DIRECT_ANSWER\nREASONING: r", PromptKind::Sag), UnparseableStrategy);
    CHECK(parse_decision("STRATEGY: ABSTAIN\nREASONING: r", PromptKind::Sag).response.empty());
    CHECK_THROWS_AS(parse_decision("STRATEGY: DIRECT_ANSWER\nRESPONSE: x", PromptKind::JudgeOne),
                    std::invalid_argument);
}

TEST_CASE("canonical format round-trips") {
    std::mt19937 rng(11);
    const std::vector<std::string> words{"Paris", "the", "1989", "Which", "one?", "it's", "[A]", "x-y", "ok."};
    for (int i = 0; i < 300; ++i) {
        auto phrase = [&] {
            std::string s;
            const int n = std::uniform_int_distribution<int>(1, 6)(rng);
            for (int j = 0; j < n; ++j) s += (j ? " " : "") + words[rng() % words.size()];
            return s;
        };
        const auto strategy = static_cast<Strategy>(rng() % 3);
        const auto reasoning = phrase();
        const auto response = phrase();
        const auto d = parse_decision(canonical_format(strategy, reasoning, response), PromptKind::Bag2);
        CHECK(d.strategy == strategy);
        // A value wrapped whole in brackets reads as the template's [...] slot marker.
        auto bracketed = [](const std::string& v) { return v.front() == '[' && v.back() == ']'; };
        if (!bracketed(reasoning)) CHECK(d.reasoning == reasoning);
        if (!bracketed(response)) CHECK(d.response == response);
    }
}

TEST_CASE("user answers") {
    const auto a = parse_user_answer("REASONING: the intent is the 2018 one\nUSER ANSWER: the 2018 World Cup");
    CHECK(a.answer == "the 2018 World Cup");
    CHECK(a.reasoning == "the intent is the 2018 one");
    CHECK_FALSE(a.fallback);
    const auto b = parse_user_answer("  I mean the football one.  ");
    CHECK(b.fallback);
    CHECK(b.answer == "I mean the football one.");
    CHECK(parse_user_answer("**USER ANSWER:** I don't know").answer == "I don't know");
}

TEST_CASE("verdicts are strict") {
    CHECK(parse_verdict("REASONING: matches\nVERDICT: yes").verdict);
    CHECK_FALSE(parse_verdict("REASONING: differs\nVERDICT: No.").verdict);
    CHECK(parse_verdict("VERDICT: **Yes**").verdict);
    CHECK(parse_verdict("REASONING: r\nVERDICT: yes").reasoning == "r");
    CHECK_THROWS_AS(parse_verdict("REASONING: r\nVERDICT: perhaps"), UnparseableVerdict);
    CHECK_THROWS_AS(parse_verdict("yes"), UnparseableVerdict);
    CHECK_THROWS_AS(parse_verdict("VERDICT:"), UnparseableVerdict);
}
