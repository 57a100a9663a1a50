#include <doctest.h>

#include <cmath>

#include "bag/analysis.hpp"
#include "bag/errors.hpp"
#include "support.hpp"

using namespace bag;

namespace {

BeliefState belief(std::vector<std::string> samples) {
    BeliefState b;
    b.k = static_cast<int>(samples.size());
    b.samples = std::move(samples);
    return b;
}

ScriptEntry cluster_entry(std::vector<std::string> patterns, std::string response) {
    ScriptEntry e;
    e.purpose = Purpose::Cluster;
    e.patterns = std::move(patterns);
    e.responses = {std::move(response)};
    return e;
}

}  // namespace

TEST_CASE("exact-match clusters") {
    const auto same = cluster_belief(belief(std::vector<std::string>(10, "Paris")), "q", ClusterMethod::ExactMatch);
    CHECK(same.n_clusters() == 1);
    CHECK(semantic_entropy(same).entropy_nats == 0.0);

    std::vector<std::string> s(6, "A.");
    s.insert(s.end(), 3, "b");
    s.push_back("C");
    const auto c = cluster_belief(belief(s), "q", ClusterMethod::ExactMatch);
    CHECK(c.cluster_sizes == std::map<std::string, int>{{"A", 6}, {"B", 3}, {"C", 1}});
    CHECK(c.k() == 10);
    CHECK(semantic_entropy(c).entropy_nats == doctest::Approx(0.8979457).epsilon(1e-7));
    CHECK(cluster_belief(belief({"the U.S.", "The US"}), "q", ClusterMethod::ExactMatch).n_clusters() == 1);
}

TEST_CASE("labels are canonicalized by first appearance") {
    const auto a = make_assignment("d", {"Z", "X", "Z", "Y"}, ClusterMethod::Llm);
    CHECK(a.labels == std::vector<std::string>{"A", "B", "A", "C"});
    const auto b = make_assignment("d", {"B", "A", "B", "C"}, ClusterMethod::Llm);
    CHECK(a.labels == b.labels);
}

TEST_CASE("cluster label parsing") {
    CHECK(parse_cluster_labels("1: A\n2: B\n3: A", 3) == std::vector<std::string>{"A", "B", "A"});
    CHECK(parse_cluster_labels("Candidate 1 -> group a\n- 2. [B]\n**3**: A\n", 3) ==
          std::vector<std::string>{"A", "B", "A"});
    CHECK_THROWS_AS(parse_cluster_labels("1: A\n3: B", 3), IncompleteAssignment);
    CHECK_THROWS_AS(parse_cluster_labels("", 2), IncompleteAssignment);
}

TEST_CASE("llm clustering reprompts once on incomplete output") {
    const auto b = belief({"recorded version: Merry Clayton", "on tour: Lisa Fischer", "Merry Clayton"});
    auto mock = mock_register({cluster_entry({"incomplete"}, "1: A\n2: B\n3: A"),
                               cluster_entry({}, "1: A\n2: B")});
    const auto gw = test::mock_gateway(mock);
    const ModelSpec model{"clusterer", {}};
    const auto c = cluster_belief(b, "Who sang on Gimme Shelter?", ClusterMethod::Llm, &model, gw.get());
    CHECK(c.n_clusters() == 2);
    CHECK(c.labels == std::vector<std::string>{"A", "B", "A"});
    const auto reqs = mock->requests();
    REQUIRE(reqs.size() == 2);
    CHECK(reqs[1].messages.size() == 3);
    CHECK(reqs[1].messages[1].role == Role::Assistant);

    auto stubborn = mock_register({cluster_entry({}, "1: A")});
    const auto gw2 = test::mock_gateway(stubborn);
    CHECK_THROWS_AS(cluster_belief(b, "q", ClusterMethod::Llm, &model, gw2.get()), IncompleteAssignment);
    CHECK(stubborn->calls() == 2);
    CHECK_THROWS_AS(cluster_belief(b, "q", ClusterMethod::Llm), std::invalid_argument);
}

TEST_CASE("entropy bounds over random labels") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 500; ++i) {
        const int k = std::uniform_int_distribution<int>(1, 12)(rng);
        std::vector<std::string> labels;
        for (int j = 0; j < k; ++j) labels.push_back(std::string(1, static_cast<char>('a' + rng() % 5)));
        const auto a = make_assignment("d", labels, ClusterMethod::Llm);
        const double h = semantic_entropy(a).entropy_nats;
        CHECK(h >= 0.0);
        CHECK(h <= std::log(static_cast<double>(a.n_clusters())) + 1e-12);
        if (a.n_clusters() == 1) CHECK(h == 0.0);
    }
    CHECK_THROWS(entropy_from_sizes(std::vector<int>{}));
}

TEST_CASE("decomposition no-op and undefined cases") {
    std::vector<test::DecompCase> direct;
    for (int i = 0; i < 6; ++i) direct.push_back({Subset::Direct, i % 2 == 0, i % 2 == 0});
    auto recs = test::build_decomposition_records(direct);
    auto r = decompose(recs.base_runs, recs.base_verdicts, recs.bag_runs, recs.bag_verdicts);
    CHECK(r.contrib_abstain == doctest::Approx(0.0));
    CHECK(r.contrib_direct == doctest::Approx(0.0));
    CHECK(r.contrib_clarify == doctest::Approx(0.0));
    CHECK(r.delta_total == doctest::Approx(0.0));

    std::vector<test::DecompCase> all_abstain(3, {Subset::Abstain, true, false});
    recs = test::build_decomposition_records(all_abstain);
    r = decompose(recs.base_runs, recs.base_verdicts, recs.bag_runs, recs.bag_verdicts);
    CHECK(r.undefined);
    CHECK(r.counts.n_a == 3);
}

TEST_CASE("late abstentions move to the abstain subset") {
    std::vector<test::DecompCase> cases{{Subset::Clarify, true, false, true}, {Subset::Clarify, false, true},
                                        {Subset::Direct, true, true}};
    const auto recs = test::build_decomposition_records(cases);
    const auto r = decompose(recs.base_runs, recs.base_verdicts, recs.bag_runs, recs.bag_verdicts);
    CHECK(r.counts.n_a == 1);
    CHECK(r.counts.n_c == 1);
    CHECK(r.counts.n_d == 1);
    CHECK(r.counts.b_a == 1);
    CHECK(r.acc_bag == doctest::Approx(1.0));
}

TEST_CASE("decomposition requires matching question sets") {
    std::vector<test::DecompCase> cases(3, {Subset::Direct, true, true});
    auto recs = test::build_decomposition_records(cases);
    auto bag_runs = recs.bag_runs;
    bag_runs.pop_back();
    CHECK_THROWS_AS(decompose(recs.base_runs, recs.base_verdicts, bag_runs, recs.bag_verdicts),
                    MismatchedQuestionSets);
    auto other_intent = recs.bag_runs;
    other_intent[0].intent_id = "d0000#1";
    CHECK_THROWS_AS(decompose(recs.base_runs, recs.base_verdicts, other_intent, recs.bag_verdicts),
                    MismatchedQuestionSets);
    auto any = recs.base_verdicts;
    for (auto& v : any) v.mode = JudgeMode::AnyIntent;
    CHECK_THROWS(decompose(recs.base_runs, any, recs.bag_runs, recs.bag_verdicts));
}

TEST_CASE("failed judgements are excluded from both sides") {
    std::vector<test::DecompCase> cases(4, {Subset::Direct, true, true});
    auto recs = test::build_decomposition_records(cases);
    recs.bag_verdicts[1].judge_failed = true;
    recs.base_runs[2].failures.insert("gateway_error");
    recs.base_runs[2].final_answer.reset();
    recs.base_runs[2].final_strategy.reset();
    recs.base_runs[2].turns.pop_back();
    std::erase_if(recs.base_verdicts, [](const Verdict& v) { return v.question_id == "d0002"; });
    const auto r = decompose(recs.base_runs, recs.base_verdicts, recs.bag_runs, recs.bag_verdicts);
    CHECK(r.n_excluded == 2);
    CHECK(r.counts.n_d == 2);
}

TEST_CASE("spearman with ties") {
    const std::vector<double> x{1, 2, 3, 4, 5}, y{5, 6, 7, 8, 7};
    CHECK(*spearman(x, y) == doctest::Approx(8.0 / std::sqrt(95.0)).epsilon(1e-12));
    const std::vector<double> down{5, 4, 3, 2, 1};
    CHECK(*spearman(x, down) == doctest::Approx(-1.0));
    CHECK_FALSE(spearman(x, std::vector<double>(5, 1.0)).has_value());
    CHECK_FALSE(spearman(std::vector<double>{1}, std::vector<double>{2}).has_value());
}

TEST_CASE("faithfulness curve bins by cluster count") {
    std::vector<RunRecord> runs;
    std::vector<QuestionEntropy> ents;
    const std::vector<std::pair<int, Strategy>> table{{1, Strategy::DirectAnswer}, {1, Strategy::DirectAnswer},
                                                      {3, Strategy::ClarificationQuestion}, {3, Strategy::DirectAnswer},
                                                      {7, Strategy::Abstain}};
    for (std::size_t i = 0; i < table.size(); ++i) {
        RunRecord r;
        r.question_id = "f" + std::to_string(i);
        r.setting = Setting::Bag2;
        StrategyDecision d;
        d.strategy = table[i].second;
        r.turns = {{1, Role::User, "q", std::nullopt, TurnSource::Dataset},
                   {2, Role::Assistant, "a", d, TurnSource::Model}};
        runs.push_back(r);
        ents.push_back({r.question_id, {"", std::log(static_cast<double>(table[i].first)), table[i].first}});
    }
    const auto c = faithfulness_curve(ents, runs);
    REQUIRE(c.bins.size() == 3);
    CHECK(c.bins[0].n_clusters == 1);
    CHECK(c.bins[0].frequency.at(Strategy::DirectAnswer) == 1.0);
    CHECK(c.bins[1].frequency.at(Strategy::ClarificationQuestion) == 0.5);
    CHECK(c.bins[2].frequency.at(Strategy::Abstain) == 1.0);
    CHECK(c.points.size() == 5);
    REQUIRE(c.spearman);
    CHECK(*c.spearman > 0.5);
}

TEST_CASE("entropy reduction aggregates") {
    CHECK(*entropy_reduction({"", 2.0, 4}, {"", 0.5, 2}) == doctest::Approx(0.75));
    CHECK_FALSE(entropy_reduction({"", 0.0, 1}, {"", 0.0, 1}).has_value());
    const std::vector<ReductionPair> pairs{{"a", 2.0, 1.0}, {"b", 1.0, 0.0}, {"c", 0.0, 0.0}};
    const auto r = aggregate_reduction(pairs);
    CHECK(r.n_pairs == 3);
    CHECK(r.n_excluded == 1);
    CHECK(*r.mean_reduction == doctest::Approx(0.75));
    CHECK(*r.ratio_of_means == doctest::Approx(2.0 / 3.0));
    CHECK(format_percent(0.54) == "54%");
    CHECK(format_percent(0.017) == "1.7%");
    CHECK(format_percent(2.0 / 3.0) == "66.7%");
}

TEST_CASE("strategy frequencies count turn-two decisions") {
    std::vector<test::DecompCase> cases{{Subset::Direct, true, true}, {Subset::Clarify, true, true},
                                        {Subset::Clarify, true, true, true}, {Subset::Abstain, true, false}};
    const auto recs = test::build_decomposition_records(cases);
    auto runs = recs.bag_runs;
    RunRecord failed;
    failed.question_id = "x";
    failed.failures.insert("gateway_error");
    failed.turns = {{1, Role::User, "q", std::nullopt, TurnSource::Dataset}};
    runs.push_back(failed);
    const auto f = strategy_frequencies(runs);
    CHECK(f.n_parsed == 4);
    CHECK(f.n_failed == 1);
    CHECK(f.counts.at(Strategy::ClarificationQuestion) == 2);
    CHECK(f.fraction(Strategy::Abstain) == doctest::Approx(0.25));
    CHECK(frequencies_csv(f).find("CLARIFICATION_QUESTION") != std::string::npos);
}
