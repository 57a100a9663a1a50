#include "bag/dialogue.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <thread>
#include <unordered_set>

#include <fmt/format.h>

#include "bag/errors.hpp"
#include "bag/hash.hpp"
#include "bag/serialize.hpp"
#include "bag/text.hpp"

using nlohmann::json;

namespace bag {

std::string_view to_string(TurnSource s) {
    switch (s) {
        case TurnSource::Dataset: return "dataset";
        case TurnSource::Model: return "model";
        case TurnSource::Simulator: return "simulator";
        case TurnSource::Human: return "human";
    }
    return "?";
}

TurnSource parse_turn_source(std::string_view s) {
    for (auto t : {TurnSource::Dataset, TurnSource::Model, TurnSource::Simulator, TurnSource::Human})
        if (to_string(t) == s) return t;
    throw std::invalid_argument(fmt::format("unknown turn source '{}'", s));
}

std::optional<Strategy> RunRecord::routed_strategy() const {
    if (turns.size() < 2) return std::nullopt;
    return turns[1].meta ? turns[1].meta->strategy : Strategy::DirectAnswer;
}

bool check_turn_structure(const RunRecord& run, std::string* why) {
    auto fail = [&](std::string msg) {
        if (why) *why = std::move(msg);
        return false;
    };
    const auto& t = run.turns;
    if (t.empty()) return fail("no turns");
    if (t.size() > 4) return fail("more than four turns");
    if (t[0].source != TurnSource::Dataset && t[0].source != TurnSource::Human)
        return fail("turn 1 must come from the dataset or a human");
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i].index != static_cast<int>(i) + 1) return fail("turn indices out of sequence");
        const Role expected = (i % 2 == 0) ? Role::User : Role::Assistant;
        if (t[i].role != expected) return fail(fmt::format("turn {} has the wrong role", i + 1));
    }
    if (run.failed()) {
        if (run.final_answer) return fail("failed run carries a final answer");
        return true;
    }
    if (t.size() != 2 && t.size() != 4) return fail("completed run must have 2 or 4 turns");
    const bool clarify = run.routed_strategy() == Strategy::ClarificationQuestion;
    if (clarify != (t.size() == 4)) return fail("turn 3 present iff turn 2 clarifies");
    if (!run.final_strategy) return fail("completed run has no final strategy");
    const Strategy last = t.back().meta ? t.back().meta->strategy : Strategy::DirectAnswer;
    if (*run.final_strategy != last) return fail("final strategy disagrees with the last turn");
    if (*run.final_strategy == Strategy::ClarificationQuestion)
        return fail("conversation ended on a clarification");
    if (run.final_answer.has_value() != (*run.final_strategy != Strategy::Abstain))
        return fail("final answer present iff final strategy is not ABSTAIN");
    return true;
}

void to_json(json& j, const Turn& t) {
    j = json{{"index", t.index},
             {"role", std::string(to_string(t.role))},
             {"text", t.text},
             {"source", std::string(to_string(t.source))}};
    if (t.meta) j["meta"] = *t.meta;
}

void from_json(const json& j, Turn& t) {
    t.index = j.at("index").get<int>();
    t.role = parse_role(j.at("role").get<std::string>());
    t.text = j.at("text").get<std::string>();
    t.source = parse_turn_source(j.at("source").get<std::string>());
    t.meta.reset();
    if (j.contains("meta")) t.meta = j["meta"].get<StrategyDecision>();
}

void to_json(json& j, const RunRecord& r) {
    j = json{{"schema_version", kRunSchemaVersion},
             {"question_id", r.question_id},
             {"setting", std::string(to_string(r.setting))},
             {"plus", r.plus},
             {"model_id", r.model_id},
             {"intent_id", r.intent_id},
             {"turns", r.turns},
             {"final_strategy",
              r.final_strategy ? json(std::string(to_string(*r.final_strategy))) : json(nullptr)},
             {"final_answer", r.final_answer ? json(*r.final_answer) : json(nullptr)},
             {"failures", r.failures},
             {"warnings", r.warnings},
             {"errors", r.errors}};
    json digests = json::array();
    if (r.turn2_belief) {
        j["turn2_belief"] = *r.turn2_belief;
        j["turn2_belief"]["digest"] = belief_digest(*r.turn2_belief);
        digests.push_back(belief_digest(*r.turn2_belief));
    }
    if (r.turn4_belief) {
        j["turn4_belief"] = *r.turn4_belief;
        j["turn4_belief"]["digest"] = belief_digest(*r.turn4_belief);
        digests.push_back(belief_digest(*r.turn4_belief));
    }
    j["belief_digests"] = std::move(digests);
}

void from_json(const json& j, RunRecord& r) {
    r.question_id = j.at("question_id").get<std::string>();
    r.setting = parse_setting(j.at("setting").get<std::string>());
    r.plus = j.at("plus").get<bool>();
    r.model_id = j.at("model_id").get<std::string>();
    r.intent_id = j.at("intent_id").get<std::string>();
    r.turns = j.at("turns").get<std::vector<Turn>>();
    const auto& fs = j.at("final_strategy");
    r.final_strategy = fs.is_null() ? std::nullopt
                                    : std::optional<Strategy>(parse_strategy_name(fs.get<std::string>()));
    const auto& fa = j.at("final_answer");
    r.final_answer = fa.is_null() ? std::nullopt : std::optional<std::string>(fa.get<std::string>());
    r.failures = j.at("failures").get<std::set<std::string>>();
    r.warnings = j.at("warnings").get<std::set<std::string>>();
    r.errors = j.at("errors").get<std::vector<std::string>>();
    r.turn2_belief.reset();
    r.turn4_belief.reset();
    if (j.contains("turn2_belief")) r.turn2_belief = j["turn2_belief"].get<BeliefState>();
    if (j.contains("turn4_belief")) r.turn4_belief = j["turn4_belief"].get<BeliefState>();
}

// ---------------------------------------------------------------------------

void validate(const RunConfig& c) {
    auto check = [](bool ok, std::string_view msg) {
        if (!ok) throw ConfigError(std::string(msg));
    };
    check(!c.model.id.empty(), "model id is empty");
    check(c.k >= 1, "k must be >= 1");
    check(c.concurrency >= 1, "concurrency must be >= 1");
    check(!c.plus || is_augmented(c.setting),
          "--plus is only valid for the sag, bag1, bag2 and bag3 settings");
    check(c.brevity_max_tokens > 0 && c.decision_max_tokens > 0, "max token limits must be > 0");
    check(c.consensus_threshold >= 0 && c.consensus_threshold <= 100,
          "consensus threshold must be a percentage");
    for (const auto* m : {&c.model, &c.judge_model, &c.sim_model}) {
        try {
            validate(m->decode);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(fmt::format("model '{}': {}", m->id, e.what()));
        }
    }
}

namespace {

json model_json(const ModelSpec& m) { return json{{"id", m.id}, {"decode", m.decode}}; }

ModelSpec model_from_json(const json& j) {
    return ModelSpec{j.at("id").get<std::string>(), j.at("decode").get<SamplingParams>()};
}

}  // namespace

json to_json(const RunConfig& c) {
    return json{{"dataset_path", c.dataset_path},
                {"model", model_json(c.model)},
                {"setting", std::string(to_string(c.setting))},
                {"plus", c.plus},
                {"k", c.k},
                {"seed", c.seed},
                {"brevity", std::string(to_string(c.brevity))},
                {"concurrency", c.concurrency},
                {"judge_model", model_json(c.judge_model)},
                {"sim_model", model_json(c.sim_model)},
                {"brevity_max_tokens", c.brevity_max_tokens},
                {"decision_max_tokens", c.decision_max_tokens},
                {"consensus_threshold", c.consensus_threshold},
                {"post_clarification_belief", c.post_clarification_belief},
                {"out_dir", c.out_dir},
                {"cache_dir", c.cache_dir},
                {"base_url", c.base_url}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    c.dataset_path = j.at("dataset_path").get<std::string>();
    c.model = model_from_json(j.at("model"));
    c.setting = parse_setting(j.at("setting").get<std::string>());
    c.plus = j.at("plus").get<bool>();
    c.k = j.at("k").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.brevity = parse_brevity(j.at("brevity").get<std::string>());
    c.concurrency = j.at("concurrency").get<int>();
    c.judge_model = model_from_json(j.at("judge_model"));
    c.sim_model = model_from_json(j.at("sim_model"));
    c.brevity_max_tokens = j.at("brevity_max_tokens").get<int>();
    c.decision_max_tokens = j.at("decision_max_tokens").get<int>();
    c.consensus_threshold = j.at("consensus_threshold").get<int>();
    c.post_clarification_belief = j.at("post_clarification_belief").get<bool>();
    c.out_dir = j.at("out_dir").get<std::string>();
    c.cache_dir = j.at("cache_dir").get<std::string>();
    c.base_url = j.at("base_url").get<std::string>();
    return c;
}

SamplingParams completion_params(const RunConfig& c) {
    SamplingParams p = c.model.decode;
    p.n_samples = 1;
    if (c.brevity != Brevity::Free) p.max_tokens = c.brevity_max_tokens;
    return p;
}

SamplingParams belief_params(const RunConfig& c) {
    SamplingParams p = completion_params(c);
    p.n_samples = c.k;
    return p;
}

namespace {

SamplingParams decision_params(const RunConfig& c) {
    SamplingParams p = c.model.decode;
    p.n_samples = 1;
    p.max_tokens = c.decision_max_tokens;
    return p;
}

SamplingParams single(const ModelSpec& m) {
    SamplingParams p = m.decode;
    p.n_samples = 1;
    return p;
}

PromptKind turn2_kind(Setting s) {
    switch (s) {
        case Setting::Sag: return PromptKind::Sag;
        case Setting::Bag1: return PromptKind::Bag1;
        case Setting::Bag2: return PromptKind::Bag2;
        case Setting::Bag3: return PromptKind::Bag3;
        default: throw std::logic_error("setting has no strategy prompt");
    }
}

Purpose turn2_purpose(Setting s) {
    switch (s) {
        case Setting::Sag: return Purpose::Sag;
        case Setting::Bag1: return Purpose::Bag1;
        case Setting::Bag2: return Purpose::Bag2;
        case Setting::Bag3: return Purpose::Bag3;
        default: throw std::logic_error("setting has no strategy prompt");
    }
}

std::string first_text(const Gateway& g, ChatRequest req) {
    return g.complete(req).texts.front();
}

void finish(RunRecord& run, const StrategyDecision& d) {
    run.final_strategy = d.strategy;
    if (d.strategy == Strategy::DirectAnswer) run.final_answer = d.response;
}

}  // namespace

MessageList user_sim_messages(const std::string& question, const std::string& clarification,
                              const Intent& intent) {
    if (intent.disambiguated_question) {
        return render(PromptKind::UserSimAmbiguous, {{"question", question},
                                                     {"disambig_question", *intent.disambiguated_question},
                                                     {"clarification_question", clarification}});
    }
    return render(PromptKind::UserSimUnambiguous,
                  {{"question", question},
                   {"reference", text::join(intent.reference_answers, " / ")},
                   {"clarification_question", clarification}});
}

SimulatedAnswer simulate_user(const std::string& question, const std::string& clarification,
                              const Intent& intent, const ModelSpec& sim_model,
                              const Gateway& gateway) {
    if (text::trim(clarification).empty())
        throw std::invalid_argument("clarification question is empty");
    ChatRequest req{sim_model.id, user_sim_messages(question, clarification, intent),
                    single(sim_model), Purpose::UserSim};
    SimulatedAnswer out;
    out.parsed = parse_user_answer(first_text(gateway, std::move(req)));
    out.turn = Turn{3, Role::User, out.parsed.answer, std::nullopt, TurnSource::Simulator};
    return out;
}

RunRecord run_question(const QuestionRecord& record, const Intent& intent, const RunConfig& config,
                       const Gateways& gw, const HumanReply& human) {
    RunRecord run;
    run.question_id = record.question_id;
    run.setting = config.setting;
    run.plus = config.plus;
    run.model_id = config.model.id;
    run.intent_id = intent.intent_id;
    const std::string& question = record.question_text;
    run.turns.push_back(Turn{1, Role::User, question, std::nullopt,
                             human ? TurnSource::Human : TurnSource::Dataset});

    auto flag = [&](std::string_view f, const std::exception& e) {
        run.failures.insert(std::string(f));
        run.errors.push_back(e.what());
    };

    try {
        if (!is_augmented(config.setting)) {
            const bool disambig = config.setting == Setting::Disambig;
            const std::string& prompt =
                disambig && intent.disambiguated_question ? *intent.disambiguated_question : question;
            const std::string answer = first_text(
                *gw.model, {config.model.id, {Message{Role::User, apply_brevity(prompt, config.brevity)}},
                            completion_params(config), disambig ? Purpose::Disambig : Purpose::Direct});
            run.turns.push_back(Turn{2, Role::Assistant, answer, std::nullopt, TurnSource::Model});
            run.final_strategy = Strategy::DirectAnswer;
            run.final_answer = answer;
            return run;
        }

        const PromptKind kind = turn2_kind(config.setting);
        SlotMap slots{{"question", question}};
        if (is_belief_setting(config.setting)) {
            run.turn2_belief = build_belief(question, std::nullopt, config.model.id,
                                            belief_params(config), config.brevity, *gw.model);
            slots["K"] = std::to_string(run.turn2_belief->k);
            slots["belief_state_text"] = format_belief_state(run.turn2_belief->samples);
            if (kind == PromptKind::Bag3) slots["n"] = std::to_string(run.turn2_belief->k);
        }
        const StrategyDecision decision = parse_decision(
            first_text(*gw.model, {config.model.id, render(kind, slots), decision_params(config),
                                   turn2_purpose(config.setting)}),
            kind);
        run.turns.push_back(Turn{2, Role::Assistant, decision.response, decision, TurnSource::Model});
        if (decision.strategy != Strategy::ClarificationQuestion) {
            finish(run, decision);
            return run;
        }

        // Turn 3: the user's reply to the clarification question.
        if (human) {
            const auto reply = human(run.turns.back());
            if (!reply) {
                run.failures.insert(std::string(failure::kInterrupted));
                run.errors.emplace_back("conversation ended before the user replied");
                return run;
            }
            run.turns.push_back(Turn{3, Role::User, *reply, std::nullopt, TurnSource::Human});
        } else {
            try {
                auto sim = simulate_user(question, decision.response, intent, config.sim_model, *gw.sim);
                if (sim.parsed.fallback) run.warnings.insert(std::string(warning::kUserAnswerFallback));
                run.turns.push_back(std::move(sim.turn));
            } catch (const AuthError&) {
                throw;
            } catch (const std::exception& e) {
                flag(failure::kUserSim, e);
                return run;
            }
        }

        const MessageList history{Message{Role::User, question},
                                  Message{Role::Assistant, decision.response},
                                  Message{Role::User, run.turns[2].text}};

        if (!config.plus) {
            const std::string answer =
                first_text(*gw.model, {config.model.id, belief_messages(question, history, config.brevity),
                                       completion_params(config), Purpose::Direct});
            if (config.post_clarification_belief && is_belief_setting(config.setting)) {
                run.turn4_belief = build_belief(question, history, config.model.id,
                                                belief_params(config), config.brevity, *gw.model);
            }
            run.turns.push_back(Turn{4, Role::Assistant, answer, std::nullopt, TurnSource::Model});
            run.final_strategy = Strategy::DirectAnswer;
            run.final_answer = answer;
            return run;
        }

        MessageList messages = history;
        PromptKind final_kind = PromptKind::SagPlusFinal;
        Purpose final_purpose = Purpose::Sag;
        if (config.setting == Setting::Sag) {
            const auto prompt = render(PromptKind::SagPlusFinal, {{"question", question}});
            messages.insert(messages.end(), prompt.begin(), prompt.end());
        } else {
            run.turn4_belief = build_belief(question, history, config.model.id, belief_params(config),
                                            config.brevity, *gw.model);
            const auto prompt = render(
                PromptKind::BagPlusFinal,
                {{"n", std::to_string(run.turn4_belief->k)},
                 {"belief_state_text", format_belief_state(run.turn4_belief->samples)},
                 {"consensus_threshold", std::to_string(config.consensus_threshold)}});
            messages.insert(messages.end(), prompt.begin(), prompt.end());
            final_kind = PromptKind::BagPlusFinal;
            final_purpose = Purpose::BagPlus;
        }
        const StrategyDecision final_decision = parse_decision(
            first_text(*gw.model, {config.model.id, std::move(messages), decision_params(config),
                                   final_purpose}),
            final_kind);
        run.turns.push_back(
            Turn{4, Role::Assistant, final_decision.response, final_decision, TurnSource::Model});
        finish(run, final_decision);
    } catch (const AuthError&) {
        throw;
    } catch (const PartialBelief& e) {
        flag(failure::kPartialBelief, e);
    } catch (const UnparseableStrategy& e) {
        flag(failure::kUnparseableStrategy, e);
    } catch (const GatewayError& e) {
        flag(failure::kGateway, e);
    }
    if (run.failed()) {
        run.final_strategy.reset();
        run.final_answer.reset();
    }
    return run;
}

// ---------------------------------------------------------------------------

std::string RunManifest::digest() const {
    json c = config;
    for (const char* volatile_key : {"concurrency", "out_dir", "cache_dir", "base_url", "dataset_path"})
        c.erase(volatile_key);
    const json basis{{"schema_version", kRunSchemaVersion},
                     {"config", c},
                     {"prompt_catalog_version", prompt_catalog_version},
                     {"prompt_catalog_digest", prompt_catalog_digest},
                     {"dataset_digest", dataset_digest},
                     {"seed", seed}};
    return sha256_hex(basis.dump());
}

json to_json(const RunManifest& m) {
    return json{{"schema_version", kRunSchemaVersion},
                {"manifest_digest", m.digest()},
                {"config", m.config},
                {"prompt_catalog", {{"version", m.prompt_catalog_version},
                                    {"digest", m.prompt_catalog_digest}}},
                {"dataset_digest", m.dataset_digest},
                {"seed", m.seed},
                {"intent_selection", std::string(kHash64Description)},
                {"n_questions", m.n_questions},
                {"n_failed", m.n_failed},
                {"failure_counts", m.failure_counts},
                {"wall_time_s", m.wall_time_s},
                {"backend_calls", m.backend_calls},
                {"backend", m.backend_metadata}};
}

RunManifest run_manifest_from_json(const json& j) {
    RunManifest m;
    m.config = j.at("config");
    m.prompt_catalog_version = j.at("prompt_catalog").at("version").get<std::string>();
    m.prompt_catalog_digest = j.at("prompt_catalog").at("digest").get<std::string>();
    m.dataset_digest = j.at("dataset_digest").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_questions = j.at("n_questions").get<std::size_t>();
    m.n_failed = j.at("n_failed").get<std::size_t>();
    m.failure_counts = j.at("failure_counts").get<std::map<std::string, std::size_t>>();
    m.wall_time_s = j.at("wall_time_s").get<double>();
    m.backend_calls = j.at("backend_calls").get<std::uint64_t>();
    m.backend_metadata = j.value("backend", json::object());
    return m;
}

RunManifest make_manifest(std::span<const QuestionRecord> records, const RunConfig& config) {
    RunManifest m;
    m.config = to_json(config);
    const auto& catalog = PromptCatalog::instance();
    m.prompt_catalog_version = catalog.version();
    m.prompt_catalog_digest = catalog.digest();
    m.dataset_digest = dataset_digest(records);
    m.seed = config.seed;
    return m;
}

BatchResult run_batch(std::span<const QuestionRecord> records, const RunConfig& config,
                      const Gateways& gw, const std::set<std::string>& skip,
                      const RecordSink& on_record) {
    validate(config);
    if (!gw.model || !gw.sim || !gw.judge) throw ConfigError("gateways are not configured");
    const auto start = std::chrono::steady_clock::now();

    std::vector<const Backend*> backends;
    for (const auto* g : {gw.model.get(), gw.sim.get(), gw.judge.get()}) {
        if (std::find(backends.begin(), backends.end(), &g->backend()) == backends.end())
            backends.push_back(&g->backend());
    }
    auto total_calls = [&] {
        std::uint64_t n = 0;
        for (const auto* b : backends) n += b->calls();
        return n;
    };
    const std::uint64_t calls_before = total_calls();

    std::vector<const QuestionRecord*> pending;
    for (const auto& r : records)
        if (!skip.contains(r.question_id)) pending.push_back(&r);

    std::vector<std::optional<RunRecord>> results(pending.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr fatal;
    std::mutex fatal_mutex;
    std::mutex sink_mutex;

    auto worker = [&] {
        while (!abort.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= pending.size()) return;
            try {
                const auto& rec = *pending[i];
                results[i] = run_question(rec, select_intent(rec, config.seed), config, gw);
                if (on_record) {
                    std::lock_guard lock(sink_mutex);
                    on_record(*results[i]);
                }
            } catch (...) {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) fatal = std::current_exception();
                abort.store(true);
            }
        }
    };
    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(config.concurrency), pending.size());
    {
        std::vector<std::jthread> threads;
        for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    }
    if (fatal) std::rethrow_exception(fatal);

    BatchResult out;
    out.manifest = make_manifest(records, config);
    out.runs.reserve(results.size());
    for (auto& r : results) out.runs.push_back(std::move(*r));
    std::sort(out.runs.begin(), out.runs.end(),
              [](const auto& a, const auto& b) { return a.question_id < b.question_id; });
    out.manifest.n_questions = out.runs.size();
    for (const auto& r : out.runs) {
        if (r.failed()) ++out.manifest.n_failed;
        for (const auto& f : r.failures) ++out.manifest.failure_counts[f];
    }
    out.manifest.backend_calls = total_calls() - calls_before;
    out.manifest.backend_metadata = gw.model->backend().metadata();
    out.manifest.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

}  // namespace bag
