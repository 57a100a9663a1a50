#include "bag/judging.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "bag/errors.hpp"
#include "bag/prompts.hpp"
#include "bag/text.hpp"

using nlohmann::json;

namespace bag {

std::string_view to_string(JudgeMode mode) {
    return mode == JudgeMode::OneIntent ? "one_intent" : "any_intent";
}

JudgeMode parse_judge_mode(std::string_view s) {
    if (s == "one_intent" || s == "one") return JudgeMode::OneIntent;
    if (s == "any_intent" || s == "any") return JudgeMode::AnyIntent;
    throw std::invalid_argument(fmt::format("unknown judge mode '{}'", s));
}

void to_json(json& j, const Verdict& v) {
    j = json{{"question_id", v.question_id},
             {"mode", std::string(to_string(v.mode))},
             {"correct", v.correct},
             {"judge_reasoning", v.judge_reasoning},
             {"judged_text", v.judged_text},
             {"intent_id", v.intent_id ? json(*v.intent_id) : json(nullptr)},
             {"judge_failed", v.judge_failed}};
    if (!v.error.empty()) j["error"] = v.error;
}

void from_json(const json& j, Verdict& v) {
    v.question_id = j.at("question_id").get<std::string>();
    v.mode = parse_judge_mode(j.at("mode").get<std::string>());
    v.correct = j.at("correct").get<bool>();
    v.judge_reasoning = j.at("judge_reasoning").get<std::string>();
    v.judged_text = j.at("judged_text").get<std::string>();
    const auto& id = j.at("intent_id");
    v.intent_id = id.is_null() ? std::nullopt : std::optional<std::string>(id.get<std::string>());
    v.judge_failed = j.at("judge_failed").get<bool>();
    v.error = j.value("error", "");
}

std::string reference_text(const Intent& intent) { return text::join(intent.reference_answers, " / "); }

std::string references_block(const QuestionRecord& record) {
    std::vector<std::string> lines;
    for (const auto& intent : record.intents) lines.push_back("- " + reference_text(intent));
    return text::join(lines, "\n");
}

const Intent& run_intent(const RunRecord& run, const QuestionRecord& record) {
    for (const auto& intent : record.intents)
        if (intent.intent_id == run.intent_id) return intent;
    throw std::invalid_argument(
        fmt::format("intent '{}' not found in question '{}'", run.intent_id, record.question_id));
}

MessageList judge_messages(const RunRecord& run, const QuestionRecord& record, JudgeMode mode) {
    if (!run.final_answer) throw std::invalid_argument("run has no final answer to judge");
    if (mode == JudgeMode::OneIntent) {
        return render(PromptKind::JudgeOne, {{"ref_text", reference_text(run_intent(run, record))},
                                             {"question", record.question_text},
                                             {"candidate", *run.final_answer}});
    }
    return render(PromptKind::JudgeAny, {{"refs_block", references_block(record)},
                                         {"question", record.question_text},
                                         {"candidate", *run.final_answer}});
}

std::optional<Verdict> judge(const RunRecord& run, const QuestionRecord& record, JudgeMode mode,
                             const ModelSpec& judge_model, const Gateway& gateway) {
    if (!run.final_answer) return std::nullopt;
    if (run.question_id != record.question_id)
        throw std::invalid_argument("run and record refer to different questions");

    Verdict v;
    v.question_id = run.question_id;
    v.mode = mode;
    v.judged_text = *run.final_answer;
    if (mode == JudgeMode::OneIntent) v.intent_id = run.intent_id;

    SamplingParams params = judge_model.decode;
    params.n_samples = 1;
    try {
        const auto response =
            gateway.complete({judge_model.id, judge_messages(run, record, mode), params, Purpose::Judge});
        const auto parsed = parse_verdict(response.texts.front());
        v.correct = parsed.verdict;
        v.judge_reasoning = parsed.reasoning;
    } catch (const AuthError&) {
        throw;
    } catch (const UnparseableVerdict& e) {
        v.judge_failed = true;
        v.error = e.what();
    } catch (const GatewayError& e) {
        v.judge_failed = true;
        v.error = e.what();
    }
    return v;
}

namespace {

std::map<std::string_view, const QuestionRecord*> index_records(std::span<const QuestionRecord> records) {
    std::map<std::string_view, const QuestionRecord*> out;
    for (const auto& r : records) out[r.question_id] = &r;
    return out;
}

const QuestionRecord& find_record(const std::map<std::string_view, const QuestionRecord*>& index,
                                  const std::string& question_id) {
    const auto it = index.find(question_id);
    if (it == index.end())
        throw std::invalid_argument(fmt::format("question '{}' is not in the dataset", question_id));
    return *it->second;
}

}  // namespace

std::vector<Verdict> judge_all(std::span<const RunRecord> runs, std::span<const QuestionRecord> records,
                               JudgeMode mode, const ModelSpec& judge_model, const Gateway& gateway,
                               int concurrency) {
    const auto index = index_records(records);
    std::vector<std::optional<Verdict>> slots(runs.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr fatal;
    std::mutex fatal_mutex;
    auto worker = [&] {
        while (!abort.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= runs.size()) return;
            try {
                slots[i] = judge(runs[i], find_record(index, runs[i].question_id), mode, judge_model, gateway);
            } catch (...) {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) fatal = std::current_exception();
                abort.store(true);
            }
        }
    };
    {
        std::vector<std::jthread> threads;
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(concurrency, 1)), runs.size());
        for (std::size_t w = 0; w < n; ++w) threads.emplace_back(worker);
    }
    if (fatal) std::rethrow_exception(fatal);

    std::vector<Verdict> out;
    for (auto& s : slots)
        if (s) out.push_back(std::move(*s));
    std::sort(out.begin(), out.end(),
              [](const Verdict& a, const Verdict& b) { return a.question_id < b.question_id; });
    return out;
}

AccuracyReport accuracy(std::span<const Verdict> verdicts, std::span<const RunRecord> runs) {
    AccuracyReport r;
    std::map<std::string_view, const Verdict*> by_question;
    for (const auto& v : verdicts) {
        if (!by_question.empty() && v.mode != r.mode)
            throw std::invalid_argument("verdicts mix judge modes");
        r.mode = v.mode;
        if (!by_question.emplace(v.question_id, &v).second)
            throw std::invalid_argument(fmt::format("duplicate verdict for '{}'", v.question_id));
    }
    r.n_total = runs.size();
    for (const auto& run : runs) {
        if (run.failed()) {
            ++r.n_pipeline_failed;
            continue;
        }
        if (!run.final_answer) {
            ++r.n_abstain;
            continue;
        }
        const auto it = by_question.find(run.question_id);
        if (it == by_question.end())
            throw std::invalid_argument(fmt::format("no verdict for answered question '{}'", run.question_id));
        if (it->second->judge_failed) {
            ++r.n_judge_failed;
            continue;
        }
        ++r.n_judged;
        if (it->second->correct) ++r.n_correct;
    }
    if (r.n_judged > 0) r.accuracy = static_cast<double>(r.n_correct) / static_cast<double>(r.n_judged);
    return r;
}

std::string format_pct(std::optional<double> fraction) {
    if (!fraction) return "undefined";
    return fmt::format("{:.1f}", *fraction * 100.0);
}

json to_json(const AccuracyReport& r) {
    return json{{"mode", std::string(to_string(r.mode))},
                {"n_total", r.n_total},
                {"n_abstain", r.n_abstain},
                {"n_failed", r.n_failed()},
                {"n_pipeline_failed", r.n_pipeline_failed},
                {"n_judge_failed", r.n_judge_failed},
                {"n_judged", r.n_judged},
                {"n_correct", r.n_correct},
                {"accuracy", r.accuracy ? json(*r.accuracy) : json(nullptr)},
                {"accuracy_pct", format_pct(r.accuracy)}};
}

// ---------------------------------------------------------------------------

LeakReport detect_leak(const RunRecord& run, const Intent& intent) {
    if (run.turns.size() < 3) throw std::invalid_argument("run has no user answer at turn 3");
    const std::string& cq = run.turns[1].text;
    const std::string& answer = run.turns[2].text;
    LeakReport r;
    r.question_id = run.question_id;
    for (const auto& alias : intent.reference_answers) {
        r.user_answer_contains_ref = r.user_answer_contains_ref || text::contains_normalized(answer, alias);
        r.cq_contains_ref = r.cq_contains_ref || text::contains_normalized(cq, alias);
    }
    r.true_leak = r.user_answer_contains_ref && !r.cq_contains_ref;
    return r;
}

LeakSummary summarize_leaks(std::span<const RunRecord> runs, std::span<const QuestionRecord> records) {
    const auto index = index_records(records);
    static const std::string kIdk = text::normalize_answer("I don't know");
    LeakSummary s;
    for (const auto& run : runs) {
        if (run.turns.size() < 3) continue;
        const auto& record = find_record(index, run.question_id);
        const auto report = detect_leak(run, run_intent(run, record));
        s.n_contains += report.user_answer_contains_ref;
        s.n_cq_contains += report.cq_contains_ref;
        s.n_true_leak += report.true_leak;
        if (text::normalize_answer(run.turns[2].text) == kIdk) ++s.n_idk;
        s.reports.push_back(report);
    }
    return s;
}

json to_json(const LeakSummary& s) {
    return json{{"n_clarified", s.reports.size()},
                {"n_user_answer_contains_ref", s.n_contains},
                {"n_cq_contains_ref", s.n_cq_contains},
                {"n_true_leak", s.n_true_leak},
                {"n_idk", s.n_idk},
                {"contains_rate", s.rate(s.n_contains)},
                {"true_leak_rate", s.rate(s.n_true_leak)},
                {"idk_rate", s.rate(s.n_idk)}};
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array kGenerationStrategies{
    GenerationStrategy::ClarificationQuestion, GenerationStrategy::Refusal,
    GenerationStrategy::MultipleAnswers, GenerationStrategy::ContextualizedAnswer,
    GenerationStrategy::DirectAnswer};

std::optional<GenerationStrategy> match_label(std::string_view value) {
    const auto lines = text::split_lines(value);
    if (lines.empty()) return std::nullopt;
    std::string token;
    for (char c : text::trim(lines.front())) {
        if (std::string_view("*[]\"'`").find(c) != std::string_view::npos) continue;
        token.push_back(c == ' ' || c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    while (!token.empty() && std::string_view("._!,;:").find(token.back()) != std::string_view::npos)
        token.pop_back();
    while (!token.empty() && token.front() == '_') token.erase(token.begin());
    if (token == "contextualised_answer") token = "contextualized_answer";
    for (auto s : kGenerationStrategies)
        if (to_string(s) == token) return s;
    return std::nullopt;
}

}  // namespace

std::string_view to_string(GenerationStrategy s) {
    switch (s) {
        case GenerationStrategy::ClarificationQuestion: return "clarification_question";
        case GenerationStrategy::Refusal: return "refusal";
        case GenerationStrategy::MultipleAnswers: return "multiple_answers";
        case GenerationStrategy::ContextualizedAnswer: return "contextualized_answer";
        case GenerationStrategy::DirectAnswer: return "direct_answer";
    }
    return "?";
}

GenerationStrategy parse_generation_label(std::string_view raw) {
    static constexpr std::array<std::string_view, 1> kHeaders{"LABEL"};
    const auto sections = parse_sections(raw, kHeaders);
    const auto it = sections.find("LABEL");
    const std::string value = it != sections.end() ? it->second : text::trim(raw);
    if (auto s = match_label(value)) return *s;
    throw UnparseableLabel(fmt::format("unrecognized label in '{}'", text::trim(raw)));
}

std::optional<GenerationStrategy> classify_generation_strategy(const std::string& question,
                                                               const std::string& text,
                                                               const ModelSpec& judge_model,
                                                               const Gateway& gateway) {
    SamplingParams params = judge_model.decode;
    params.n_samples = 1;
    try {
        const auto response = gateway.complete(
            {judge_model.id,
             render(PromptKind::StrategyClassify, {{"question", question}, {"response", text}}), params,
             Purpose::Classify});
        return parse_generation_label(response.texts.front());
    } catch (const AuthError&) {
        throw;
    } catch (const UnparseableLabel&) {
        return std::nullopt;
    } catch (const GatewayError&) {
        return std::nullopt;
    }
}

StrategyDistribution classify_runs(std::span<const RunRecord> runs, std::span<const QuestionRecord> records,
                                   const ModelSpec& judge_model, const Gateway& gateway) {
    const auto index = index_records(records);
    StrategyDistribution d;
    for (auto s : kGenerationStrategies) d.counts[std::string(to_string(s))] = 0;
    for (const auto& run : runs) {
        if (!run.final_answer) continue;
        const auto label = classify_generation_strategy(find_record(index, run.question_id).question_text,
                                                        *run.final_answer, judge_model, gateway);
        if (label) {
            ++d.counts[std::string(to_string(*label))];
            ++d.n_classified;
        } else {
            ++d.n_failed;
        }
    }
    return d;
}

json to_json(const StrategyDistribution& d) {
    json fractions = json::object();
    for (const auto& [label, n] : d.counts)
        fractions[label] = d.n_classified ? static_cast<double>(n) / static_cast<double>(d.n_classified) : 0.0;
    return json{{"counts", d.counts},
                {"fractions", fractions},
                {"n_classified", d.n_classified},
                {"n_failed", d.n_failed}};
}

}  // namespace bag
