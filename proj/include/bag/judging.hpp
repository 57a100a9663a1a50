#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bag/dataset.hpp"
#include "bag/dialogue.hpp"
#include "bag/gateway.hpp"

namespace bag {

enum class JudgeMode { OneIntent, AnyIntent };

std::string_view to_string(JudgeMode mode);
/// Accepts "one_intent"/"one" and "any_intent"/"any".
JudgeMode parse_judge_mode(std::string_view s);

struct Verdict {
    std::string question_id;
    JudgeMode mode{JudgeMode::OneIntent};
    bool correct{false};  // meaningful only when !judge_failed
    std::string judge_reasoning;
    std::string judged_text;
    std::optional<std::string> intent_id;  // one_intent only
    bool judge_failed{false};
    std::string error;

    bool operator==(const Verdict&) const = default;
};

void to_json(nlohmann::json& j, const Verdict& v);
void from_json(const nlohmann::json& j, Verdict& v);

/// Aliases of one intent as alternates: "a / b / c".
std::string reference_text(const Intent& intent);
/// One "- a / b" line per intent.
std::string references_block(const QuestionRecord& record);

/// The intent a run was evaluated against. Throws std::invalid_argument.
const Intent& run_intent(const RunRecord& run, const QuestionRecord& record);

/// The judge prompt for a run with a final answer. Only the question, the
/// final answer and the references are shown to the judge.
MessageList judge_messages(const RunRecord& run, const QuestionRecord& record, JudgeMode mode);

/// Absent when the run has no final answer (abstention or pipeline failure).
/// Unparseable verdicts and gateway failures yield judge_failed = true;
/// AuthError propagates.
std::optional<Verdict> judge(const RunRecord& run, const QuestionRecord& record, JudgeMode mode,
                             const ModelSpec& judge_model, const Gateway& gateway);

/// Judges every run, `concurrency` at a time. Output is sorted by question_id.
std::vector<Verdict> judge_all(std::span<const RunRecord> runs,
                               std::span<const QuestionRecord> records, JudgeMode mode,
                               const ModelSpec& judge_model, const Gateway& gateway,
                               int concurrency = 1);

struct AccuracyReport {
    JudgeMode mode{JudgeMode::OneIntent};
    std::size_t n_total{0};
    std::size_t n_abstain{0};
    std::size_t n_pipeline_failed{0};
    std::size_t n_judge_failed{0};
    std::size_t n_judged{0};
    std::size_t n_correct{0};
    std::optional<double> accuracy;  // absent when nothing was judged

    std::size_t n_failed() const { return n_pipeline_failed + n_judge_failed; }
};

/// Verdicts must share one mode and cover every run with a final answer.
AccuracyReport accuracy(std::span<const Verdict> verdicts, std::span<const RunRecord> runs);

/// Percentage with one decimal ("40.1"), or "undefined".
std::string format_pct(std::optional<double> fraction);

nlohmann::json to_json(const AccuracyReport& r);

// ---------------------------------------------------------------------------
// Reference leaks in simulated user answers.

struct LeakReport {
    std::string question_id;
    bool user_answer_contains_ref{false};
    bool cq_contains_ref{false};
    bool true_leak{false};

    bool operator==(const LeakReport&) const = default;
};

/// Requires a turn-3 user answer.
LeakReport detect_leak(const RunRecord& run, const Intent& intent);

struct LeakSummary {
    std::vector<LeakReport> reports;  // one per clarified run
    std::size_t n_contains{0};
    std::size_t n_cq_contains{0};
    std::size_t n_true_leak{0};
    std::size_t n_idk{0};  // user answers that are exactly "I don't know"

    double rate(std::size_t count) const {
        return reports.empty() ? 0.0 : static_cast<double>(count) / static_cast<double>(reports.size());
    }
};

LeakSummary summarize_leaks(std::span<const RunRecord> runs, std::span<const QuestionRecord> records);
nlohmann::json to_json(const LeakSummary& s);

// ---------------------------------------------------------------------------
// Strategy labels for free-form generations.

enum class GenerationStrategy {
    ClarificationQuestion,
    Refusal,
    MultipleAnswers,
    ContextualizedAnswer,
    DirectAnswer,
};

std::string_view to_string(GenerationStrategy s);
/// Reads the LABEL line of a classifier completion. Throws UnparseableLabel.
GenerationStrategy parse_generation_label(std::string_view raw);

/// Absent when the classifier output could not be parsed.
std::optional<GenerationStrategy> classify_generation_strategy(const std::string& question,
                                                               const std::string& text,
                                                               const ModelSpec& judge_model,
                                                               const Gateway& gateway);

struct StrategyDistribution {
    std::map<std::string, std::size_t> counts;  // every label, zeros included
    std::size_t n_classified{0};
    std::size_t n_failed{0};
};

StrategyDistribution classify_runs(std::span<const RunRecord> runs,
                                   std::span<const QuestionRecord> records,
                                   const ModelSpec& judge_model, const Gateway& gateway);
nlohmann::json to_json(const StrategyDistribution& d);

}  // namespace bag
