#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace bag {

/// One disambiguation/answer pair, treated as a distinct user intent.
struct Intent {
    std::string intent_id;
    std::optional<std::string> disambiguated_question;  // absent for unambiguous questions
    std::vector<std::string> reference_answers;         // aliases of one answer

    bool operator==(const Intent&) const = default;
};

struct QuestionRecord {
    std::string question_id;
    std::string question_text;
    std::vector<Intent> intents;
    bool ambiguous{false};

    bool operator==(const QuestionRecord&) const = default;
};

struct LoadReport {
    std::vector<QuestionRecord> records;  // sorted by question_id
    std::size_t entries_read{0};
    /// Questions carrying both a singleAnswer and a multipleQAs annotation.
    std::size_t clash_dropped{0};
    /// Questions left without any non-empty answer after trimming.
    std::size_t empty_dropped{0};
};

/// Reads an AmbigQA-layout JSON file. Throws ParseError (with the entry
/// index) on malformed input and EmptyDataset when nothing survives.
LoadReport load_ambigqa(const std::filesystem::path& path);
LoadReport load_ambigqa(const nlohmann::json& entries);

/// Inverse layout of load_ambigqa: one singleAnswer or one multipleQAs
/// annotation per record.
nlohmann::json to_ambigqa_json(std::span<const QuestionRecord> records);

std::size_t select_intent_index(const QuestionRecord& record, std::uint64_t seed);
/// index = hash64(seed, question_id) mod |intents|.
const Intent& select_intent(const QuestionRecord& record, std::uint64_t seed);

struct StatsReport {
    std::size_t count{0};
    double ambiguous_fraction{0.0};
    double mean_intents_ambiguous{0.0};
    double sd_intents_ambiguous{0.0};  // population standard deviation
    double mean_question_words{0.0};
};

StatsReport dataset_stats(std::span<const QuestionRecord> records);
nlohmann::json to_json(const StatsReport& stats);

void to_json(nlohmann::json& j, const Intent& intent);
void from_json(const nlohmann::json& j, Intent& intent);
void to_json(nlohmann::json& j, const QuestionRecord& record);
void from_json(const nlohmann::json& j, QuestionRecord& record);

/// Normalized dataset: one QuestionRecord per line.
std::string to_jsonl(std::span<const QuestionRecord> records);
void write_jsonl(const std::filesystem::path& path, std::span<const QuestionRecord> records);
std::vector<QuestionRecord> read_jsonl(const std::filesystem::path& path);

/// Either layout, chosen by extension (.jsonl = normalized).
std::vector<QuestionRecord> load_dataset(const std::filesystem::path& path);

/// sha256 over to_jsonl(records).
std::string dataset_digest(std::span<const QuestionRecord> records);

}  // namespace bag
