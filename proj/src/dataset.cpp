#include "bag/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "bag/errors.hpp"
#include "bag/hash.hpp"
#include "bag/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bag {

namespace {

std::vector<std::string> clean_aliases(const json& answers, std::size_t entry_index) {
    if (!answers.is_array())
        throw ParseError(fmt::format("entry {}: answer must be a list", entry_index));
    std::vector<std::string> out;
    for (const auto& a : answers) {
        if (!a.is_string())
            throw ParseError(fmt::format("entry {}: answer items must be strings", entry_index));
        std::string t = text::trim(a.get<std::string>());
        if (t.empty()) continue;
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(std::move(t));
    }
    return out;
}

struct QaPair {
    std::string question;
    std::vector<std::string> answers;
    bool operator==(const QaPair&) const = default;
};

}  // namespace

LoadReport load_ambigqa(const json& entries) {
    if (!entries.is_array()) throw ParseError("dataset root must be a JSON array");
    LoadReport report;
    report.entries_read = entries.size();

    for (std::size_t idx = 0; idx < entries.size(); ++idx) {
        const json& e = entries[idx];
        QuestionRecord rec;
        bool has_single = false;
        bool has_multi = false;
        std::vector<std::string> single_aliases;
        std::vector<QaPair> pairs;
        try {
            rec.question_id = e.at("id").get<std::string>();
            rec.question_text = text::trim(e.at("question").get<std::string>());
            const json& annotations = e.at("annotations");
            if (!annotations.is_array() || annotations.empty())
                throw ParseError(fmt::format("entry {}: annotations must be a non-empty list", idx));
            for (const auto& ann : annotations) {
                const std::string type = ann.at("type").get<std::string>();
                if (type == "singleAnswer") {
                    has_single = true;
                    for (auto& a : clean_aliases(ann.at("answer"), idx)) {
                        if (std::find(single_aliases.begin(), single_aliases.end(), a) ==
                            single_aliases.end())
                            single_aliases.push_back(std::move(a));
                    }
                } else if (type == "multipleQAs") {
                    has_multi = true;
                    for (const auto& qa : ann.at("qaPairs")) {
                        QaPair p{text::trim(qa.at("question").get<std::string>()),
                                 clean_aliases(qa.at("answer"), idx)};
                        if (std::find(pairs.begin(), pairs.end(), p) == pairs.end())
                            pairs.push_back(std::move(p));
                    }
                } else {
                    throw ParseError(fmt::format("entry {}: unknown annotation type '{}'", idx, type));
                }
            }
        } catch (const json::exception& ex) {
            throw ParseError(fmt::format("entry {}: {}", idx, ex.what()));
        }

        if (has_single && has_multi) {
            ++report.clash_dropped;
            continue;
        }
        if (has_single) {
            if (!single_aliases.empty())
                rec.intents.push_back(Intent{rec.question_id + "#0", std::nullopt, single_aliases});
        } else {
            for (auto& p : pairs) {
                if (p.answers.empty()) continue;
                rec.intents.push_back(Intent{fmt::format("{}#{}", rec.question_id, rec.intents.size()),
                                             std::move(p.question), std::move(p.answers)});
            }
        }
        if (rec.intents.empty()) {
            ++report.empty_dropped;
            continue;
        }
        rec.ambiguous = rec.intents.size() > 1;
        if (!rec.ambiguous) rec.intents.front().disambiguated_question.reset();
        report.records.push_back(std::move(rec));
    }

    if (report.records.empty()) throw EmptyDataset("no questions survived loading");
    std::sort(report.records.begin(), report.records.end(),
              [](const auto& a, const auto& b) { return a.question_id < b.question_id; });
    return report;
}

LoadReport load_ambigqa(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return load_ambigqa(j);
}

json to_ambigqa_json(std::span<const QuestionRecord> records) {
    json out = json::array();
    for (const auto& r : records) {
        json ann;
        if (!r.ambiguous) {
            ann = {{"type", "singleAnswer"}, {"answer", r.intents.front().reference_answers}};
        } else {
            json pairs = json::array();
            for (const auto& i : r.intents) {
                pairs.push_back({{"question", i.disambiguated_question.value_or(r.question_text)},
                                 {"answer", i.reference_answers}});
            }
            ann = {{"type", "multipleQAs"}, {"qaPairs", std::move(pairs)}};
        }
        out.push_back({{"id", r.question_id},
                       {"question", r.question_text},
                       {"annotations", json::array({std::move(ann)})}});
    }
    return out;
}

std::size_t select_intent_index(const QuestionRecord& record, std::uint64_t seed) {
    if (record.intents.empty()) throw std::invalid_argument("record has no intents");
    return static_cast<std::size_t>(hash64(seed, record.question_id) % record.intents.size());
}

const Intent& select_intent(const QuestionRecord& record, std::uint64_t seed) {
    return record.intents[select_intent_index(record, seed)];
}

StatsReport dataset_stats(std::span<const QuestionRecord> records) {
    if (records.empty()) throw std::invalid_argument("dataset_stats needs at least one record");
    StatsReport s;
    s.count = records.size();
    std::size_t n_amb = 0;
    double sum = 0.0;
    double words = 0.0;
    for (const auto& r : records) {
        words += static_cast<double>(text::word_count(r.question_text));
        if (r.ambiguous) {
            ++n_amb;
            sum += static_cast<double>(r.intents.size());
        }
    }
    s.ambiguous_fraction = static_cast<double>(n_amb) / static_cast<double>(s.count);
    s.mean_question_words = words / static_cast<double>(s.count);
    if (n_amb > 0) {
        s.mean_intents_ambiguous = sum / static_cast<double>(n_amb);
        double ss = 0.0;
        for (const auto& r : records) {
            if (!r.ambiguous) continue;
            const double d = static_cast<double>(r.intents.size()) - s.mean_intents_ambiguous;
            ss += d * d;
        }
        s.sd_intents_ambiguous = std::sqrt(ss / static_cast<double>(n_amb));
    }
    return s;
}

json to_json(const StatsReport& s) {
    return json{{"count", s.count},
                {"ambiguous_fraction", s.ambiguous_fraction},
                {"mean_intents_ambiguous", s.mean_intents_ambiguous},
                {"sd_intents_ambiguous", s.sd_intents_ambiguous},
                {"mean_question_words", s.mean_question_words}};
}

void to_json(json& j, const Intent& i) {
    j = json{{"intent_id", i.intent_id},
             {"disambiguated_question",
              i.disambiguated_question ? json(*i.disambiguated_question) : json(nullptr)},
             {"reference_answers", i.reference_answers}};
}

void from_json(const json& j, Intent& i) {
    i.intent_id = j.at("intent_id").get<std::string>();
    const auto& d = j.at("disambiguated_question");
    i.disambiguated_question =
        d.is_null() ? std::nullopt : std::optional<std::string>(d.get<std::string>());
    i.reference_answers = j.at("reference_answers").get<std::vector<std::string>>();
}

void to_json(json& j, const QuestionRecord& r) {
    j = json{{"question_id", r.question_id},
             {"question_text", r.question_text},
             {"intents", r.intents},
             {"ambiguous", r.ambiguous}};
}

void from_json(const json& j, QuestionRecord& r) {
    r.question_id = j.at("question_id").get<std::string>();
    r.question_text = j.at("question_text").get<std::string>();
    r.intents = j.at("intents").get<std::vector<Intent>>();
    r.ambiguous = j.at("ambiguous").get<bool>();
}

std::string to_jsonl(std::span<const QuestionRecord> records) {
    std::string out;
    for (const auto& r : records) {
        out += json(r).dump();
        out += '\n';
    }
    return out;
}

void write_jsonl(const fs::path& path, std::span<const QuestionRecord> records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << to_jsonl(records);
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<QuestionRecord> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset " + path.string());
    std::vector<QuestionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line).get<QuestionRecord>());
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    if (out.empty()) throw EmptyDataset(path.string() + " holds no records");
    return out;
}

std::vector<QuestionRecord> load_dataset(const fs::path& path) {
    if (path.extension() == ".jsonl") return read_jsonl(path);
    return load_ambigqa(path).records;
}

std::string dataset_digest(std::span<const QuestionRecord> records) {
    return sha256_hex(to_jsonl(records));
}

}  // namespace bag
