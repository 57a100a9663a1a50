#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "bag/analysis.hpp"
#include "bag/dataset.hpp"
#include "bag/dialogue.hpp"
#include "bag/gateway.hpp"

namespace bag::test {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(BAG_FIXTURE_DIR) / name;
}

inline std::filesystem::path golden_dir() { return std::filesystem::path(BAG_GOLDEN_DIR); }

class TempDir {
public:
    explicit TempDir(const std::string& tag = "bag");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::string read_text(const std::filesystem::path& p);
void write_text(const std::filesystem::path& p, const std::string& content);

/// Calls the CLI in-process; output is captured into `out` / `err` when given.
int cli(const std::vector<std::string>& args, std::string* out = nullptr, std::string* err = nullptr,
        const std::string& stdin_text = "");

/// Gateway over a mock without cache and with retries that never sleep.
std::shared_ptr<Gateway> mock_gateway(std::shared_ptr<MockBackend> mock,
                                      std::shared_ptr<ResponseCache> cache = nullptr);

QuestionRecord make_record(const std::string& id, const std::string& question,
                           const std::vector<std::vector<std::string>>& intent_aliases);

// ---------------------------------------------------------------------------
// Decomposition tables as real records.

struct DecompCase {
    Subset subset{Subset::Direct};
    bool base_correct{false};
    bool bag_correct{false};  // ignored for Abstain
    /// Clarified at turn 2, abstained at turn 4; counts toward A.
    bool late_abstain{false};
};

struct DecompRecords {
    std::vector<RunRecord> base_runs, bag_runs;
    std::vector<Verdict> base_verdicts, bag_verdicts;
};

DecompRecords build_decomposition_records(const std::vector<DecompCase>& cases);

// ---------------------------------------------------------------------------
// Randomly scripted worlds for property tests. Scripts mix well-formed,
// disallowed and garbage outputs plus missing entries, so every failure path
// is reachable.

struct RandomWorld {
    std::vector<QuestionRecord> records;
    std::vector<ScriptEntry> script;
    RunConfig config;
};

RandomWorld random_world(std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// The scripted 10-question world run through every setting.

struct PipelineStep {
    std::string name;  // run directory name, e.g. "bag2_plus"
    std::string setting;
    bool plus{false};
};

const std::vector<PipelineStep>& pipeline_steps();

struct PipelineResult {
    /// Relative path -> content for every golden-tracked artifact.
    std::map<std::string, std::string> files;
    std::vector<std::string> errors;
    double seconds{0.0};
};

PipelineResult run_pipeline(const std::filesystem::path& work);

/// Differences between `files` and the golden tree (missing, extra, changed).
std::vector<std::string> compare_with_golden(const std::map<std::string, std::string>& files);
void write_golden(const std::map<std::string, std::string>& files);

}  // namespace bag::test
