#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "bag/dialogue.hpp"
#include "bag/judging.hpp"

namespace bag::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kConfigError = 2,
    kDatasetError = 3,
    kBackendUnavailable = 4,
};

/// Entry point behind the `bag` executable. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

// Run directory layout.
inline constexpr const char* kRunsFile = "runs.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";
std::string verdicts_file(JudgeMode mode);

struct RunDir {
    RunManifest manifest;
    std::string digest;
    std::vector<RunRecord> runs;  // sorted by question_id
};

/// Reads manifest.json and runs.jsonl; every line must carry the manifest
/// digest. Throws ConfigError otherwise.
RunDir read_run_dir(const std::filesystem::path& dir);

/// Verdict sidecar lines; all must carry `expected_digest`.
std::vector<Verdict> read_verdicts(const std::filesystem::path& file, const std::string& expected_digest);

}  // namespace bag::cli
