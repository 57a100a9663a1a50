#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bag/belief.hpp"
#include "bag/dataset.hpp"
#include "bag/gateway.hpp"
#include "bag/prompts.hpp"
#include "bag/types.hpp"

namespace bag {

inline constexpr int kRunSchemaVersion = 1;

enum class TurnSource { Dataset, Model, Simulator, Human };

std::string_view to_string(TurnSource s);
TurnSource parse_turn_source(std::string_view s);

struct Turn {
    int index{1};
    Role role{Role::User};
    std::string text;
    std::optional<StrategyDecision> meta;
    TurnSource source{TurnSource::Dataset};

    bool operator==(const Turn&) const = default;
};

namespace failure {
inline constexpr std::string_view kGateway = "gateway_error";
inline constexpr std::string_view kPartialBelief = "partial_belief";
inline constexpr std::string_view kUnparseableStrategy = "unparseable_strategy";
inline constexpr std::string_view kUserSim = "user_sim_error";
inline constexpr std::string_view kInterrupted = "interrupted";
}  // namespace failure

namespace warning {
inline constexpr std::string_view kUserAnswerFallback = "user_answer_fallback";
}  // namespace warning

struct RunRecord {
    std::string question_id;
    Setting setting{Setting::Standard};
    bool plus{false};
    std::string model_id;
    std::string intent_id;
    std::optional<BeliefState> turn2_belief;
    std::optional<BeliefState> turn4_belief;
    std::vector<Turn> turns;
    std::optional<Strategy> final_strategy;  // absent on pipeline failure
    std::optional<std::string> final_answer;  // present iff final strategy != ABSTAIN
    std::set<std::string> failures;
    std::set<std::string> warnings;
    std::vector<std::string> errors;  // messages behind the failure flags

    bool failed() const { return !failures.empty(); }
    /// Strategy of the turn-2 assistant decision (DIRECT_ANSWER for the
    /// direct settings); absent when turn 2 never happened.
    std::optional<Strategy> routed_strategy() const;
    bool clarified() const { return turns.size() >= 3; }

    bool operator==(const RunRecord&) const = default;
};

/// U A (U A)? with turn 1 from the dataset or a human, turn 3 present iff turn 2 chose to clarify, roles and
/// indices consistent, and final_answer present iff the final strategy is not
/// ABSTAIN. Failed runs only need a well-formed prefix.
bool check_turn_structure(const RunRecord& run, std::string* why = nullptr);

void to_json(nlohmann::json& j, const Turn& t);
void from_json(const nlohmann::json& j, Turn& t);
void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

// ---------------------------------------------------------------------------

struct ModelSpec {
    std::string id;
    SamplingParams decode;  // the model's recommended decoding setting; n_samples ignored
};

struct RunConfig {
    std::string dataset_path;
    ModelSpec model{"model", {}};
    Setting setting{Setting::Standard};
    bool plus{false};
    int k{10};
    std::uint64_t seed{0};
    Brevity brevity{Brevity::Free};
    int concurrency{1};
    ModelSpec judge_model{"judge", {0.0, 1.0, 0, 0.0, 512, 1}};
    ModelSpec sim_model{"simulator", {}};
    int brevity_max_tokens{64};
    int decision_max_tokens{1024};
    int consensus_threshold{70};
    /// Also sample a belief state after clarification in non-plus runs.
    bool post_clarification_belief{false};
    std::string out_dir{"runs"};
    std::string cache_dir{".bag_cache"};
    std::string base_url;  // falls back to BAG_BASE_URL
};

/// Throws ConfigError on violated invariants.
void validate(const RunConfig& config);
nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Gateways per role; all three may share one instance.
struct Gateways {
    std::shared_ptr<const Gateway> model;
    std::shared_ptr<const Gateway> sim;
    std::shared_ptr<const Gateway> judge;

    static Gateways single(std::shared_ptr<const Gateway> g) { return {g, g, g}; }
};

/// Supplies the turn-3 reply to the turn-2 clarification when a human is in
/// the loop. Returning nullopt ends the conversation (EOF / interrupt).
using HumanReply = std::function<std::optional<std::string>(const Turn& clarification)>;

struct SimulatedAnswer {
    Turn turn;
    UserAnswer parsed;
};

SimulatedAnswer simulate_user(const std::string& question, const std::string& clarification,
                              const Intent& intent, const ModelSpec& sim_model,
                              const Gateway& gateway);

/// The user-simulator prompt for the intent (exposed for inspection).
MessageList user_sim_messages(const std::string& question, const std::string& clarification,
                              const Intent& intent);

/// Decoding parameters used for single-sample model completions and for
/// belief states under the config.
SamplingParams completion_params(const RunConfig& config);
SamplingParams belief_params(const RunConfig& config);

/// With a human callback the user turns are attributed to the human.
RunRecord run_question(const QuestionRecord& record, const Intent& intent, const RunConfig& config,
                       const Gateways& gateways, const HumanReply& human = {});

// ---------------------------------------------------------------------------

struct RunManifest {
    nlohmann::json config;
    std::string prompt_catalog_version;
    std::string prompt_catalog_digest;
    std::string dataset_digest;
    std::uint64_t seed{0};
    std::size_t n_questions{0};
    std::size_t n_failed{0};
    std::map<std::string, std::size_t> failure_counts;
    double wall_time_s{0.0};
    std::uint64_t backend_calls{0};
    nlohmann::json backend_metadata = nlohmann::json::object();

    /// sha256 over the inputs that determine run content (config, prompt
    /// catalog, dataset, seed, schema); independent of timing and counters.
    std::string digest() const;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const nlohmann::json& j);

struct BatchResult {
    std::vector<RunRecord> runs;  // sorted by question_id
    RunManifest manifest;
};

/// Called once per finished record, serialized across workers.
using RecordSink = std::function<void(const RunRecord&)>;

/// Runs every record with at most config.concurrency questions in flight.
/// Records whose question_id is in `skip` are not run.
BatchResult run_batch(std::span<const QuestionRecord> records, const RunConfig& config,
                      const Gateways& gateways, const std::set<std::string>& skip = {},
                      const RecordSink& on_record = {});

/// Manifest fields fixed before running (no counters or timing).
RunManifest make_manifest(std::span<const QuestionRecord> records, const RunConfig& config);

}  // namespace bag
