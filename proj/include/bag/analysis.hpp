#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bag/belief.hpp"
#include "bag/dataset.hpp"
#include "bag/dialogue.hpp"
#include "bag/judging.hpp"

namespace bag {

// ---------------------------------------------------------------------------
// Semantic clustering of belief states.

enum class ClusterMethod { Llm, ExactMatch };

std::string_view to_string(ClusterMethod m);
ClusterMethod parse_cluster_method(std::string_view s);

struct ClusterAssignment {
    std::string belief_digest;
    std::vector<std::string> labels;  // one per sample, relabelled A, B, ... by first appearance
    std::map<std::string, int> cluster_sizes;
    ClusterMethod method{ClusterMethod::ExactMatch};

    int k() const { return static_cast<int>(labels.size()); }
    int n_clusters() const { return static_cast<int>(cluster_sizes.size()); }
};

/// Canonicalizes labels (first appearance order) and fills cluster_sizes.
ClusterAssignment make_assignment(std::string belief_digest, const std::vector<std::string>& labels,
                                  ClusterMethod method);

/// "<index>: <letter>" lines, 1-based. Throws IncompleteAssignment when an
/// index in 1..k has no label.
std::vector<std::string> parse_cluster_labels(std::string_view raw, int k);

/// exact_match groups samples whose normalized text is equal. llm asks the
/// model (with one corrective reprompt) and throws IncompleteAssignment.
ClusterAssignment cluster_belief(const BeliefState& belief, const std::string& question,
                                 ClusterMethod method, const ModelSpec* model = nullptr,
                                 const Gateway* gateway = nullptr);

struct EntropyStat {
    std::string belief_digest;
    double entropy_nats{0.0};
    int n_clusters{1};
};

/// -sum p ln p over cluster proportions.
EntropyStat semantic_entropy(const ClusterAssignment& c);
double entropy_from_sizes(std::span<const int> sizes);

// ---------------------------------------------------------------------------
// Accuracy decomposition of a strategy-augmented run against a baseline.

enum class Subset { Direct, Clarify, Abstain };

std::string_view to_string(Subset s);

struct DecompositionCounts {
    std::size_t n_d{0}, n_c{0}, n_a{0};
    std::size_t b_d{0}, b_c{0}, b_a{0};  // baseline correct per subset
    std::size_t g_d{0}, g_c{0};          // augmented correct per subset
};

struct DecompositionReport {
    DecompositionCounts counts;
    std::size_t n_excluded{0};  // failed runs or verdicts on either side
    bool undefined{false};      // no direct or clarified questions (M = 0)
    double acc_base{0.0};
    double acc_bag{0.0};
    double delta_total{0.0};
    double contrib_abstain{0.0};
    double contrib_direct{0.0};
    double contrib_clarify{0.0};
};

DecompositionReport decompose_counts(const DecompositionCounts& counts);

/// Both sides must cover the same questions with the same intents and be
/// judged one_intent. Throws MismatchedQuestionSets.
DecompositionReport decompose(std::span<const RunRecord> base_runs, std::span<const Verdict> base_verdicts,
                              std::span<const RunRecord> bag_runs, std::span<const Verdict> bag_verdicts);

nlohmann::json to_json(const DecompositionReport& r);

struct SubsetProfile {
    std::size_t n{0};
    std::size_t n_base_judged{0};
    std::size_t n_base_correct{0};
    std::size_t n_ambiguous{0};
    std::optional<double> acc;  // baseline accuracy on the subset
    std::optional<double> amb;  // ambiguous fraction of the subset
};

struct RoutingProfile {
    std::map<Subset, SubsetProfile> subsets;
    std::size_t n_total{0};
    std::size_t n_routing_failed{0};
};

/// Subsets come from the turn-2 strategy of `runs`.
RoutingProfile routing_profile(std::span<const RunRecord> base_runs, std::span<const Verdict> base_verdicts,
                               std::span<const RunRecord> runs, std::span<const QuestionRecord> records);

nlohmann::json to_json(const RoutingProfile& p);

// ---------------------------------------------------------------------------

struct StrategyFrequencies {
    std::map<Strategy, std::size_t> counts;  // all three strategies present
    std::size_t n_parsed{0};
    std::size_t n_failed{0};

    double fraction(Strategy s) const;
};

StrategyFrequencies strategy_frequencies(std::span<const RunRecord> runs);
nlohmann::json to_json(const StrategyFrequencies& f);

struct QuestionEntropy {
    std::string question_id;
    EntropyStat stat;
};

struct FaithfulnessBin {
    int n_clusters{1};
    std::size_t n{0};
    std::map<Strategy, double> frequency;
};

struct FaithfulnessPoint {
    std::string question_id;
    double entropy_nats{0.0};
    int n_clusters{1};
    Strategy strategy{Strategy::DirectAnswer};
};

struct FaithfulnessCurve {
    std::vector<FaithfulnessBin> bins;  // non-empty bins only, ascending
    std::vector<FaithfulnessPoint> points;
    /// Spearman correlation of n_clusters with the clarify-or-abstain indicator.
    std::optional<double> spearman;
};

FaithfulnessCurve faithfulness_curve(std::span<const QuestionEntropy> entropies,
                                     std::span<const RunRecord> runs);
nlohmann::json to_json(const FaithfulnessCurve& c);

/// Spearman rank correlation with average ranks for ties; absent when either
/// side is constant or fewer than two points are given.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct ReductionPair {
    std::string question_id;
    double before{0.0};
    double after{0.0};
};

/// (before - after) / before; absent when before == 0.
std::optional<double> entropy_reduction(const EntropyStat& before, const EntropyStat& after);

struct ReductionReport {
    std::size_t n_pairs{0};
    std::size_t n_excluded{0};  // before == 0
    std::optional<double> mean_reduction;  // mean of per-question ratios
    std::optional<double> ratio_of_means;
    std::vector<std::pair<std::string, double>> per_question;
};

ReductionReport aggregate_reduction(std::span<const ReductionPair> pairs);
nlohmann::json to_json(const ReductionReport& r);

/// "54%", "1.7%": whole percent when exact to one decimal, else one decimal.
std::string format_percent(double fraction);

// ---------------------------------------------------------------------------
// Flat tables.

std::string decomposition_csv(const DecompositionReport& r);
std::string routing_csv(const RoutingProfile& p);
std::string frequencies_csv(const StrategyFrequencies& f);
std::string faithfulness_csv(const FaithfulnessCurve& c);
std::string entropy_csv(std::span<const QuestionEntropy> entropies);
std::string reduction_csv(const ReductionReport& r);

}  // namespace bag
