#include "bag/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>

#include <fmt/format.h>

#include "bag/errors.hpp"
#include "bag/prompts.hpp"
#include "bag/text.hpp"

using nlohmann::json;

namespace bag {

std::string_view to_string(ClusterMethod m) { return m == ClusterMethod::Llm ? "llm" : "exact_match"; }

ClusterMethod parse_cluster_method(std::string_view s) {
    if (s == "llm") return ClusterMethod::Llm;
    if (s == "exact_match" || s == "exact") return ClusterMethod::ExactMatch;
    throw std::invalid_argument(fmt::format("unknown cluster method '{}'", s));
}

namespace {

// A..Z, then AA, AB, ...
std::string letter_label(std::size_t i) {
    std::string out;
    ++i;
    while (i > 0) {
        --i;
        out.insert(out.begin(), static_cast<char>('A' + i % 26));
        i /= 26;
    }
    return out;
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string csv_opt(const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : ""; }

}  // namespace

ClusterAssignment make_assignment(std::string belief_digest, const std::vector<std::string>& labels,
                                  ClusterMethod method) {
    ClusterAssignment a;
    a.belief_digest = std::move(belief_digest);
    a.method = method;
    std::map<std::string, std::string> rename;
    for (const auto& l : labels) {
        auto it = rename.find(l);
        if (it == rename.end()) it = rename.emplace(l, letter_label(rename.size())).first;
        a.labels.push_back(it->second);
        ++a.cluster_sizes[it->second];
    }
    return a;
}

std::vector<std::string> parse_cluster_labels(std::string_view raw, int k) {
    static const std::regex line_re(R"(^\s*(?:[-*]\s*)?(?:\*\*)?\s*(?:candidate\s*)?(\d+)\s*(?:\*\*)?\s*(?:->|→|[:.)=-])+\s*(?:\*\*)?\s*(?:group\s*)?\[?([A-Za-z]{1,2})\]?\b)",
                                    std::regex::icase);
    std::vector<std::optional<std::string>> labels(static_cast<std::size_t>(k));
    for (const auto& line : text::split_lines(raw)) {
        std::smatch m;
        if (!std::regex_search(line, m, line_re)) continue;
        const long idx = std::stol(m[1].str());
        if (idx < 1 || idx > k) continue;
        auto& slot = labels[static_cast<std::size_t>(idx - 1)];
        if (!slot) slot = text::to_upper(m[2].str());
    }
    std::vector<std::string> out;
    std::vector<int> missing;
    for (int i = 0; i < k; ++i) {
        if (labels[static_cast<std::size_t>(i)]) out.push_back(*labels[static_cast<std::size_t>(i)]);
        else missing.push_back(i + 1);
    }
    if (!missing.empty())
        throw IncompleteAssignment(fmt::format("no group for candidate(s) {}", fmt::join(missing, ", ")));
    return out;
}

ClusterAssignment cluster_belief(const BeliefState& belief, const std::string& question,
                                 ClusterMethod method, const ModelSpec* model, const Gateway* gateway) {
    const std::string digest = belief_digest(belief);
    if (method == ClusterMethod::ExactMatch) {
        std::vector<std::string> keys;
        for (const auto& s : belief.samples) keys.push_back(text::normalize_answer(s));
        return make_assignment(digest, keys, method);
    }
    if (!model || !gateway) throw std::invalid_argument("llm clustering needs a model and a gateway");

    const int k = static_cast<int>(belief.samples.size());
    MessageList messages = render(PromptKind::ClusterAssign,
                                  {{"K", std::to_string(k)},
                                   {"question", question},
                                   {"belief_state_text", format_belief_state(belief.samples)}});
    SamplingParams params = model->decode;
    params.n_samples = 1;
    const std::string first = gateway->complete({model->id, messages, params, Purpose::Cluster}).texts.front();
    try {
        return make_assignment(digest, parse_cluster_labels(first, k), method);
    } catch (const IncompleteAssignment& e) {
        messages.push_back(Message{Role::Assistant, first});
        messages.push_back(Message{
            Role::User,
            fmt::format("Your output is incomplete ({}). Output exactly one line for each of the {} "
                        "candidates, formatted as \"<candidate number>: <group letter>\", and nothing else.",
                        e.what(), k)});
    }
    const std::string second = gateway->complete({model->id, messages, params, Purpose::Cluster}).texts.front();
    return make_assignment(digest, parse_cluster_labels(second, k), method);
}

double entropy_from_sizes(std::span<const int> sizes) {
    const double k = std::accumulate(sizes.begin(), sizes.end(), 0.0);
    if (k <= 0) throw std::invalid_argument("empty cluster assignment");
    double h = 0.0;
    for (int n : sizes) {
        if (n < 0) throw std::invalid_argument("negative cluster size");
        if (n == 0) continue;
        const double p = n / k;
        h += p * std::log(k / n);
    }
    return h;
}

EntropyStat semantic_entropy(const ClusterAssignment& c) {
    std::vector<int> sizes;
    for (const auto& [label, n] : c.cluster_sizes) sizes.push_back(n);
    return EntropyStat{c.belief_digest, entropy_from_sizes(sizes), c.n_clusters()};
}

// ---------------------------------------------------------------------------

std::string_view to_string(Subset s) {
    switch (s) {
        case Subset::Direct: return "direct";
        case Subset::Clarify: return "clarify";
        case Subset::Abstain: return "abstain";
    }
    return "?";
}

DecompositionReport decompose_counts(const DecompositionCounts& c) {
    DecompositionReport r;
    r.counts = c;
    const double n = static_cast<double>(c.n_d + c.n_c + c.n_a);
    const double m = static_cast<double>(c.n_d + c.n_c);
    if (n > 0) r.acc_base = static_cast<double>(c.b_d + c.b_c + c.b_a) / n;
    if (m == 0) {
        r.undefined = true;
        return r;
    }
    r.acc_bag = static_cast<double>(c.g_d + c.g_c) / m;
    r.delta_total = r.acc_bag - r.acc_base;
    r.contrib_abstain = static_cast<double>(c.b_d + c.b_c) / m - r.acc_base;
    r.contrib_direct = (static_cast<double>(c.g_d) - static_cast<double>(c.b_d)) / m;
    r.contrib_clarify = (static_cast<double>(c.g_c) - static_cast<double>(c.b_c)) / m;
    return r;
}

namespace {

std::map<std::string_view, const RunRecord*> index_runs(std::span<const RunRecord> runs) {
    std::map<std::string_view, const RunRecord*> out;
    for (const auto& r : runs)
        if (!out.emplace(r.question_id, &r).second)
            throw std::invalid_argument(fmt::format("duplicate run for '{}'", r.question_id));
    return out;
}

std::map<std::string_view, const Verdict*> index_verdicts(std::span<const Verdict> verdicts,
                                                          std::optional<JudgeMode> required) {
    std::map<std::string_view, const Verdict*> out;
    for (const auto& v : verdicts) {
        if (required && v.mode != *required)
            throw std::invalid_argument(fmt::format("expected {} verdicts", to_string(*required)));
        out.emplace(v.question_id, &v);
    }
    return out;
}

void check_same_questions(const std::map<std::string_view, const RunRecord*>& base,
                          const std::map<std::string_view, const RunRecord*>& other) {
    std::vector<std::string> diff;
    for (const auto& [qid, run] : base) {
        const auto it = other.find(qid);
        if (it == other.end()) diff.push_back(fmt::format("{} (missing)", qid));
        else if (it->second->intent_id != run->intent_id) diff.push_back(fmt::format("{} (intent)", qid));
    }
    for (const auto& [qid, run] : other)
        if (!base.contains(qid)) diff.push_back(fmt::format("{} (extra)", qid));
    if (!diff.empty()) {
        if (diff.size() > 5) diff.resize(5);
        throw MismatchedQuestionSets(fmt::format("question sets differ: {}", fmt::join(diff, ", ")));
    }
}

// Correctness of a run under its verdicts: nullopt when no usable verdict
// exists for an answered run.
std::optional<bool> correctness(const RunRecord& run,
                                const std::map<std::string_view, const Verdict*>& verdicts) {
    if (!run.final_answer) return false;
    const auto it = verdicts.find(run.question_id);
    if (it == verdicts.end() || it->second->judge_failed) return std::nullopt;
    return it->second->correct;
}

}  // namespace

DecompositionReport decompose(std::span<const RunRecord> base_runs, std::span<const Verdict> base_verdicts,
                              std::span<const RunRecord> bag_runs, std::span<const Verdict> bag_verdicts) {
    const auto base = index_runs(base_runs);
    const auto bag = index_runs(bag_runs);
    check_same_questions(base, bag);
    const auto base_v = index_verdicts(base_verdicts, JudgeMode::OneIntent);
    const auto bag_v = index_verdicts(bag_verdicts, JudgeMode::OneIntent);

    DecompositionCounts c;
    std::size_t excluded = 0;
    for (const auto& [qid, bag_run] : bag) {
        const RunRecord& base_run = *base.at(qid);
        if (bag_run->failed() || base_run.failed()) {
            ++excluded;
            continue;
        }
        const auto b = correctness(base_run, base_v);
        const auto g = correctness(*bag_run, bag_v);
        if (!b || !g) {
            ++excluded;
            continue;
        }
        const Strategy routed = *bag_run->routed_strategy();
        if (routed == Strategy::Abstain || bag_run->final_strategy == Strategy::Abstain) {
            ++c.n_a;
            c.b_a += *b;
        } else if (routed == Strategy::DirectAnswer) {
            ++c.n_d;
            c.b_d += *b;
            c.g_d += *g;
        } else {
            ++c.n_c;
            c.b_c += *b;
            c.g_c += *g;
        }
    }
    auto r = decompose_counts(c);
    r.n_excluded = excluded;
    return r;
}

json to_json(const DecompositionReport& r) {
    const auto& c = r.counts;
    json j{{"n_direct", c.n_d},     {"n_clarify", c.n_c},       {"n_abstain", c.n_a},
           {"base_correct_direct", c.b_d}, {"base_correct_clarify", c.b_c},
           {"base_correct_abstain", c.b_a}, {"bag_correct_direct", c.g_d},
           {"bag_correct_clarify", c.g_c}, {"n_excluded", r.n_excluded},
           {"undefined", r.undefined}, {"acc_base", r.acc_base}};
    if (r.undefined) {
        for (const char* key : {"acc_bag", "delta_total", "contrib_abstain", "contrib_direct", "contrib_clarify"})
            j[key] = nullptr;
    } else {
        j["acc_bag"] = r.acc_bag;
        j["delta_total"] = r.delta_total;
        j["contrib_abstain"] = r.contrib_abstain;
        j["contrib_direct"] = r.contrib_direct;
        j["contrib_clarify"] = r.contrib_clarify;
    }
    return j;
}

RoutingProfile routing_profile(std::span<const RunRecord> base_runs, std::span<const Verdict> base_verdicts,
                               std::span<const RunRecord> runs, std::span<const QuestionRecord> records) {
    const auto base = index_runs(base_runs);
    const auto routed = index_runs(runs);
    check_same_questions(base, routed);
    const auto base_v = index_verdicts(base_verdicts, std::nullopt);
    std::map<std::string_view, const QuestionRecord*> by_id;
    for (const auto& r : records) by_id[r.question_id] = &r;

    RoutingProfile p;
    for (auto s : {Subset::Direct, Subset::Clarify, Subset::Abstain}) p.subsets[s] = {};
    p.n_total = runs.size();
    for (const auto& [qid, run] : routed) {
        const auto strategy = run->routed_strategy();
        if (!strategy) {
            ++p.n_routing_failed;
            continue;
        }
        const Subset s = *strategy == Strategy::DirectAnswer    ? Subset::Direct
                         : *strategy == Strategy::Abstain       ? Subset::Abstain
                                                                : Subset::Clarify;
        auto& sp = p.subsets[s];
        ++sp.n;
        const auto rec = by_id.find(qid);
        if (rec == by_id.end())
            throw std::invalid_argument(fmt::format("question '{}' is not in the dataset", qid));
        sp.n_ambiguous += rec->second->ambiguous;
        const RunRecord& base_run = *base.at(qid);
        if (base_run.failed()) continue;
        if (const auto b = correctness(base_run, base_v)) {
            ++sp.n_base_judged;
            sp.n_base_correct += *b;
        }
    }
    for (auto& [s, sp] : p.subsets) {
        sp.acc = ratio(sp.n_base_correct, sp.n_base_judged);
        sp.amb = ratio(sp.n_ambiguous, sp.n);
    }
    return p;
}

json to_json(const RoutingProfile& p) {
    json subsets = json::object();
    for (const auto& [s, sp] : p.subsets) {
        subsets[std::string(to_string(s))] =
            json{{"n", sp.n},
                 {"n_base_judged", sp.n_base_judged},
                 {"n_base_correct", sp.n_base_correct},
                 {"n_ambiguous", sp.n_ambiguous},
                 {"acc", opt(sp.acc)},
                 {"amb", opt(sp.amb)},
                 {"acc_pct", format_pct(sp.acc)},
                 {"amb_pct", format_pct(sp.amb)}};
    }
    return json{{"n_total", p.n_total}, {"n_routing_failed", p.n_routing_failed}, {"subsets", subsets}};
}

// ---------------------------------------------------------------------------

double StrategyFrequencies::fraction(Strategy s) const {
    if (n_parsed == 0) return 0.0;
    const auto it = counts.find(s);
    return it == counts.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(n_parsed);
}

StrategyFrequencies strategy_frequencies(std::span<const RunRecord> runs) {
    StrategyFrequencies f;
    for (auto s : {Strategy::DirectAnswer, Strategy::ClarificationQuestion, Strategy::Abstain}) f.counts[s] = 0;
    for (const auto& run : runs) {
        if (const auto s = run.routed_strategy()) {
            ++f.counts[*s];
            ++f.n_parsed;
        } else {
            ++f.n_failed;
        }
    }
    return f;
}

json to_json(const StrategyFrequencies& f) {
    json counts = json::object(), fractions = json::object();
    for (const auto& [s, n] : f.counts) {
        counts[std::string(to_string(s))] = n;
        fractions[std::string(to_string(s))] = f.fraction(s);
    }
    return json{{"n_parsed", f.n_parsed}, {"n_failed", f.n_failed}, {"counts", counts}, {"fractions", fractions}};
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("spearman: size mismatch");
    const std::size_t n = x.size();
    if (n < 2) return std::nullopt;
    auto ranks = [n](std::span<const double> v) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0 || syy == 0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

FaithfulnessCurve faithfulness_curve(std::span<const QuestionEntropy> entropies,
                                     std::span<const RunRecord> runs) {
    const auto by_id = index_runs(runs);
    FaithfulnessCurve c;
    std::map<int, std::map<Strategy, std::size_t>> bins;
    std::vector<double> xs, ys;
    for (const auto& qe : entropies) {
        const auto it = by_id.find(qe.question_id);
        if (it == by_id.end()) continue;
        const auto s = it->second->routed_strategy();
        if (!s) continue;
        c.points.push_back({qe.question_id, qe.stat.entropy_nats, qe.stat.n_clusters, *s});
        ++bins[qe.stat.n_clusters][*s];
        xs.push_back(qe.stat.n_clusters);
        ys.push_back(*s == Strategy::DirectAnswer ? 0.0 : 1.0);
    }
    std::sort(c.points.begin(), c.points.end(),
              [](const auto& a, const auto& b) { return a.question_id < b.question_id; });
    for (const auto& [k, counts] : bins) {
        FaithfulnessBin bin;
        bin.n_clusters = k;
        for (const auto& [s, n] : counts) bin.n += n;
        for (auto s : {Strategy::DirectAnswer, Strategy::ClarificationQuestion, Strategy::Abstain}) {
            const auto it = counts.find(s);
            bin.frequency[s] = it == counts.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(bin.n);
        }
        c.bins.push_back(std::move(bin));
    }
    c.spearman = spearman(xs, ys);
    return c;
}

json to_json(const FaithfulnessCurve& c) {
    json bins = json::array();
    for (const auto& b : c.bins) {
        json freq = json::object();
        for (const auto& [s, f] : b.frequency) freq[std::string(to_string(s))] = f;
        bins.push_back(json{{"n_clusters", b.n_clusters}, {"n", b.n}, {"frequency", freq}});
    }
    json points = json::array();
    for (const auto& p : c.points)
        points.push_back(json{{"question_id", p.question_id},
                              {"entropy_nats", p.entropy_nats},
                              {"n_clusters", p.n_clusters},
                              {"strategy", std::string(to_string(p.strategy))}});
    return json{{"bins", bins}, {"points", points}, {"spearman", opt(c.spearman)}};
}

std::optional<double> entropy_reduction(const EntropyStat& before, const EntropyStat& after) {
    if (before.entropy_nats <= 0.0) return std::nullopt;
    return (before.entropy_nats - after.entropy_nats) / before.entropy_nats;
}

ReductionReport aggregate_reduction(std::span<const ReductionPair> pairs) {
    ReductionReport r;
    r.n_pairs = pairs.size();
    double sum_ratio = 0, sum_before = 0, sum_after = 0;
    for (const auto& p : pairs) {
        sum_before += p.before;
        sum_after += p.after;
        const auto red = entropy_reduction(EntropyStat{"", p.before, 1}, EntropyStat{"", p.after, 1});
        if (!red) {
            ++r.n_excluded;
            continue;
        }
        sum_ratio += *red;
        r.per_question.emplace_back(p.question_id, *red);
    }
    if (!r.per_question.empty()) r.mean_reduction = sum_ratio / static_cast<double>(r.per_question.size());
    if (sum_before > 0) r.ratio_of_means = (sum_before - sum_after) / sum_before;
    return r;
}

std::string format_percent(double fraction) {
    const double pct = std::round(fraction * 1000.0) / 10.0;
    if (pct == std::round(pct)) return fmt::format("{:.0f}%", pct);
    return fmt::format("{:.1f}%", pct);
}

json to_json(const ReductionReport& r) {
    json per = json::array();
    for (const auto& [qid, v] : r.per_question) per.push_back(json{{"question_id", qid}, {"reduction", v}});
    return json{{"n_pairs", r.n_pairs},
                {"n_excluded_zero_before", r.n_excluded},
                {"mean_reduction", opt(r.mean_reduction)},
                {"mean_reduction_pct", r.mean_reduction ? format_percent(*r.mean_reduction) : "undefined"},
                {"ratio_of_means", opt(r.ratio_of_means)},
                {"ratio_of_means_pct", r.ratio_of_means ? format_percent(*r.ratio_of_means) : "undefined"},
                {"per_question", per}};
}

// ---------------------------------------------------------------------------

std::string decomposition_csv(const DecompositionReport& r) {
    const auto& c = r.counts;
    auto val = [&](double v) { return r.undefined ? std::string() : fmt::format("{:.6f}", v); };
    std::string out = "subset,n,base_correct,bag_correct,contribution\n";
    out += fmt::format("direct,{},{},{},{}\n", c.n_d, c.b_d, c.g_d, val(r.contrib_direct));
    out += fmt::format("clarify,{},{},{},{}\n", c.n_c, c.b_c, c.g_c, val(r.contrib_clarify));
    out += fmt::format("abstain,{},{},,{}\n", c.n_a, c.b_a, val(r.contrib_abstain));
    out += fmt::format("total,{},{},{},{}\n", c.n_d + c.n_c + c.n_a, c.b_d + c.b_c + c.b_a, c.g_d + c.g_c,
                       val(r.delta_total));
    return out;
}

std::string routing_csv(const RoutingProfile& p) {
    std::string out = "subset,n,acc,amb\n";
    for (const auto& [s, sp] : p.subsets)
        out += fmt::format("{},{},{},{}\n", to_string(s), sp.n, csv_opt(sp.acc), csv_opt(sp.amb));
    out += fmt::format("routing_failed,{},,\n", p.n_routing_failed);
    return out;
}

std::string frequencies_csv(const StrategyFrequencies& f) {
    std::string out = "strategy,count,fraction\n";
    for (const auto& [s, n] : f.counts) out += fmt::format("{},{},{:.6f}\n", to_string(s), n, f.fraction(s));
    out += fmt::format("routing_failed,{},\n", f.n_failed);
    return out;
}

std::string faithfulness_csv(const FaithfulnessCurve& c) {
    std::string out = "n_clusters,n,direct,clarify,abstain\n";
    for (const auto& b : c.bins)
        out += fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", b.n_clusters, b.n,
                           b.frequency.at(Strategy::DirectAnswer),
                           b.frequency.at(Strategy::ClarificationQuestion), b.frequency.at(Strategy::Abstain));
    return out;
}

std::string entropy_csv(std::span<const QuestionEntropy> entropies) {
    std::string out = "question_id,n_clusters,entropy_nats\n";
    for (const auto& e : entropies)
        out += fmt::format("{},{},{:.6f}\n", e.question_id, e.stat.n_clusters, e.stat.entropy_nats);
    return out;
}

std::string reduction_csv(const ReductionReport& r) {
    std::string out = "question_id,reduction\n";
    for (const auto& [qid, v] : r.per_question) out += fmt::format("{},{:.6f}\n", qid, v);
    return out;
}

}  // namespace bag
