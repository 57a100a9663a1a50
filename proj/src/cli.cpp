#include "bag/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/spdlog.h>

#include "bag/analysis.hpp"
#include "bag/config.hpp"
#include "bag/errors.hpp"
#include "bag/judging.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bag::cli {

namespace {

// ---------------------------------------------------------------------------
// File helpers.

void write_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error(fmt::format("cannot write '{}'", tmp.string()));
        f << content;
        if (!f.flush()) throw std::runtime_error(fmt::format("write failed for '{}'", tmp.string()));
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError(fmt::format("cannot read '{}'", path.string()));
    std::stringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

// One JSON object per line, each stamped with the manifest digest.
template <typename T>
std::string stamped_line(const T& value, const std::string& digest) {
    json j = value;
    j["manifest_digest"] = digest;
    return j.dump() + "\n";
}

std::vector<json> read_jsonl_lines(const fs::path& path, bool tolerate_truncated_tail) {
    std::vector<json> out;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError(fmt::format("cannot read '{}'", path.string()));
    std::vector<std::string> lines;
    for (std::string line; std::getline(f, line);)
        if (!line.empty()) lines.push_back(line);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            out.push_back(json::parse(lines[i]));
        } catch (const json::parse_error& e) {
            if (tolerate_truncated_tail && i + 1 == lines.size()) {
                spdlog::warn("{}: ignoring truncated last line", path.string());
                break;
            }
            throw ConfigError(fmt::format("{}:{}: {}", path.string(), i + 1, e.what()));
        }
    }
    return out;
}

void check_digest(const json& j, const std::string& expected, const fs::path& file) {
    const auto it = j.find("manifest_digest");
    if (it == j.end() || !it->is_string() || it->get<std::string>() != expected)
        throw ConfigError(fmt::format("{}: record does not carry manifest digest {}", file.string(), expected));
}

// ---------------------------------------------------------------------------
// Shared option plumbing.

struct BackendOptions {
    std::string mock;
    std::string cache_dir;
    bool no_cache{false};
    std::string base_url;
};

void add_backend_options(CLI::App& app, BackendOptions& o) {
    app.add_option("--mock", o.mock, "Scripted mock backend (JSON script); no network")->check(CLI::ExistingFile);
    app.add_option("--cache-dir", o.cache_dir, "Response cache directory");
    app.add_flag("--no-cache", o.no_cache, "Disable the response cache");
    app.add_option("--base-url", o.base_url, "OpenAI-compatible endpoint (default: BAG_BASE_URL)");
}

std::shared_ptr<const Gateway> make_gateway(const BackendOptions& o, const std::string& cache_dir_default) {
    BackendHandle backend;
    if (!o.mock.empty()) {
        backend = mock_register(load_script(o.mock));
    } else {
        auto cfg = http_config_from_env();
        if (!o.base_url.empty()) cfg.base_url = o.base_url;
        if (cfg.base_url.empty())
            throw ConfigError("no backend: pass --mock SCRIPT or set BAG_BASE_URL / --base-url");
        backend = std::make_shared<HttpBackend>(cfg);
    }
    std::shared_ptr<ResponseCache> cache;
    const std::string dir = o.cache_dir.empty() ? cache_dir_default : o.cache_dir;
    if (!o.no_cache && !dir.empty()) cache = std::make_shared<ResponseCache>(dir);
    return std::make_shared<Gateway>(backend, cache);
}

// Run options are collected as config keys so that a config file and
// command-line flags share one code path; flags win.
struct RunOptions {
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    bool plus{false};
    bool post_belief{false};
    CLI::Option* plus_opt{nullptr};
    CLI::Option* post_belief_opt{nullptr};
};

void add_run_options(CLI::App& app, RunOptions& o) {
    app.add_option("--config", o.config_file, "key = value config file")->check(CLI::ExistingFile);
    auto opt = [&](const std::string& flag, const std::string& key, const std::string& help) {
        o.options[key] = app.add_option("--" + flag, o.values[key], help);
    };
    opt("dataset", "dataset", "AmbigQA json or normalized jsonl");
    opt("model", "model", "Model id");
    opt("setting", "setting", "standard|disambig|sag|bag1|bag2|bag3");
    opt("k", "k", "Belief-state size");
    opt("seed", "seed", "Intent-selection seed");
    opt("brevity", "brevity", "free|concise|sentence");
    opt("concurrency", "concurrency", "Questions in flight");
    opt("judge-model", "judge_model", "Judge model id");
    opt("sim-model", "sim_model", "User-simulator model id");
    opt("out", "out_dir", "Output directory");
    opt("temperature", "model.temperature", "Model sampling temperature");
    opt("top-p", "model.top_p", "Model top-p");
    opt("top-k", "model.top_k", "Model top-k (0 = off)");
    opt("min-p", "model.min_p", "Model min-p (0 = off)");
    opt("max-tokens", "model.max_tokens", "Model max tokens");
    opt("consensus-threshold", "consensus_threshold", "Agreement percentage in the final BAG+ prompt");
    o.plus_opt = app.add_flag("--plus", o.plus, "Re-apply the augmentation after clarification");
    o.post_belief_opt = app.add_flag("--post-clarification-belief", o.post_belief,
                                     "Sample a belief state after clarification in non-plus runs");
}

RunConfig resolve_run_config(const RunOptions& o, const BackendOptions& b) {
    ConfigMap values;
    if (!o.config_file.empty()) values = load_config(o.config_file);
    for (const auto& [key, option] : o.options)
        if (option->count() > 0) values[key] = o.values.at(key);
    if (o.plus_opt->count() > 0) values["plus"] = o.plus ? "true" : "false";
    if (o.post_belief_opt->count() > 0) values["post_clarification_belief"] = o.post_belief ? "true" : "false";
    if (!b.cache_dir.empty()) values["cache_dir"] = b.cache_dir;
    if (!b.base_url.empty()) values["base_url"] = b.base_url;
    RunConfig cfg = apply_config(values);
    validate(cfg);
    return cfg;
}

std::vector<QuestionRecord> load_records(const std::string& path) {
    if (path.empty()) throw ConfigError("no dataset given (--dataset or 'dataset' in the config file)");
    try {
        return load_dataset(path);
    } catch (const DatasetError&) {
        throw;
    } catch (const std::exception& e) {
        throw DatasetError(fmt::format("{}: {}", path, e.what()));
    }
}

// ---------------------------------------------------------------------------

int cmd_run(const RunOptions& ro, const BackendOptions& bo, bool overwrite, std::ostream& out) {
    RunConfig cfg = resolve_run_config(ro, bo);
    const auto records = load_records(cfg.dataset_path);
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);

    RunManifest manifest = make_manifest(records, cfg);
    const std::string digest = manifest.digest();
    const fs::path runs_path = dir / kRunsFile;
    const fs::path manifest_path = dir / kManifestFile;

    std::vector<RunRecord> existing;
    if (fs::exists(manifest_path)) {
        const auto old = run_manifest_from_json(json::parse(read_file(manifest_path)));
        if (old.digest() != digest && !overwrite)
            throw ConfigError(fmt::format("{} holds a run with a different manifest; pass --overwrite to replace it",
                                          dir.string()));
        if (old.digest() == digest && fs::exists(runs_path)) {
            for (const auto& j : read_jsonl_lines(runs_path, true)) {
                check_digest(j, digest, runs_path);
                existing.push_back(j.get<RunRecord>());
            }
        }
    }
    std::set<std::string> skip;
    for (const auto& r : existing) skip.insert(r.question_id);

    // Rewrite the surviving records so a truncated tail is dropped, then append as we go.
    {
        std::string body;
        for (const auto& r : existing) body += stamped_line(r, digest);
        write_atomic(runs_path, body);
    }
    write_atomic(manifest_path, pretty(to_json(manifest)));

    const auto gateway = make_gateway(bo, cfg.cache_dir);
    std::ofstream sink(runs_path, std::ios::binary | std::ios::app);
    auto batch = run_batch(records, cfg, Gateways::single(gateway), skip, [&](const RunRecord& r) {
        sink << stamped_line(r, digest);
        sink.flush();
    });
    sink.close();

    const std::size_t n_new = batch.runs.size();
    std::vector<RunRecord> all = std::move(existing);
    for (auto& r : batch.runs) all.push_back(std::move(r));
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.question_id < b.question_id; });
    std::string body;
    for (const auto& r : all) body += stamped_line(r, digest);
    write_atomic(runs_path, body);

    RunManifest final_manifest = batch.manifest;
    final_manifest.n_questions = all.size();
    final_manifest.n_failed = 0;
    final_manifest.failure_counts.clear();
    for (const auto& r : all) {
        if (r.failed()) ++final_manifest.n_failed;
        for (const auto& f : r.failures) ++final_manifest.failure_counts[f];
    }
    write_atomic(manifest_path, pretty(to_json(final_manifest)));

    fmt::print(out, "{}: {} runs ({} new, {} resumed, {} failed), {} backend calls\n", dir.string(), all.size(),
               n_new, all.size() - n_new, final_manifest.n_failed, final_manifest.backend_calls);
    return kOk;
}

std::vector<QuestionRecord> dataset_for(const RunDir& rd, const std::string& override_path) {
    const std::string path =
        override_path.empty() ? rd.manifest.config.at("dataset_path").get<std::string>() : override_path;
    auto records = load_records(path);
    if (dataset_digest(records) != rd.manifest.dataset_digest)
        throw DatasetError(fmt::format("dataset '{}' does not match the run's dataset digest", path));
    return records;
}

int cmd_judge(const fs::path& run_dir, const std::string& mode_name, const std::string& dataset,
              const std::string& judge_model, int concurrency, bool classify, const BackendOptions& bo,
              std::ostream& out) {
    const RunDir rd = read_run_dir(run_dir);
    const JudgeMode mode = parse_judge_mode(mode_name);
    const auto records = dataset_for(rd, dataset);
    const RunConfig cfg = run_config_from_json(rd.manifest.config);
    ModelSpec judge = cfg.judge_model;
    if (!judge_model.empty()) judge.id = judge_model;
    const auto gateway = make_gateway(bo, cfg.cache_dir);

    const auto verdicts = judge_all(rd.runs, records, mode, judge, *gateway, concurrency);
    std::string body;
    for (const auto& v : verdicts) body += stamped_line(v, rd.digest);
    write_atomic(run_dir / verdicts_file(mode), body);

    const auto report = accuracy(verdicts, rd.runs);
    fmt::print(out, "accuracy ({}): {} (judged {}, correct {}, abstained {}, failed {}, total {})\n",
               to_string(mode), format_pct(report.accuracy), report.n_judged, report.n_correct, report.n_abstain,
               report.n_failed(), report.n_total);

    if (classify) {
        const auto dist = classify_runs(rd.runs, records, judge, *gateway);
        json j = to_json(dist);
        j["manifest_digest"] = rd.digest;
        write_atomic(run_dir / "classifications.json", pretty(j));
        fmt::print(out, "classified {} generations ({} failed)\n", dist.n_classified, dist.n_failed);
    }
    return kOk;
}

const std::vector<std::string> kSelectors{"accuracy", "decompose", "routing", "frequencies",
                                          "entropy",  "faithfulness", "reduction", "leaks"};

struct AnalyzeOptions {
    std::string run_dir;
    std::vector<std::string> select;
    std::string baseline;
    std::string mode{"one"};
    std::string cluster_method{"exact_match"};
    std::string out_dir;
    std::string dataset;
    std::string cluster_model;
};

std::vector<QuestionEntropy> belief_entropies(const RunDir& rd, const std::vector<QuestionRecord>& records,
                                              bool after, ClusterMethod method, const ModelSpec* model,
                                              const Gateway* gateway) {
    std::map<std::string_view, const QuestionRecord*> by_id;
    for (const auto& r : records) by_id[r.question_id] = &r;
    std::vector<QuestionEntropy> out;
    for (const auto& run : rd.runs) {
        const auto& belief = after ? run.turn4_belief : run.turn2_belief;
        if (!belief) continue;
        const auto& question = by_id.at(run.question_id)->question_text;
        const auto assignment = cluster_belief(*belief, question, method, model, gateway);
        out.push_back({run.question_id, semantic_entropy(assignment)});
    }
    return out;
}

int cmd_analyze(const AnalyzeOptions& o, const BackendOptions& bo, std::ostream& out) {
    for (const auto& s : o.select)
        if (std::find(kSelectors.begin(), kSelectors.end(), s) == kSelectors.end())
            throw ConfigError(fmt::format("unknown analysis '{}'; choose from {}", s, fmt::join(kSelectors, ", ")));
    auto selected = [&](std::string_view s) { return std::find(o.select.begin(), o.select.end(), s) != o.select.end(); };
    for (const char* s : {"decompose", "routing"})
        if (selected(s) && o.baseline.empty())
            throw ConfigError(fmt::format("analysis '{}' requires --baseline RUN_DIR", s));

    const fs::path run_dir = o.run_dir;
    const RunDir rd = read_run_dir(run_dir);
    const auto records = dataset_for(rd, o.dataset);
    const JudgeMode mode = parse_judge_mode(o.mode);
    const ClusterMethod method = parse_cluster_method(o.cluster_method);
    const fs::path out_dir = o.out_dir.empty() ? run_dir / "analysis" : fs::path(o.out_dir);
    fs::create_directories(out_dir);

    std::shared_ptr<const Gateway> gateway;
    ModelSpec cluster_model = run_config_from_json(rd.manifest.config).judge_model;
    if (!o.cluster_model.empty()) cluster_model.id = o.cluster_model;
    auto llm = [&]() -> const Gateway* {
        if (method != ClusterMethod::Llm) return nullptr;
        if (!gateway) gateway = make_gateway(bo, run_config_from_json(rd.manifest.config).cache_dir);
        return gateway.get();
    };

    auto emit = [&](const std::string& name, json j, const std::string& csv) {
        j["manifest_digest"] = rd.digest;
        write_atomic(out_dir / (name + ".json"), pretty(j));
        if (!csv.empty()) write_atomic(out_dir / (name + ".csv"), fmt::format("# manifest_digest={}\n{}", rd.digest, csv));
        fmt::print(out, "wrote {}\n", (out_dir / (name + ".json")).string());
    };

    std::optional<RunDir> base;
    std::vector<Verdict> base_verdicts;
    if (!o.baseline.empty() && (selected("decompose") || selected("routing"))) {
        base = read_run_dir(o.baseline);
        base_verdicts = read_verdicts(fs::path(o.baseline) / verdicts_file(JudgeMode::OneIntent), base->digest);
    }

    if (selected("accuracy")) {
        const auto verdicts = read_verdicts(run_dir / verdicts_file(mode), rd.digest);
        auto j = to_json(accuracy(verdicts, rd.runs));
        j["mode"] = std::string(to_string(mode));
        emit(fmt::format("accuracy_{}", to_string(mode)), j, "");
    }
    if (selected("decompose")) {
        const auto bag_verdicts = read_verdicts(run_dir / verdicts_file(JudgeMode::OneIntent), rd.digest);
        const auto report = decompose(base->runs, base_verdicts, rd.runs, bag_verdicts);
        auto j = to_json(report);
        j["baseline_manifest_digest"] = base->digest;
        emit("decomposition", j, decomposition_csv(report));
    }
    if (selected("routing")) {
        const auto profile = routing_profile(base->runs, base_verdicts, rd.runs, records);
        auto j = to_json(profile);
        j["baseline_manifest_digest"] = base->digest;
        emit("routing", j, routing_csv(profile));
    }
    if (selected("frequencies")) {
        const auto f = strategy_frequencies(rd.runs);
        emit("frequencies", to_json(f), frequencies_csv(f));
    }
    std::optional<std::vector<QuestionEntropy>> before;
    auto entropies_before = [&]() -> const std::vector<QuestionEntropy>& {
        if (!before) before = belief_entropies(rd, records, false, method, &cluster_model, llm());
        return *before;
    };
    if (selected("entropy")) {
        const auto& e = entropies_before();
        json arr = json::array();
        for (const auto& q : e)
            arr.push_back(json{{"question_id", q.question_id},
                               {"belief_digest", q.stat.belief_digest},
                               {"n_clusters", q.stat.n_clusters},
                               {"entropy_nats", q.stat.entropy_nats}});
        emit("entropy", json{{"method", std::string(to_string(method))}, {"entropies", arr}}, entropy_csv(e));
    }
    if (selected("faithfulness")) {
        const auto curve = faithfulness_curve(entropies_before(), rd.runs);
        emit("faithfulness", to_json(curve), faithfulness_csv(curve));
    }
    if (selected("reduction")) {
        const auto after = belief_entropies(rd, records, true, method, &cluster_model, llm());
        std::map<std::string_view, double> before_by_id;
        for (const auto& q : entropies_before()) before_by_id[q.question_id] = q.stat.entropy_nats;
        std::vector<ReductionPair> pairs;
        for (const auto& q : after) {
            const auto it = before_by_id.find(q.question_id);
            if (it != before_by_id.end()) pairs.push_back({q.question_id, it->second, q.stat.entropy_nats});
        }
        const auto report = aggregate_reduction(pairs);
        emit("reduction", to_json(report), reduction_csv(report));
    }
    if (selected("leaks")) {
        const auto summary = summarize_leaks(rd.runs, records);
        auto j = to_json(summary);
        json reports = json::array();
        for (const auto& r : summary.reports)
            reports.push_back(json{{"question_id", r.question_id},
                                   {"user_answer_contains_ref", r.user_answer_contains_ref},
                                   {"cq_contains_ref", r.cq_contains_ref},
                                   {"true_leak", r.true_leak}});
        j["reports"] = reports;
        emit("leaks", j, "");
    }
    return kOk;
}

// ---------------------------------------------------------------------------

int cmd_chat(const RunOptions& ro, const BackendOptions& bo, bool verbose, const std::string& transcript,
             std::istream& in, std::ostream& out) {
    RunConfig cfg = resolve_run_config(ro, bo);
    const auto gateway = make_gateway(bo, cfg.cache_dir);
    const Gateways gw = Gateways::single(gateway);
    const std::string digest = make_manifest({}, cfg).digest();
    const fs::path transcript_path = transcript.empty() ? fs::path(cfg.out_dir) / "chat.jsonl" : fs::path(transcript);
    if (transcript_path.has_parent_path()) fs::create_directories(transcript_path.parent_path());
    std::ofstream log(transcript_path, std::ios::binary | std::ios::app);

    auto show = [&](const Turn& turn) {
        if (verbose && turn.meta) {
            fmt::print(out, "[strategy] {}\n", to_string(turn.meta->strategy));
            if (!turn.meta->reasoning.empty()) fmt::print(out, "[reasoning] {}\n", turn.meta->reasoning);
        }
        fmt::print(out, "{}\n", turn.text.empty() ? "(no answer)" : turn.text);
    };

    bool eof = false;
    for (int n = 1; !eof; ++n) {
        out << "> " << std::flush;
        std::string question;
        if (!std::getline(in, question)) break;
        if (question.empty()) continue;

        const std::string qid = fmt::format("chat-{}", n);
        QuestionRecord record{qid, question, {Intent{qid + "#0", std::nullopt, {}}}, false};
        // run_question asks for the reply synchronously, so the clarification
        // question is printed from inside the callback.
        bool asked = false;
        const HumanReply human = [&](const Turn& clarification) -> std::optional<std::string> {
            asked = true;
            show(clarification);
            out << "> " << std::flush;
            std::string reply;
            if (!std::getline(in, reply)) {
                eof = true;
                return std::nullopt;
            }
            return reply;
        };

        RunRecord run = run_question(record, record.intents.front(), cfg, gw, human);
        if (verbose) {
            for (const auto* belief : {&run.turn2_belief, &run.turn4_belief}) {
                if (!*belief) continue;
                for (std::size_t i = 0; i < (*belief)->samples.size(); ++i)
                    fmt::print(out, "[belief {}] {}\n", i + 1, (*belief)->samples[i]);
            }
        }
        if (run.turns.size() >= 2 && !asked) show(run.turns[1]);
        if (run.turns.size() >= 4) show(run.turns[3]);
        if (run.failed() && !eof) fmt::print(out, "(error: {})\n", fmt::join(run.errors, "; "));
        log << stamped_line(run, digest);
        log.flush();
    }
    out << "\n";
    return kOk;
}

int cmd_cache(const std::string& action, const std::string& dir, std::ostream& out) {
    ResponseCache cache(dir);
    if (action == "stats") {
        const auto s = cache.stats();
        fmt::print(out, "{}: {} entries, {} bytes\n", dir, s.entries, s.bytes);
    } else {
        fmt::print(out, "{}: removed {} entries\n", dir, cache.purge());
    }
    return kOk;
}

int cmd_dataset_stats(const std::string& path, std::ostream& out) {
    const auto records = load_records(path);
    out << pretty(to_json(dataset_stats(records)));
    return kOk;
}

int cmd_dataset_normalize(const std::string& in_path, const std::string& out_path, std::ostream& out) {
    LoadReport report;
    try {
        report = load_ambigqa(fs::path(in_path));
    } catch (const DatasetError&) {
        throw;
    } catch (const std::exception& e) {
        throw DatasetError(fmt::format("{}: {}", in_path, e.what()));
    }
    write_jsonl(out_path, report.records);
    fmt::print(out, "{}: read {}, kept {}, dropped {} clashing and {} without answers\n", out_path,
               report.entries_read, report.records.size(), report.clash_dropped, report.empty_dropped);
    return kOk;
}

}  // namespace

std::string verdicts_file(JudgeMode mode) { return fmt::format("verdicts_{}.jsonl", to_string(mode)); }

RunDir read_run_dir(const fs::path& dir) {
    const fs::path manifest_path = dir / kManifestFile;
    const fs::path runs_path = dir / kRunsFile;
    if (!fs::exists(manifest_path)) throw ConfigError(fmt::format("missing {}", manifest_path.string()));
    if (!fs::exists(runs_path)) throw ConfigError(fmt::format("missing {}", runs_path.string()));
    RunDir rd;
    rd.manifest = run_manifest_from_json(json::parse(read_file(manifest_path)));
    rd.digest = rd.manifest.digest();
    for (const auto& j : read_jsonl_lines(runs_path, false)) {
        check_digest(j, rd.digest, runs_path);
        rd.runs.push_back(j.get<RunRecord>());
    }
    std::sort(rd.runs.begin(), rd.runs.end(), [](const auto& a, const auto& b) { return a.question_id < b.question_id; });
    return rd;
}

std::vector<Verdict> read_verdicts(const fs::path& file, const std::string& expected_digest) {
    if (!fs::exists(file)) throw ConfigError(fmt::format("missing {} (run `bag judge` first)", file.string()));
    std::vector<Verdict> out;
    for (const auto& j : read_jsonl_lines(file, false)) {
        check_digest(j, expected_digest, file);
        out.push_back(j.get<Verdict>());
    }
    return out;
}

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Belief-augmented clarification and abstention harness", "bag"};
    app.require_subcommand(1);

    RunOptions run_opts, chat_opts;
    BackendOptions run_backend, judge_backend, analyze_backend, chat_backend;
    bool overwrite = false;

    auto* run_cmd = app.add_subcommand("run", "Run a setting over a dataset");
    add_run_options(*run_cmd, run_opts);
    add_backend_options(*run_cmd, run_backend);
    run_cmd->add_flag("--overwrite", overwrite, "Replace a run with a different manifest");

    std::string judge_dir, judge_mode = "one", judge_dataset, judge_model;
    int judge_concurrency = 1;
    bool classify = false;
    auto* judge_cmd = app.add_subcommand("judge", "Judge final answers against references");
    judge_cmd->add_option("run_dir", judge_dir, "Run directory")->required();
    judge_cmd->add_option("--mode", judge_mode, "one|any");
    judge_cmd->add_option("--dataset", judge_dataset, "Dataset (default: the run's)");
    judge_cmd->add_option("--judge-model", judge_model, "Judge model id (default: the run's)");
    judge_cmd->add_option("--concurrency", judge_concurrency, "Judge calls in flight");
    judge_cmd->add_flag("--classify", classify, "Also label each final answer's conversational strategy");
    add_backend_options(*judge_cmd, judge_backend);

    AnalyzeOptions ao;
    auto* analyze_cmd = app.add_subcommand("analyze", "Compute reports over judged runs");
    analyze_cmd->add_option("run_dir", ao.run_dir, "Run directory")->required();
    analyze_cmd->add_option("--select", ao.select, "Analyses: " + fmt::format("{}", fmt::join(kSelectors, ",")))
        ->delimiter(',')
        ->required();
    analyze_cmd->add_option("--baseline", ao.baseline, "Baseline run directory (decompose, routing)");
    analyze_cmd->add_option("--mode", ao.mode, "Verdict mode for accuracy: one|any");
    analyze_cmd->add_option("--cluster-method", ao.cluster_method, "exact_match|llm");
    analyze_cmd->add_option("--cluster-model", ao.cluster_model, "Model id for llm clustering (default: judge)");
    analyze_cmd->add_option("--out", ao.out_dir, "Report directory (default: RUN_DIR/analysis)");
    analyze_cmd->add_option("--dataset", ao.dataset, "Dataset (default: the run's)");
    add_backend_options(*analyze_cmd, analyze_backend);

    bool verbose = false;
    std::string transcript;
    auto* chat_cmd = app.add_subcommand("chat", "Interactive session with a human as the user");
    add_run_options(*chat_cmd, chat_opts);
    add_backend_options(*chat_cmd, chat_backend);
    chat_cmd->add_flag("--verbose", verbose, "Show strategy, reasoning and belief samples");
    chat_cmd->add_option("--transcript", transcript, "Transcript file (default: OUT/chat.jsonl)");

    std::string cache_dir = ".bag_cache";
    auto* cache_cmd = app.add_subcommand("cache", "Inspect or clear the response cache");
    cache_cmd->require_subcommand(1);
    auto* cache_stats = cache_cmd->add_subcommand("stats", "Entry count and size");
    auto* cache_purge = cache_cmd->add_subcommand("purge", "Remove every entry");
    for (auto* c : {cache_stats, cache_purge}) c->add_option("--cache-dir", cache_dir, "Cache directory");

    std::string ds_in, ds_out;
    auto* ds_cmd = app.add_subcommand("dataset", "Dataset utilities");
    ds_cmd->require_subcommand(1);
    auto* ds_stats = ds_cmd->add_subcommand("stats", "Summary statistics");
    ds_stats->add_option("path", ds_in, "AmbigQA json or normalized jsonl")->required();
    auto* ds_norm = ds_cmd->add_subcommand("normalize", "Convert AmbigQA json to normalized jsonl");
    ds_norm->add_option("input", ds_in, "AmbigQA json")->required();
    ds_norm->add_option("output", ds_out, "Output jsonl")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kConfigError;
    }

    try {
        if (run_cmd->parsed()) return cmd_run(run_opts, run_backend, overwrite, out);
        if (judge_cmd->parsed())
            return cmd_judge(judge_dir, judge_mode, judge_dataset, judge_model, judge_concurrency, classify,
                             judge_backend, out);
        if (analyze_cmd->parsed()) return cmd_analyze(ao, analyze_backend, out);
        if (chat_cmd->parsed()) return cmd_chat(chat_opts, chat_backend, verbose, transcript, in, out);
        if (cache_cmd->parsed()) return cmd_cache(cache_stats->parsed() ? "stats" : "purge", cache_dir, out);
        if (ds_stats->parsed()) return cmd_dataset_stats(ds_in, out);
        if (ds_norm->parsed()) return cmd_dataset_normalize(ds_in, ds_out, out);
    } catch (const ConfigError& e) {
        fmt::print(err, "config error: {}\n", e.what());
        return kConfigError;
    } catch (const DatasetError& e) {
        fmt::print(err, "dataset error: {}\n", e.what());
        return kDatasetError;
    } catch (const AuthError& e) {
        fmt::print(err, "backend unavailable: {}\n", e.what());
        return kBackendUnavailable;
    } catch (const BackendUnavailable& e) {
        fmt::print(err, "backend unavailable: {}\n", e.what());
        return kBackendUnavailable;
    } catch (const MismatchedQuestionSets& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kConfigError;
    }
    return kUsage;
}

}  // namespace bag::cli
