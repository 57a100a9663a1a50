#include "support.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <unistd.h>

#include "bag/cli.hpp"

namespace fs = std::filesystem;

namespace bag::test {

TempDir::TempDir(const std::string& tag) {
    std::string tmpl = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::string read_text(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

void write_text(const fs::path& p, const std::string& content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << content;
}

int cli(const std::vector<std::string>& args, std::string* out, std::string* err, const std::string& stdin_text) {
    std::istringstream in(stdin_text);
    std::ostringstream o, e;
    const int rc = cli::run(args, in, o, e);
    if (out) *out = o.str();
    if (err) *err = e.str();
    return rc;
}

std::shared_ptr<Gateway> mock_gateway(std::shared_ptr<MockBackend> mock, std::shared_ptr<ResponseCache> cache) {
    RetryPolicy retry;
    retry.sleep = [](std::chrono::milliseconds) {};
    return std::make_shared<Gateway>(std::move(mock), std::move(cache), retry);
}

QuestionRecord make_record(const std::string& id, const std::string& question,
                           const std::vector<std::vector<std::string>>& intent_aliases) {
    QuestionRecord r;
    r.question_id = id;
    r.question_text = question;
    for (std::size_t i = 0; i < intent_aliases.size(); ++i) {
        Intent in;
        in.intent_id = fmt::format("{}#{}", id, i);
        if (intent_aliases.size() > 1) in.disambiguated_question = fmt::format("{} (reading {})", question, i + 1);
        in.reference_answers = intent_aliases[i];
        r.intents.push_back(std::move(in));
    }
    r.ambiguous = intent_aliases.size() > 1;
    return r;
}

// ---------------------------------------------------------------------------

namespace {

StrategyDecision decision(Strategy s, const std::string& response) {
    StrategyDecision d;
    d.strategy = s;
    d.reasoning = "scripted";
    d.response = response;
    d.raw = canonical_format(s, d.reasoning, response);
    return d;
}

Turn turn(int index, Role role, std::string text, TurnSource source, std::optional<StrategyDecision> meta = {}) {
    Turn t;
    t.index = index;
    t.role = role;
    t.text = std::move(text);
    t.source = source;
    t.meta = std::move(meta);
    return t;
}

}  // namespace

DecompRecords build_decomposition_records(const std::vector<DecompCase>& cases) {
    DecompRecords out;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        const std::string qid = fmt::format("d{:04}", i);
        const std::string question = fmt::format("Decomposition question {}?", qid);
        const std::string intent = qid + "#0";

        RunRecord base;
        base.question_id = qid;
        base.model_id = "model";
        base.intent_id = intent;
        base.turns = {turn(1, Role::User, question, TurnSource::Dataset),
                      turn(2, Role::Assistant, "base answer", TurnSource::Model)};
        base.final_strategy = Strategy::DirectAnswer;
        base.final_answer = "base answer";
        out.base_runs.push_back(base);
        out.base_verdicts.push_back({qid, JudgeMode::OneIntent, c.base_correct, "r", "base answer", intent, false, ""});

        RunRecord bag;
        bag.question_id = qid;
        bag.setting = Setting::Bag2;
        bag.plus = true;
        bag.model_id = "model";
        bag.intent_id = intent;
        bag.turns.push_back(turn(1, Role::User, question, TurnSource::Dataset));
        const bool clarify = c.subset == Subset::Clarify || c.late_abstain;
        if (c.subset == Subset::Direct && !c.late_abstain) {
            bag.turns.push_back(turn(2, Role::Assistant, "bag answer", TurnSource::Model,
                                     decision(Strategy::DirectAnswer, "bag answer")));
            bag.final_strategy = Strategy::DirectAnswer;
        } else if (c.subset == Subset::Abstain && !c.late_abstain) {
            bag.turns.push_back(turn(2, Role::Assistant, "I don't know.", TurnSource::Model,
                                     decision(Strategy::Abstain, "I don't know.")));
            bag.final_strategy = Strategy::Abstain;
        } else if (clarify) {
            bag.turns.push_back(turn(2, Role::Assistant, "Which one?", TurnSource::Model,
                                     decision(Strategy::ClarificationQuestion, "Which one?")));
            bag.turns.push_back(turn(3, Role::User, "The first one.", TurnSource::Simulator));
            if (c.late_abstain) {
                bag.turns.push_back(turn(4, Role::Assistant, "I don't know.", TurnSource::Model,
                                         decision(Strategy::Abstain, "I don't know.")));
                bag.final_strategy = Strategy::Abstain;
            } else {
                bag.turns.push_back(turn(4, Role::Assistant, "bag answer", TurnSource::Model,
                                         decision(Strategy::DirectAnswer, "bag answer")));
                bag.final_strategy = Strategy::DirectAnswer;
            }
        }
        if (bag.final_strategy != Strategy::Abstain) {
            bag.final_answer = "bag answer";
            out.bag_verdicts.push_back({qid, JudgeMode::OneIntent, c.bag_correct, "r", "bag answer", intent, false, ""});
        }
        out.bag_runs.push_back(std::move(bag));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

template <class T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& xs) {
    return xs[std::uniform_int_distribution<std::size_t>(0, xs.size() - 1)(rng)];
}

bool chance(std::mt19937_64& rng, double p) { return std::bernoulli_distribution(p)(rng); }

Purpose decision_purpose(Setting s) {
    switch (s) {
        case Setting::Sag: return Purpose::Sag;
        case Setting::Bag1: return Purpose::Bag1;
        case Setting::Bag2: return Purpose::Bag2;
        case Setting::Bag3: return Purpose::Bag3;
        default: return Purpose::Direct;
    }
}

ScriptEntry entry(Purpose purpose, std::vector<std::string> patterns, std::vector<std::string> responses,
                  std::vector<std::string> context = {}) {
    ScriptEntry e;
    e.purpose = purpose;
    e.patterns = std::move(patterns);
    e.responses = std::move(responses);
    e.context = std::move(context);
    return e;
}

// Samples for a belief or completion; sometimes too few, which fails part
// of the fan-out.
ScriptEntry sample_entry(std::mt19937_64& rng, std::vector<std::string> patterns, const std::vector<std::string>& pool,
                         int k) {
    std::vector<std::string> responses;
    for (int i = 0; i < k; ++i) responses.push_back(pick(rng, pool));
    ScriptEntry e = entry(Purpose::Direct, std::move(patterns), {});
    if (chance(rng, 0.08)) {
        e.cycle = false;
        responses.resize(std::uniform_int_distribution<std::size_t>(1, responses.size())(rng) - 1);
        if (responses.empty()) responses.push_back(pool.front());
    }
    e.responses = std::move(responses);
    return e;
}

}  // namespace

RandomWorld random_world(std::mt19937_64& rng) {
    RandomWorld w;
    static const std::vector<Setting> settings{Setting::Standard, Setting::Disambig, Setting::Sag,
                                               Setting::Bag1,     Setting::Bag2,     Setting::Bag3};
    static const std::vector<Brevity> brevities{Brevity::Free, Brevity::Concise, Brevity::Sentence};
    auto& cfg = w.config;
    cfg.setting = pick(rng, settings);
    cfg.plus = is_augmented(cfg.setting) && chance(rng, 0.5);
    cfg.k = std::uniform_int_distribution<int>(2, 10)(rng);
    cfg.seed = rng();
    cfg.brevity = pick(rng, brevities);
    cfg.concurrency = std::uniform_int_distribution<int>(1, 4)(rng);
    cfg.post_clarification_belief = chance(rng, 0.3);

    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int i = 0; i < n; ++i) {
        const std::string id = fmt::format("r{:02}", i);
        const std::string question = fmt::format("Random question {}?", id);
        const std::string marker = "pick-" + id;
        std::vector<std::vector<std::string>> intents;
        const int n_intents = std::uniform_int_distribution<int>(1, 3)(rng);
        for (int j = 0; j < n_intents; ++j) intents.push_back({fmt::format("ans-{}-{}", id, j)});
        w.records.push_back(make_record(id, question, intents));

        const std::vector<std::string> finals{
            canonical_format(Strategy::DirectAnswer, "r", fmt::format("ans-{}-0", id)),
            canonical_format(Strategy::DirectAnswer, "r", "something else"),
            canonical_format(Strategy::Abstain, "r", "I don't know."),
            "STRATEGY: ABSTAIN\nREASONING: split",
            canonical_format(Strategy::ClarificationQuestion, "r", "Which one again?"),
            "free text without any headers",
        };
        w.script.push_back(entry(Purpose::Sag, {"they have answered it"}, {pick(rng, finals)}, {marker}));
        w.script.push_back(entry(Purpose::BagPlus, {}, {pick(rng, finals)}, {marker}));
        w.script.push_back(sample_entry(rng, {marker}, {"post-" + id + "-a", "post-" + id + "-b", "other"}, cfg.k));
        if (!chance(rng, 0.1)) {
            const std::vector<std::string> replies{"REASONING: r\nUSER ANSWER: I mean " + marker,
                                                   "just " + marker + " please", "I don't know " + marker};
            w.script.push_back(entry(Purpose::UserSim, {question}, {pick(rng, replies)}));
        }
        w.script.push_back(sample_entry(
            rng, {question}, {fmt::format("ans-{}-0", id), fmt::format("ans-{}-1", id), "no clue", "ANS " + id + " 0"},
            cfg.k));
        w.script.push_back(entry(Purpose::Disambig, {id}, {fmt::format("ans-{}-0", id)}));

        const std::vector<std::string> decisions{
            canonical_format(Strategy::DirectAnswer, "r", fmt::format("ans-{}-1", id)),
            canonical_format(Strategy::ClarificationQuestion, "r", "Which reading do you mean?"),
            canonical_format(Strategy::ClarificationQuestion, "r", "Which reading do you mean?"),
            canonical_format(Strategy::Abstain, "r", "I'd rather not guess."),
            "STRATEGY: DIRECT_ANSWER\nREASONING: no response given",
            "garbled output",
        };
        if (is_augmented(cfg.setting))
            w.script.push_back(entry(decision_purpose(cfg.setting), {question}, {pick(rng, decisions)}));

        const std::vector<std::string> verdicts{"REASONING: r\nVERDICT: yes", "REASONING: r\nVERDICT: no",
                                                "REASONING: r\nVERDICT: perhaps"};
        w.script.push_back(entry(Purpose::Judge, {question}, {pick(rng, verdicts)}));
    }
    return w;
}

// ---------------------------------------------------------------------------

const std::vector<PipelineStep>& pipeline_steps() {
    static const std::vector<PipelineStep> steps{
        {"standard", "standard", false}, {"disambig", "disambig", false}, {"sag", "sag", false},
        {"bag1", "bag1", false},         {"bag2", "bag2", false},         {"bag3", "bag3", false},
        {"sag_plus", "sag", true},       {"bag1_plus", "bag1", true},     {"bag2_plus", "bag2", true},
        {"bag3_plus", "bag3", true},
    };
    return steps;
}

PipelineResult run_pipeline(const fs::path& work) {
    const auto start = std::chrono::steady_clock::now();
    PipelineResult result;
    const std::string dataset = fixture("synthetic_ambigqa.json").string();
    const std::string script = fixture("mock_world.json").string();
    auto call = [&](std::vector<std::string> args) {
        std::string out, err;
        const int rc = cli(args, &out, &err);
        if (rc != 0) result.errors.push_back(fmt::format("`{}` exited {}: {}", fmt::join(args, " "), rc, err));
    };

    for (const auto& step : pipeline_steps()) {
        const std::string dir = (work / step.name).string();
        std::vector<std::string> args{"run",  "--dataset", dataset,   "--setting", step.setting, "--seed", "7",
                                      "--k",  "10",        "--mock",  script,      "--no-cache", "--out",  dir,
                                      "--concurrency", "4"};
        if (step.plus) args.push_back("--plus");
        call(args);
        for (const char* mode : {"one", "any"})
            call({"judge", dir, "--mode", mode, "--mock", script, "--no-cache", "--classify"});
        if (step.setting == "standard" || step.setting == "disambig") {
            call({"analyze", dir, "--select", "accuracy,frequencies", "--mock", script, "--no-cache"});
            call({"analyze", dir, "--select", "accuracy", "--mode", "any", "--mock", script, "--no-cache"});
        } else {
            call({"analyze", dir, "--select", "accuracy,decompose,routing,frequencies,entropy,faithfulness,reduction,leaks",
                  "--baseline", (work / "standard").string(), "--mock", script, "--no-cache"});
            call({"analyze", dir, "--select", "accuracy", "--mode", "any", "--mock", script, "--no-cache"});
        }
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    for (const auto& entry : fs::recursive_directory_iterator(work)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), work).generic_string();
        // The manifest carries wall time and local paths.
        if (entry.path().filename() == cli::kManifestFile) continue;
        result.files[rel] = read_text(entry.path());
    }
    return result;
}

std::vector<std::string> compare_with_golden(const std::map<std::string, std::string>& files) {
    std::vector<std::string> diffs;
    std::set<std::string> golden;
    if (fs::exists(golden_dir())) {
        for (const auto& entry : fs::recursive_directory_iterator(golden_dir()))
            if (entry.is_regular_file()) golden.insert(fs::relative(entry.path(), golden_dir()).generic_string());
    }
    for (const auto& [rel, content] : files) {
        if (!golden.contains(rel)) {
            diffs.push_back("missing golden: " + rel);
            continue;
        }
        if (read_text(golden_dir() / rel) != content) diffs.push_back("changed: " + rel);
    }
    for (const auto& rel : golden)
        if (!files.contains(rel)) diffs.push_back("not produced: " + rel);
    return diffs;
}

void write_golden(const std::map<std::string, std::string>& files) {
    fs::remove_all(golden_dir());
    for (const auto& [rel, content] : files) write_text(golden_dir() / rel, content);
}

}  // namespace bag::test
