#pragma once

#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "egoqa/answer.hpp"
#include "egoqa/concurrency.hpp"
#include "egoqa/config.hpp"
#include "egoqa/corpus.hpp"
#include "egoqa/digest.hpp"
#include "egoqa/ensemble.hpp"
#include "egoqa/http.hpp"
#include "egoqa/llm.hpp"
#include "egoqa/log.hpp"
#include "egoqa/metrics.hpp"
#include "egoqa/parse.hpp"
#include "egoqa/prompt.hpp"
#include "egoqa/refine.hpp"

namespace egoqa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitPartial = 2;
inline constexpr int kExitUsage = 64;

struct Backends
{
    std::shared_ptr<EmbedderBackend> embedder;
    std::shared_ptr<LlmBackend> llm;
};

/// Backends named by the config. The LLM is only built when `need_llm` is set.
inline Backends make_backends(PipelineConfig const& cfg, bool need_llm)
{
    Backends b;
    auto const es = cfg.embedder();
    std::shared_ptr<EmbedderBackend> inner;
    if (es.kind == "mock")
        inner = std::make_shared<MockEmbedder>(es.seed, es.dim);
    else
        inner = std::make_shared<HttpEmbedder>(HttpOptions{es.endpoint, es.auth_env, std::chrono::seconds(120)});
    b.embedder = std::make_shared<CachingEmbedder>(std::move(inner));

    if (need_llm) {
        auto const ls = cfg.llm();
        if (ls.kind == "replay")
            b.llm = std::make_shared<ReplayLlm>(load_transcripts(cfg.existing_path("paths.transcripts")));
        else
            b.llm = std::make_shared<HttpLlm>(HttpOptions{ls.endpoint, ls.auth_env, ls.timeout},
                                              ls.wire == "chat" ? LlmWire::chat : LlmWire::plain, ls.model);
    }
    return b;
}

struct Failure
{
    std::string stage;
    std::string video_id;
    std::string qid;
    std::string message;

    [[nodiscard]] nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        j["stage"] = stage;
        if (!video_id.empty())
            j["video_id"] = video_id;
        if (!qid.empty())
            j["qid"] = qid;
        j["message"] = message;
        return j;
    }
};

struct CommandReport
{
    std::string command;
    std::map<std::string, std::size_t> counts;
    std::vector<Failure> failures;
    /// Main artifact contents, also written to paths.output.
    std::string output;

    [[nodiscard]] int exit_code() const { return failures.empty() ? kExitOk : kExitPartial; }
};

/// Execution knobs that are not part of the reproducible configuration.
struct RunContext
{
    Logger* log = nullptr;
    Sleeper sleep = real_sleeper();
    /// When set, ask/localize record every completion here for later replay.
    RecordingLlm* recorder = nullptr;
};

namespace detail {

inline void write_file(std::string const& path, std::string const& contents)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << contents;
    if (!out)
        throw std::runtime_error("write failed for " + path);
}

inline std::string kind_of(Backends const& b, RunContext const& ctx)
{
    if (ctx.recorder != nullptr)
        return ctx.recorder->kind();
    return b.llm ? b.llm->kind() : "none";
}

/// Manifest next to the main artifact: everything needed to rerun with replay backends.
inline void write_manifest(PipelineConfig const& cfg, Backends const& b, RunContext const& ctx, CommandReport const& r)
{
    nlohmann::ordered_json m;
    m["command"] = r.command;
    m["config_sha256"] = cfg.hash();
    m["seed"] = cfg.get("run.seed");
    m["llm_backend"] = kind_of(b, ctx);
    m["embedder_backend"] = b.embedder ? b.embedder->kind() : "none";
    m["config"] = cfg.values;
    m["counts"] = r.counts;
    m["failures"] = nlohmann::ordered_json::array();
    for (auto const& f : r.failures)
        m["failures"].push_back(f.to_json());
    m["exit_code"] = r.exit_code();
    write_file(cfg.get("paths.output") + ".manifest.json", m.dump(2) + "\n");
}

inline void finish(PipelineConfig const& cfg, Backends const& b, RunContext const& ctx, CommandReport const& r)
{
    write_file(cfg.required("paths.output"), r.output);
    write_manifest(cfg, b, ctx, r);
    if (ctx.log != nullptr) {
        nlohmann::json fields = r.counts;
        fields["failures"] = r.failures.size();
        ctx.log->info(r.command, "done", fields);
    }
}

inline std::map<std::string, std::vector<Query>> queries_by_video(std::vector<Query> const& queries,
                                                                 std::optional<QueryKind> kind)
{
    std::map<std::string, std::vector<Query>> out;
    for (auto const& q : queries) {
        if (!kind || q.kind == *kind)
            out[q.video_id].push_back(q);
    }
    return out;
}

inline MergeOptions merge_options(PipelineConfig const& cfg, RunContext const& ctx)
{
    MergeOptions o;
    o.in_flight = 1;  // callers already run one work unit per pool slot
    o.sleep = ctx.sleep;
    if (cfg.get("digest.merge_mode") == "llm")
        o.retry = cfg.llm().retry;
    return o;
}

inline LlmBackend* active_llm(Backends const& b, RunContext const& ctx)
{
    if (ctx.recorder != nullptr)
        return ctx.recorder;
    return b.llm.get();
}

inline CaptionLoad load_tracks(PipelineConfig const& cfg, Logger* log)
{
    auto load = load_captions(cfg.existing_path("paths.captions"));
    if (load.duplicates_dropped > 0 && log != nullptr)
        log->warn("corpus", "duplicate caption records dropped", {{"count", load.duplicates_dropped}});
    return load;
}

} // namespace detail

/// Digests every video and writes the result in the captions format.
inline CommandReport cmd_digest(PipelineConfig const& cfg, Backends const& backends, RunContext const& ctx = {})
{
    CommandReport report{"digest", {}, {}, {}};
    auto const dcfg = cfg.digest();
    auto const load = detail::load_tracks(cfg, ctx.log);
    std::vector<Query> queries;
    if (!cfg.get("paths.queries").empty()) {
        queries = load_queries(cfg.existing_path("paths.queries"));
        check_queries_against_tracks(queries, load.tracks);
    }
    auto const by_video = detail::queries_by_video(queries, std::nullopt);
    LlmBackend* llm = dcfg.merge_mode == MergeMode::llm ? detail::active_llm(backends, ctx) : nullptr;

    std::vector<CaptionTrack const*> tracks;
    for (auto const& [_, t] : load.tracks)
        tracks.push_back(&t);
    std::vector<std::optional<DigestResult>> results(tracks.size());
    std::vector<std::string> errors(tracks.size());
    auto const opts = detail::merge_options(cfg, ctx);

    parallel_for(tracks.size(), cfg.in_flight_limit(), [&](std::size_t i) {
        auto const& track = *tracks[i];
        auto qs = by_video.find(track.video_id);
        std::span<Query const> vq;
        if (qs != by_video.end())
            vq = qs->second;
        try {
            Stopwatch sw;
            results[i] = digest(track, vq, *backends.embedder, llm, dcfg, opts, ctx.log);
            if (ctx.log != nullptr) {
                auto fields = nlohmann::json(results[i]->stats.to_json());
                fields["video_id"] = track.video_id;
                fields["duration_ms"] = sw.elapsed_ms();
                ctx.log->info("digest", "video digested", fields);
            }
        } catch (std::exception const& e) {
            errors[i] = e.what();
        }
    });

    TrackMap out;
    nlohmann::ordered_json stats = nlohmann::ordered_json::array();
    std::vector<std::string> failed;
    std::size_t in_total = 0, out_total = 0;
    for (std::size_t i = 0; i < tracks.size(); ++i) {
        if (!results[i]) {
            failed.push_back(tracks[i]->video_id + ": " + errors[i]);
            continue;
        }
        in_total += results[i]->stats.input;
        out_total += results[i]->stats.output;
        stats.push_back(results[i]->stats.to_json());
        out.emplace(tracks[i]->video_id, std::move(results[i]->track));
    }
    if (!failed.empty()) {
        std::string msg = "digest failed for " + std::to_string(failed.size()) + " video(s):";
        for (auto const& f : failed)
            msg += "\n  " + f;
        throw std::runtime_error(msg);
    }

    std::ostringstream os;
    write_captions(os, out);
    report.output = os.str();
    report.counts = {{"videos", out.size()}, {"captions_in", in_total}, {"captions_out", out_total},
                     {"duplicates_dropped", load.duplicates_dropped}};
    if (auto const& stats_path = cfg.get("paths.stats"); !stats_path.empty())
        detail::write_file(stats_path, stats.dump(2) + "\n");
    detail::finish(cfg, backends, ctx, report);
    return report;
}

/// One QA prediction record.
inline std::string qa_prediction_line(LlmAnswer const& a)
{
    nlohmann::ordered_json j;
    j["qid"] = a.qid;
    j["choice"] = a.choice_idx ? nlohmann::ordered_json(std::string(1, index_to_letter(*a.choice_idx))) : nullptr;
    j["confidence"] = a.confidence;
    j["explanation"] = a.explanation;
    return j.dump();
}

/// digest -> QA prompt -> repeated runs -> parse -> vote by confidence, per question.
inline CommandReport cmd_ask(PipelineConfig const& cfg, Backends const& backends, RunContext const& ctx = {})
{
    CommandReport report{"ask", {}, {}, {}};
    auto const dcfg = cfg.digest();
    auto const ls = cfg.llm();
    auto const seed = cfg.seed();
    auto const runs = cfg.runs();
    auto const load = detail::load_tracks(cfg, ctx.log);
    auto const all = load_queries(cfg.existing_path("paths.queries"));
    check_queries_against_tracks(all, load.tracks);
    std::vector<Query> questions;
    for (auto const& q : all) {
        if (q.kind == QueryKind::qa)
            questions.push_back(q);
    }
    LlmBackend* llm = detail::active_llm(backends, ctx);
    auto const opts = detail::merge_options(cfg, ctx);

    std::vector<LlmAnswer> chosen(questions.size());
    std::vector<std::vector<Failure>> failures(questions.size());
    std::vector<std::size_t> ok_runs(questions.size(), 0);

    parallel_for(questions.size(), cfg.in_flight_limit(), [&](std::size_t i) {
        auto const& q = questions[i];
        Stopwatch sw;
        chosen[i].qid = q.qid;
        chosen[i].kind = QueryKind::qa;
        try {
            auto const& track = load.tracks.at(q.video_id);
            auto digested = digest(track, std::span<Query const>(&q, 1), *backends.embedder,
                                   dcfg.merge_mode == MergeMode::llm ? llm : nullptr, dcfg, opts, ctx.log);
            auto const prompt = build_qa_prompt(digested.track, q);
            auto outcome = run(prompt, *llm, runs, util::derive_seed(seed, q.qid), ls.retry, ctx.sleep);
            for (auto const& f : outcome.failures)
                failures[i].push_back({"ask", q.video_id, q.qid, "run " + std::to_string(f.run_index) + ": " + f.message});

            std::vector<LlmAnswer> answered, unanswered;
            for (auto const& r : outcome.responses) {
                try {
                    auto parsed = parse_response(r.text, QueryKind::qa, prompt.query_ids);
                    auto& a = parsed.answers.front();
                    if (ctx.log != nullptr && !parsed.warnings.empty())
                        ctx.log->warn("parse", "degraded response",
                                      {{"qid", q.qid}, {"run", r.run_index}, {"warnings", parsed.warnings}});
                    (a.choice_idx ? answered : unanswered).push_back(std::move(a));
                } catch (ParseError const& e) {
                    if (ctx.log != nullptr)
                        ctx.log->warn("parse", e.what(), {{"qid", q.qid}, {"run", r.run_index}});
                }
            }
            ok_runs[i] = answered.size();
            auto& pool = answered.empty() ? unanswered : answered;
            if (pool.empty()) {
                failures[i].push_back({"ask", q.video_id, q.qid, "no usable response"});
            } else {
                chosen[i] = vote_by_confidence(AnswerPool(std::move(pool)), util::derive_seed(seed ^ 0x766f7465ULL, q.qid));
                if (!chosen[i].choice_idx)
                    failures[i].push_back({"ask", q.video_id, q.qid, "no response named a choice"});
            }
        } catch (std::exception const& e) {
            failures[i].push_back({"ask", q.video_id, q.qid, e.what()});
        }
        if (ctx.log != nullptr)
            ctx.log->info("ask", "question answered",
                          {{"video_id", q.video_id}, {"qid", q.qid}, {"duration_ms", sw.elapsed_ms()}});
    });

    std::string out;
    std::size_t answered = 0, runs_ok = 0;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        out += qa_prediction_line(chosen[i]) + "\n";
        answered += chosen[i].choice_idx ? 1 : 0;
        runs_ok += ok_runs[i];
        for (auto& f : failures[i])
            report.failures.push_back(std::move(f));
    }
    report.output = std::move(out);
    report.counts = {{"questions", questions.size()}, {"answered", answered}, {"runs_requested", runs * questions.size()},
                     {"runs_answered", runs_ok}};
    detail::finish(cfg, backends, ctx, report);
    return report;
}

inline std::string nlq_prediction_line(NlqPrediction const& p)
{
    nlohmann::ordered_json j;
    j["qid"] = p.answer.qid;
    j["predicted_window"] = {p.window.start_s, p.window.end_s};
    j["confidence"] = p.answer.confidence;
    j["explanation"] = p.answer.explanation;
    if (p.answer.intervals.empty()) {
        j["candidates"] = "NA";
    } else {
        j["candidates"] = nlohmann::ordered_json::array();
        for (auto const& w : p.answer.intervals)
            j["candidates"].push_back({w.start_s, w.end_s});
    }
    return j.dump();
}

/// digest -> batched NLQ prompt -> parse -> clamp -> select_candidate, per video.
inline CommandReport cmd_localize(PipelineConfig const& cfg, Backends const& backends, RunContext const& ctx = {})
{
    CommandReport report{"localize", {}, {}, {}};
    auto const dcfg = cfg.digest();
    auto const rcfg = cfg.refine();
    auto const ls = cfg.llm();
    auto const seed = cfg.seed();
    auto const load = detail::load_tracks(cfg, ctx.log);
    auto const all = load_queries(cfg.existing_path("paths.queries"));
    check_queries_against_tracks(all, load.tracks);
    auto const by_video = detail::queries_by_video(all, QueryKind::nlq);
    LlmBackend* llm = detail::active_llm(backends, ctx);
    auto const opts = detail::merge_options(cfg, ctx);

    std::vector<std::pair<std::string, std::vector<Query>>> units(by_video.begin(), by_video.end());
    std::vector<std::vector<NlqPrediction>> preds(units.size());
    std::vector<std::vector<Failure>> failures(units.size());
    std::vector<std::size_t> na_count(units.size(), 0);

    parallel_for(units.size(), cfg.in_flight_limit(), [&](std::size_t u) {
        auto const& [video, queries] = units[u];
        auto const& track = load.tracks.at(video);
        Stopwatch sw;
        std::vector<std::string> qids;
        for (auto const& q : queries)
            qids.push_back(q.qid);

        std::vector<LlmAnswer> answers;
        CaptionTrack digested = track;
        try {
            auto d = digest(track, queries, *backends.embedder, dcfg.merge_mode == MergeMode::llm ? llm : nullptr, dcfg,
                            opts, ctx.log);
            digested = std::move(d.track);
            auto const prompt = build_nlq_prompt(digested, queries);
            auto outcome = run(prompt, *llm, 1, util::derive_seed(seed, video), ls.retry, ctx.sleep);
            if (outcome.responses.empty())
                throw std::runtime_error(outcome.failures.front().message);
            auto parsed = parse_response(outcome.responses.front().text, QueryKind::nlq, qids);
            if (ctx.log != nullptr && !parsed.warnings.empty())
                ctx.log->warn("parse", "degraded response", {{"video_id", video}, {"warnings", parsed.warnings}});
            answers = std::move(parsed.answers);
        } catch (std::exception const& e) {
            failures[u].push_back({"localize", video, "", e.what()});
            answers.clear();
            for (auto const& qid : qids) {
                LlmAnswer a;
                a.qid = qid;
                a.kind = QueryKind::nlq;
                answers.push_back(std::move(a));
            }
        }

        CaptionOverlapScorer scorer(*backends.embedder, dcfg.relevance_threshold);
        for (std::size_t k = 0; k < queries.size(); ++k) {
            auto& a = answers[k];
            if (auto touched = clamp_to_bounds(a, track.bounds()); touched > 0 && ctx.log != nullptr)
                ctx.log->warn("localize", "candidate windows clamped to clip bounds",
                              {{"qid", a.qid}, {"count", touched}});
            auto sel = select_candidate(a, queries[k], digested, scorer, rcfg, ctx.log);
            na_count[u] += a.is_na() ? 1 : 0;
            preds[u].push_back({a, sel.window});
        }
        if (ctx.log != nullptr)
            ctx.log->info("localize", "video localized",
                          {{"video_id", video}, {"queries", queries.size()}, {"duration_ms", sw.elapsed_ms()}});
    });

    std::string out;
    std::size_t n = 0, na = 0;
    for (std::size_t u = 0; u < units.size(); ++u) {
        for (auto const& p : preds[u]) {
            out += nlq_prediction_line(p) + "\n";
            ++n;
        }
        na += na_count[u];
        for (auto& f : failures[u])
            report.failures.push_back(std::move(f));
    }
    report.output = std::move(out);
    report.counts = {{"videos", units.size()}, {"queries", n}, {"na", na}};
    detail::finish(cfg, backends, ctx, report);
    return report;
}

struct LoadedPredictions
{
    AnswerMap qa;
    NlqPredictionMap nlq;
};

inline LoadedPredictions parse_predictions(std::istream& in)
{
    LoadedPredictions out;
    util::for_each_line(in, [&](std::string const& text, std::size_t line) {
        auto rec = detail::parse_record(text, line);
        auto const at = " at line " + std::to_string(line);
        auto qid = detail::read_string(rec, "qid", line);
        LlmAnswer a;
        a.qid = qid;
        if (auto c = rec.find("confidence"); c != rec.end() && c->is_number_integer())
            a.confidence = std::clamp(c->get<int>(), kMinConfidence, kMaxConfidence);
        if (auto e = rec.find("explanation"); e != rec.end() && e->is_string())
            a.explanation = e->get<std::string>();

        if (rec.contains("predicted_window")) {
            a.kind = QueryKind::nlq;
            auto const& w = rec["predicted_window"];
            if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number())
                throw DataError("predicted_window must be [start, end]" + at);
            NlqPrediction p{a, {w[0].get<double>(), w[1].get<double>()}};
            if (!p.window.valid())
                throw DataError("inverted predicted_window" + at);
            if (auto c = rec.find("candidates"); c != rec.end() && c->is_array()) {
                for (auto const& pair : *c) {
                    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number())
                        throw DataError("candidates must be [[start, end], ...] or \"NA\"" + at);
                    p.answer.intervals.push_back({pair[0].get<double>(), pair[1].get<double>()});
                }
            }
            if (!out.nlq.emplace(qid, std::move(p)).second)
                throw DataError("duplicate prediction for " + qid + at);
        } else if (rec.contains("choice")) {
            a.kind = QueryKind::qa;
            auto const& c = rec["choice"];
            if (c.is_string() && c.get<std::string>().size() == 1)
                a.choice_idx = letter_to_index(c.get<std::string>().front());
            else if (!c.is_null())
                throw DataError("choice must be a letter A-E or null" + at);
            if (!out.qa.emplace(qid, std::move(a)).second)
                throw DataError("duplicate prediction for " + qid + at);
        } else {
            throw DataError("prediction record has neither choice nor predicted_window" + at);
        }
    });
    return out;
}

/// Scores a predictions file against the ground truth in the queries file.
inline CommandReport cmd_eval(PipelineConfig const& cfg, RunContext const& ctx = {})
{
    CommandReport report{"eval", {}, {}, {}};
    auto in = util::open_input(cfg.existing_path("paths.predictions"));
    auto preds = parse_predictions(in);
    auto const queries = load_queries(cfg.existing_path("paths.queries"));

    WindowMap windows;
    ChoiceMap choices;
    for (auto const& q : queries) {
        if (q.gt_window)
            windows.emplace(q.qid, *q.gt_window);
        if (q.gt_answer_idx)
            choices.emplace(q.qid, *q.gt_answer_idx);
    }

    std::vector<std::string> no_truth;
    for (auto const& [qid, _] : preds.qa) {
        if (!choices.contains(qid))
            no_truth.push_back(qid);
    }
    for (auto const& [qid, _] : preds.nlq) {
        if (!windows.contains(qid))
            no_truth.push_back(qid);
    }
    if (!no_truth.empty()) {
        std::string msg = "predictions without ground truth (" + std::to_string(no_truth.size()) + "):";
        for (auto const& q : no_truth)
            msg += " " + q;
        throw DataError(msg);
    }
    if (!preds.qa.empty()) {
        for (auto const& [qid, _] : choices) {
            if (!preds.qa.contains(qid))
                report.failures.push_back({"eval", "", qid, "QA ground truth without prediction"});
        }
    }
    if (!preds.nlq.empty()) {
        for (auto const& [qid, _] : windows) {
            if (!preds.nlq.contains(qid))
                report.failures.push_back({"eval", "", qid, "NLQ ground truth without prediction"});
        }
    }

    nlohmann::ordered_json doc;
    std::string summary;
    if (!preds.qa.empty()) {
        auto r = evaluate_qa(preds.qa, choices);
        r.per_confidence = stratify_by_confidence(preds.qa, choices);
        doc["qa"] = r.to_json();
        summary += format_summary(r);
        report.counts["qa_predictions"] = preds.qa.size();
    }
    if (!preds.nlq.empty()) {
        auto r = evaluate_nlq(preds.nlq, windows);
        r.per_confidence = stratify_by_confidence(preds.nlq, windows);
        doc["nlq"] = r.to_json();
        summary += format_summary(r);
        report.counts["nlq_predictions"] = preds.nlq.size();
    }
    report.output = doc.dump(2) + "\n";
    Backends none;
    detail::finish(cfg, none, ctx, report);
    detail::write_file(cfg.get("paths.output") + ".txt", summary);
    return report;
}

/// Balanced positive/negative windows around every NLQ ground truth.
inline CommandReport cmd_gen_refine_data(PipelineConfig const& cfg, RunContext const& ctx = {})
{
    CommandReport report{"gen-refine-data", {}, {}, {}};
    auto const rcfg = cfg.refine();
    auto const seed = cfg.seed();
    auto const load = detail::load_tracks(cfg, ctx.log);
    auto const queries = load_queries(cfg.existing_path("paths.queries"));
    check_queries_against_tracks(queries, load.tracks);

    std::vector<GroundTruth> gts;
    for (auto const& q : queries) {
        if (q.kind == QueryKind::nlq && q.gt_window)
            gts.push_back({q.qid, *q.gt_window, load.tracks.at(q.video_id).bounds()});
    }
    auto const samples = gen_refinement_dataset(gts, rcfg, seed);
    std::ostringstream os;
    write_refinement_dataset(os, samples);
    report.output = os.str();
    std::size_t pos = 0;
    for (auto const& s : samples)
        pos += s.label == SampleLabel::pos ? 1 : 0;
    report.counts = {{"ground_truths", gts.size()}, {"positives", pos}, {"negatives", samples.size() - pos}};
    Backends none;
    detail::finish(cfg, none, ctx, report);
    return report;
}

} // namespace egoqa
