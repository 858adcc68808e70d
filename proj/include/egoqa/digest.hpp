#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "egoqa/concurrency.hpp"
#include "egoqa/corpus.hpp"
#include "egoqa/llm.hpp"
#include "egoqa/log.hpp"
#include "egoqa/similarity.hpp"

namespace egoqa {

enum class MergeMode { llm, concat };

struct DigestConfig
{
    std::vector<std::string> blocklist{"looks around", "looks at the camera"};
    double relevance_threshold = 0.30;
    /// Values above 1 disable grouping: no cosine can reach them.
    double adjacency_threshold = 0.85;
    std::size_t max_merge_group = 8;
    MergeMode merge_mode = MergeMode::llm;

    void validate() const
    {
        if (!(relevance_threshold >= -1.0 && relevance_threshold <= 1.0))
            throw std::invalid_argument("digest.relevance_threshold must lie in [-1, 1]");
        if (!std::isfinite(adjacency_threshold) || adjacency_threshold < -1.0)
            throw std::invalid_argument("digest.adjacency_threshold must be >= -1");
        if (max_merge_group < 2)
            throw std::invalid_argument("digest.max_merge_group must be >= 2");
    }

    /// Every stage disabled; digest returns its input unchanged.
    static DigestConfig identity()
    {
        DigestConfig c;
        c.blocklist.clear();
        c.relevance_threshold = -1.0;
        c.adjacency_threshold = 2.0;
        c.merge_mode = MergeMode::concat;
        return c;
    }
};

/// A contiguous run [first, last) of track captions that will become one caption.
struct MergeGroup
{
    std::size_t first = 0;
    std::size_t last = 0;
    std::string merged_text;
    Interval merged_interval;

    [[nodiscard]] std::size_t size() const noexcept { return last - first; }

    friend bool operator==(MergeGroup const&, MergeGroup const&) = default;
};

/// Instruction sent with every LLM merge request.
inline constexpr char const* kMergeInstruction =
    "In this task, you will merge a list of captions into a single, concise caption. "
    "Focus on clarity and brevity while ensuring no critical details are lost in the merging process.";

/// Texts a query contributes to the relevance filter: the NLQ query, or the question plus its choices.
inline std::vector<std::string> relevance_texts(Query const& q)
{
    std::vector<std::string> out{q.text};
    for (auto const& c : q.choices) {
        if (!c.empty())
            out.push_back(c);
    }
    return out;
}

inline CaptionTrack drop_uninformative(CaptionTrack const& track, DigestConfig const& cfg, Logger* log = nullptr)
{
    std::vector<std::string> phrases;
    for (auto const& p : cfg.blocklist) {
        auto lp = util::to_lower(util::trim(p));
        if (!lp.empty())
            phrases.push_back(std::move(lp));
    }
    CaptionTrack out = track;
    if (phrases.empty())
        return out;
    out.captions.clear();
    for (auto const& c : track.captions) {
        auto const lower = util::to_lower(c.text);
        bool const blocked = std::any_of(phrases.begin(), phrases.end(),
                                         [&](std::string const& p) { return lower.find(p) != std::string::npos; });
        if (!blocked)
            out.captions.push_back(c);
    }
    if (out.empty() && !track.empty() && log != nullptr)
        log->warn("digest", "all captions blocked", {{"video_id", track.video_id}});
    return out;
}

/// Keeps a caption iff its best cosine against any query text reaches the threshold.
inline CaptionTrack filter_by_relevance(CaptionTrack const& track, std::span<Query const> queries,
                                        EmbedderBackend& backend, DigestConfig const& cfg)
{
    if (queries.empty())
        throw std::invalid_argument("filter_by_relevance: no queries");
    CaptionTrack out = track;
    if (track.empty() || cfg.relevance_threshold <= -1.0)
        return out;

    std::vector<std::string> query_texts;
    for (auto const& q : queries) {
        auto t = relevance_texts(q);
        query_texts.insert(query_texts.end(), t.begin(), t.end());
    }
    std::vector<std::string> caption_texts;
    caption_texts.reserve(track.size());
    for (auto const& c : track.captions)
        caption_texts.push_back(c.text);

    auto const qe = embed_batch(backend, query_texts);
    auto const ce = embed_batch(backend, caption_texts);
    out.captions.clear();
    for (std::size_t i = 0; i < track.size(); ++i) {
        double best = -1.0;
        for (auto const& q : qe)
            best = std::max(best, cosine(ce[i], q));
        if (best >= cfg.relevance_threshold)
            out.captions.push_back(track.captions[i]);
    }
    return out;
}

/// Greedy left-to-right chaining: caption i extends the open run when its cosine with
/// caption i-1 reaches the adjacency threshold and the run is below the size cap.
/// Only runs of two or more are returned; everything else passes through untouched.
inline std::vector<MergeGroup> group_consecutive(CaptionTrack const& track, EmbedderBackend& backend,
                                                 DigestConfig const& cfg)
{
    std::vector<MergeGroup> groups;
    if (track.size() < 2 || cfg.adjacency_threshold > 1.0)
        return groups;

    std::vector<std::string> texts;
    texts.reserve(track.size());
    for (auto const& c : track.captions)
        texts.push_back(c.text);
    auto const emb = embed_batch(backend, texts);

    auto const close_run = [&](std::size_t first, std::size_t last) {
        if (last - first < 2)
            return;
        MergeGroup g;
        g.first = first;
        g.last = last;
        g.merged_interval = track.captions[first].interval();
        for (std::size_t k = first; k < last; ++k) {
            g.merged_interval.start_s = std::min(g.merged_interval.start_s, track.captions[k].start_s);
            g.merged_interval.end_s = std::max(g.merged_interval.end_s, track.captions[k].end_s);
        }
        groups.push_back(std::move(g));
    };

    std::size_t run_start = 0;
    for (std::size_t i = 1; i < track.size(); ++i) {
        bool const joins = i - run_start < cfg.max_merge_group && cosine(emb[i], emb[i - 1]) >= cfg.adjacency_threshold;
        if (!joins) {
            close_run(run_start, i);
            run_start = i;
        }
    }
    close_run(run_start, track.size());
    return groups;
}

/// Member texts with exact repeats removed, joined by "; ".
inline std::string concat_merge(CaptionTrack const& track, MergeGroup const& g)
{
    std::string out;
    std::set<std::string_view> seen;
    for (std::size_t k = g.first; k < g.last; ++k) {
        auto const& text = track.captions[k].text;
        if (!seen.insert(text).second)
            continue;
        if (!out.empty())
            out += "; ";
        out += text;
    }
    return out;
}

inline Prompt merge_prompt(CaptionTrack const& track, MergeGroup const& g)
{
    Prompt p;
    p.system_text = kMergeInstruction;
    p.user_text = "Captions:\n";
    for (std::size_t k = g.first; k < g.last; ++k)
        p.user_text += "- " + track.captions[k].text + "\n";
    p.user_text += "Reply with the merged caption only.";
    return p;
}

struct MergeOptions
{
    std::size_t in_flight = 1;
    RetryPolicy retry{};
    Sleeper sleep = real_sleeper();
};

struct MergeOutcome
{
    CaptionTrack track;
    std::vector<MergeGroup> groups;
    std::size_t fallbacks = 0;
};

/// Replaces each group by one caption over its interval hull. LLM failures, or an empty
/// reply, fall back to concatenation for that group only.
inline MergeOutcome merge_groups(CaptionTrack const& track, std::vector<MergeGroup> groups, LlmBackend* llm,
                                 DigestConfig const& cfg, MergeOptions const& opts = {}, Logger* log = nullptr)
{
    MergeOutcome out;
    std::vector<char> fell_back(groups.size(), 0);
    parallel_for(groups.size(), opts.in_flight, [&](std::size_t gi) {
        auto& g = groups[gi];
        if (g.first >= g.last || g.last > track.size())
            throw std::invalid_argument("merge_groups: group outside track");
        if (cfg.merge_mode == MergeMode::concat || llm == nullptr) {
            g.merged_text = concat_merge(track, g);
            return;
        }
        auto const prompt = merge_prompt(track, g);
        try {
            auto reply = with_retry(opts.retry, opts.sleep, [&] {
                return llm->complete({prompt.system_text, prompt.user_text, std::nullopt, 0});
            });
            reply = util::single_line(reply);
            if (reply.empty())
                throw BackendError("empty merge reply");
            g.merged_text = std::move(reply);
        } catch (std::exception const& e) {
            g.merged_text = concat_merge(track, g);
            fell_back[gi] = 1;
            if (log != nullptr)
                log->warn("digest", "merge fell back to concatenation",
                          {{"video_id", track.video_id}, {"group_start_s", g.merged_interval.start_s},
                           {"error", e.what()}});
        }
    });

    out.track = track;
    out.track.captions.clear();
    std::size_t next = 0;
    for (auto const& g : groups) {
        for (; next < g.first; ++next)
            out.track.captions.push_back(track.captions[next]);
        out.track.captions.push_back({track.video_id, g.merged_interval.start_s, g.merged_interval.end_s, g.merged_text});
        next = g.last;
    }
    for (; next < track.size(); ++next)
        out.track.captions.push_back(track.captions[next]);
    sort_captions(out.track.captions);
    for (char f : fell_back)
        out.fallbacks += static_cast<std::size_t>(f);
    out.groups = std::move(groups);
    return out;
}

struct DigestStats
{
    std::string video_id;
    std::size_t input = 0;
    std::size_t removed_uninformative = 0;
    std::size_t removed_irrelevant = 0;
    std::size_t groups_merged = 0;
    /// Captions absorbed into merges: sum over groups of (size - 1).
    std::size_t merged_away = 0;
    std::size_t merge_fallbacks = 0;
    std::size_t output = 0;
    bool relevance_skipped = false;

    [[nodiscard]] nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        j["video_id"] = video_id;
        j["input"] = input;
        j["removed_uninformative"] = removed_uninformative;
        j["removed_irrelevant"] = removed_irrelevant;
        j["groups_merged"] = groups_merged;
        j["merged_away"] = merged_away;
        j["merge_fallbacks"] = merge_fallbacks;
        j["output"] = output;
        j["relevance_skipped"] = relevance_skipped;
        return j;
    }
};

struct DigestResult
{
    CaptionTrack track;
    std::vector<MergeGroup> groups;
    DigestStats stats;
};

/// drop_uninformative -> filter_by_relevance -> group_consecutive -> merge_groups.
/// With no queries the relevance stage is skipped and a warning is logged.
inline DigestResult digest(CaptionTrack const& track, std::span<Query const> queries, EmbedderBackend& embedder,
                           LlmBackend* llm, DigestConfig const& cfg, MergeOptions const& opts = {},
                           Logger* log = nullptr)
{
    cfg.validate();
    DigestResult r;
    r.stats.video_id = track.video_id;
    r.stats.input = track.size();

    auto informative = drop_uninformative(track, cfg, log);
    auto const informative_count = informative.size();
    r.stats.removed_uninformative = track.size() - informative_count;

    CaptionTrack relevant;
    if (queries.empty()) {
        relevant = std::move(informative);
        r.stats.relevance_skipped = true;
        if (log != nullptr && cfg.relevance_threshold > -1.0)
            log->warn("digest", "no queries for video; relevance filter skipped", {{"video_id", track.video_id}});
    } else {
        relevant = filter_by_relevance(informative, queries, embedder, cfg);
    }
    r.stats.removed_irrelevant = informative_count - relevant.size();

    auto groups = group_consecutive(relevant, embedder, cfg);
    auto merged = merge_groups(relevant, std::move(groups), llm, cfg, opts, log);
    r.stats.groups_merged = merged.groups.size();
    for (auto const& g : merged.groups)
        r.stats.merged_away += g.size() - 1;
    r.stats.merge_fallbacks = merged.fallbacks;
    r.stats.output = merged.track.size();
    r.track = std::move(merged.track);
    r.groups = std::move(merged.groups);
    return r;
}

} // namespace egoqa
