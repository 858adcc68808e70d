#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "egoqa/answer.hpp"
#include "egoqa/corpus.hpp"
#include "egoqa/digest.hpp"
#include "egoqa/log.hpp"
#include "egoqa/metrics.hpp"
#include "egoqa/similarity.hpp"

namespace egoqa {

struct RefineConfig
{
    /// Seconds added on each side of a candidate before selection.
    double pad_alpha = 10.0;
    double jitter_shift_max = 30.0;
    double jitter_scale_low = 0.5;
    double jitter_scale_high = 2.0;
    double pos_iou = 0.5;
    double neg_iou = 0.1;
    /// Positives drawn per ground-truth window; the negative quota matches it.
    std::size_t positives_per_gt = 4;
    std::size_t attempt_budget = 10000;

    void validate() const
    {
        if (!(pad_alpha >= 0.0) || !std::isfinite(pad_alpha))
            throw std::invalid_argument("refine.pad_alpha must be >= 0");
        if (!(jitter_shift_max >= 0.0) || !std::isfinite(jitter_shift_max))
            throw std::invalid_argument("refine.jitter_shift_max must be >= 0");
        if (!(jitter_scale_low > 0.0 && jitter_scale_low <= jitter_scale_high) || !std::isfinite(jitter_scale_high))
            throw std::invalid_argument("refine jitter scale range must satisfy 0 < low <= high");
        if (!(neg_iou >= 0.0 && neg_iou < pos_iou && pos_iou <= 1.0))
            throw std::invalid_argument("refine thresholds must satisfy 0 <= neg_iou < pos_iou <= 1");
        if (positives_per_gt == 0 || attempt_budget == 0)
            throw std::invalid_argument("refine.positives_per_gt and refine.attempt_budget must be positive");
    }
};

/// (max(start - alpha, s), min(end + alpha, e)) for clip bounds (s, e).
inline Interval pad_interval(Interval const& c, double alpha, Interval const& bounds)
{
    if (!(alpha >= 0.0))
        throw std::invalid_argument("pad_interval: alpha must be >= 0");
    if (!bounds.valid())
        throw std::invalid_argument("pad_interval: invalid clip bounds");
    Interval out{std::max(c.start_s - alpha, bounds.start_s), std::min(c.end_s + alpha, bounds.end_s)};
    if (!out.valid())
        throw std::invalid_argument("pad_interval: padded interval is empty");
    return out;
}

struct ScoreRequest
{
    std::string qid;
    std::string query_text;
    std::size_t candidate_index = 0;
    Interval window;
};

/// Scores a padded candidate window for a query; larger is better.
class CandidateScorer
{
public:
    virtual ~CandidateScorer() = default;
    virtual double score(ScoreRequest const& request, CaptionTrack const& track) = 0;
};

/// Total time that query-relevant captions cover inside the window.
class CaptionOverlapScorer final : public CandidateScorer
{
public:
    CaptionOverlapScorer(EmbedderBackend& embedder, double relevance_threshold)
        : embedder_(embedder), threshold_(relevance_threshold)
    {
    }

    double score(ScoreRequest const& request, CaptionTrack const& track) override
    {
        if (track.empty())
            return 0.0;
        Query q;
        q.qid = request.qid;
        q.video_id = track.video_id;
        q.kind = QueryKind::nlq;
        q.text = request.query_text;
        DigestConfig cfg;
        cfg.relevance_threshold = threshold_;
        auto const relevant = filter_by_relevance(track, std::span<Query const>(&q, 1), embedder_, cfg);
        double total = 0.0;
        for (auto const& c : relevant.captions)
            total += intersection_length(c.interval(), request.window);
        return total;
    }

private:
    EmbedderBackend& embedder_;
    double threshold_;
};

/// Recorded scores keyed by (qid, candidate index).
class ReplayScorer final : public CandidateScorer
{
public:
    using Table = std::map<std::pair<std::string, std::size_t>, double>;

    explicit ReplayScorer(Table scores) : scores_(std::move(scores)) {}

    double score(ScoreRequest const& request, CaptionTrack const&) override
    {
        auto it = scores_.find({request.qid, request.candidate_index});
        if (it == scores_.end())
            throw std::out_of_range("no recorded score for " + request.qid + "#" + std::to_string(request.candidate_index));
        return it->second;
    }

private:
    Table scores_;
};

struct Selection
{
    Interval window;
    bool used_full_clip = false;
    bool scorer_failed = false;
};

/// NA -> whole clip; one candidate -> padded; several -> padded argmax score, ties to the
/// earliest start. A scorer failure falls back to the earliest candidate.
inline Selection select_candidate(LlmAnswer const& answer, Query const& query, CaptionTrack const& track,
                                  CandidateScorer& scorer, RefineConfig const& cfg, Logger* log = nullptr)
{
    if (answer.kind != QueryKind::nlq)
        throw std::invalid_argument("select_candidate: answer " + answer.qid + " is not NLQ");
    auto const bounds = track.bounds();
    Selection sel;

    std::vector<std::pair<std::size_t, Interval>> padded;
    for (std::size_t i = 0; i < answer.intervals.size(); ++i) {
        auto const& c = answer.intervals[i];
        if (intersection_length(c, bounds) <= 0.0)
            continue;
        padded.emplace_back(i, pad_interval(c, cfg.pad_alpha, bounds));
    }
    if (padded.empty()) {
        sel.window = bounds;
        sel.used_full_clip = true;
        return sel;
    }
    auto const earliest = [&] {
        return std::min_element(padded.begin(), padded.end(), [](auto const& a, auto const& b) {
                   return std::tie(a.second.start_s, a.first) < std::tie(b.second.start_s, b.first);
               })->second;
    };
    if (padded.size() == 1) {
        sel.window = padded.front().second;
        return sel;
    }

    try {
        std::optional<std::pair<double, Interval>> best;
        for (auto const& [idx, w] : padded) {
            double s = scorer.score({answer.qid, query.text, idx, w}, track);
            if (!std::isfinite(s))
                throw std::runtime_error("non-finite score");
            if (!best || s > best->first || (s == best->first && w.start_s < best->second.start_s))
                best = {s, w};
        }
        sel.window = best->second;
    } catch (std::exception const& e) {
        sel.window = earliest();
        sel.scorer_failed = true;
        if (log != nullptr)
            log->warn("refine", "scorer failed; using earliest candidate", {{"qid", answer.qid}, {"error", e.what()}});
    }
    return sel;
}

enum class SampleLabel { pos, neg };

struct RefinementSample
{
    std::string qid;
    Interval interval;
    SampleLabel label = SampleLabel::neg;
    double iou_to_gt = 0.0;

    friend bool operator==(RefinementSample const&, RefinementSample const&) = default;
};

struct GroundTruth
{
    std::string qid;
    Interval window;
    Interval bounds;
};

/// Strict thresholds: IoU above pos_iou is positive, below neg_iou negative, else neither.
inline std::optional<SampleLabel> label_for(double iou_value, RefineConfig const& cfg)
{
    if (iou_value > cfg.pos_iou)
        return SampleLabel::pos;
    if (iou_value < cfg.neg_iou)
        return SampleLabel::neg;
    return std::nullopt;
}

/// Jittered copies of each gt window (uniform centre shift, uniform duration scale, clamped
/// to bounds), labelled by IoU. Each gt yields positives_per_gt positives and as many
/// negatives; windows between the thresholds are discarded. The generator for a gt is
/// seeded with util::derive_seed(seed, qid), so output does not depend on gt order.
inline std::vector<RefinementSample> gen_refinement_dataset(std::span<GroundTruth const> gts, RefineConfig const& cfg,
                                                            std::uint64_t seed)
{
    cfg.validate();
    std::vector<RefinementSample> out;
    for (auto const& gt : gts) {
        if (!gt.bounds.valid() || !gt.window.valid() || !gt.bounds.contains(gt.window))
            throw std::invalid_argument("gen_refinement_dataset: gt window of " + gt.qid + " outside its bounds");
        std::mt19937_64 rng(util::derive_seed(seed, gt.qid));
        std::uniform_real_distribution<double> shift(-cfg.jitter_shift_max, cfg.jitter_shift_max);
        std::uniform_real_distribution<double> scale(cfg.jitter_scale_low, cfg.jitter_scale_high);

        std::vector<RefinementSample> pos, neg;
        std::size_t attempts = 0;
        while (pos.size() < cfg.positives_per_gt || neg.size() < cfg.positives_per_gt) {
            if (attempts++ >= cfg.attempt_budget)
                throw std::runtime_error("gen_refinement_dataset: attempt budget exhausted for " + gt.qid);
            double const centre = (gt.window.start_s + gt.window.end_s) / 2.0 + shift(rng);
            double const half = gt.window.width() * scale(rng) / 2.0;
            Interval w{round_to_ms(std::max(centre - half, gt.bounds.start_s)),
                       round_to_ms(std::min(centre + half, gt.bounds.end_s))};
            if (!w.valid())
                continue;
            double const v = iou(w, gt.window);
            auto const label = label_for(v, cfg);
            if (label == SampleLabel::pos && pos.size() < cfg.positives_per_gt)
                pos.push_back({gt.qid, w, SampleLabel::pos, v});
            else if (label == SampleLabel::neg && neg.size() < cfg.positives_per_gt)
                neg.push_back({gt.qid, w, SampleLabel::neg, v});
        }
        for (auto* part : {&pos, &neg}) {
            for (auto& s : *part) {
                if (label_for(iou(s.interval, gt.window), cfg) != s.label)
                    throw std::logic_error("refinement sample label does not re-derive for " + gt.qid);
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

inline void write_refinement_dataset(std::ostream& os, std::span<RefinementSample const> samples)
{
    for (auto const& s : samples) {
        nlohmann::ordered_json j;
        j["qid"] = s.qid;
        j["start_s"] = s.interval.start_s;
        j["end_s"] = s.interval.end_s;
        j["label"] = s.label == SampleLabel::pos ? "pos" : "neg";
        j["iou"] = s.iou_to_gt;
        os << j.dump() << '\n';
    }
}

} // namespace egoqa
