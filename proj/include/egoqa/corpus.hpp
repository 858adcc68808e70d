#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "egoqa/interval.hpp"
#include "egoqa/util.hpp"

namespace egoqa {

/// One timestamped description of a short clip.
struct Caption
{
    std::string video_id;
    double start_s = 0.0;
    double end_s = 0.0;
    std::string text;

    [[nodiscard]] Interval interval() const noexcept { return {start_s, end_s}; }

    friend bool operator==(Caption const&, Caption const&) = default;
};

/// Time-ordered captions of one video plus the clip bounds (s, e).
struct CaptionTrack
{
    std::string video_id;
    double clip_start_s = 0.0;
    double clip_end_s = 0.0;
    std::vector<Caption> captions;

    [[nodiscard]] Interval bounds() const noexcept { return {clip_start_s, clip_end_s}; }
    [[nodiscard]] std::size_t size() const noexcept { return captions.size(); }
    [[nodiscard]] bool empty() const noexcept { return captions.empty(); }

    friend bool operator==(CaptionTrack const&, CaptionTrack const&) = default;
};

using TrackMap = std::map<std::string, CaptionTrack>;

enum class QueryKind { qa, nlq };

inline constexpr std::size_t kChoiceCount = 5;

struct Query
{
    std::string qid;
    std::string video_id;
    QueryKind kind = QueryKind::qa;
    std::string text;
    std::vector<std::string> choices;
    std::optional<int> gt_answer_idx;
    std::optional<Interval> gt_window;

    friend bool operator==(Query const&, Query const&) = default;
};

/// Stable order: start, then end, then original position.
inline void sort_captions(std::vector<Caption>& captions)
{
    std::stable_sort(captions.begin(), captions.end(), [](Caption const& a, Caption const& b) {
        return std::tie(a.start_s, a.end_s) < std::tie(b.start_s, b.end_s);
    });
}

struct CaptionLoad
{
    TrackMap tracks;
    std::size_t records = 0;
    std::size_t duplicates_dropped = 0;
};

namespace detail {

inline double read_seconds(nlohmann::json const& rec, char const* key, std::size_t line)
{
    auto it = rec.find(key);
    if (it == rec.end() || !it->is_number())
        throw DataError(std::string("missing or non-numeric \"") + key + "\" at line " + std::to_string(line));
    double v = it->get<double>();
    if (!std::isfinite(v) || v < 0.0)
        throw DataError(std::string("invalid \"") + key + "\" at line " + std::to_string(line));
    return round_to_ms(v);
}

inline std::string read_string(nlohmann::json const& rec, char const* key, std::size_t line)
{
    auto it = rec.find(key);
    if (it == rec.end() || !it->is_string())
        throw DataError(std::string("missing or non-string \"") + key + "\" at line " + std::to_string(line));
    return it->get<std::string>();
}

inline nlohmann::json parse_record(std::string const& text, std::size_t line)
{
    nlohmann::json rec;
    try {
        rec = nlohmann::json::parse(text);
    } catch (nlohmann::json::parse_error const& e) {
        throw DataError("malformed record at line " + std::to_string(line) + ": " + e.what());
    }
    if (!rec.is_object())
        throw DataError("record at line " + std::to_string(line) + " is not an object");
    return rec;
}

} // namespace detail

/// Parses a captions stream: caption records and optional per-video bounds records.
inline CaptionLoad parse_captions(std::istream& in)
{
    std::map<std::string, std::vector<std::pair<Caption, std::size_t>>> grouped;
    std::map<std::string, Interval> explicit_bounds;
    std::set<std::tuple<std::string, double, double, std::string>> seen;
    CaptionLoad out;

    util::for_each_line(in, [&](std::string const& text, std::size_t line) {
        auto rec = detail::parse_record(text, line);
        ++out.records;
        auto video = detail::read_string(rec, "video_id", line);
        if (video.empty())
            throw DataError("empty video_id at line " + std::to_string(line));

        if (rec.contains("clip_start_s") || rec.contains("clip_end_s")) {
            Interval b{detail::read_seconds(rec, "clip_start_s", line), detail::read_seconds(rec, "clip_end_s", line)};
            if (!b.valid())
                throw DataError("inverted clip bounds at line " + std::to_string(line));
            auto [it, inserted] = explicit_bounds.emplace(video, b);
            if (!inserted && it->second != b)
                throw DataError("conflicting clip bounds for " + video + " at line " + std::to_string(line));
            grouped[video];
            return;
        }

        Caption c;
        c.video_id = video;
        c.start_s = detail::read_seconds(rec, "start_s", line);
        c.end_s = detail::read_seconds(rec, "end_s", line);
        c.text = util::single_line(detail::read_string(rec, "text", line));
        if (!(c.start_s < c.end_s))
            throw DataError("inverted interval at line " + std::to_string(line));
        if (c.text.empty())
            throw DataError("empty text at line " + std::to_string(line));
        if (!seen.emplace(c.video_id, c.start_s, c.end_s, c.text).second) {
            ++out.duplicates_dropped;
            return;
        }
        grouped[video].emplace_back(std::move(c), line);
    });

    for (auto& [video, entries] : grouped) {
        CaptionTrack track;
        track.video_id = video;
        std::vector<Caption> captions;
        captions.reserve(entries.size());
        auto const b = explicit_bounds.find(video);
        for (auto& [c, line] : entries) {
            if (b != explicit_bounds.end() && !b->second.contains(c.interval()))
                throw DataError("caption outside clip bounds at line " + std::to_string(line));
            captions.push_back(std::move(c));
        }
        sort_captions(captions);
        if (b != explicit_bounds.end()) {
            track.clip_start_s = b->second.start_s;
            track.clip_end_s = b->second.end_s;
        } else {
            track.clip_start_s = captions.front().start_s;
            track.clip_end_s = captions.front().end_s;
            for (auto const& c : captions) {
                track.clip_start_s = std::min(track.clip_start_s, c.start_s);
                track.clip_end_s = std::max(track.clip_end_s, c.end_s);
            }
        }
        track.captions = std::move(captions);
        out.tracks.emplace(video, std::move(track));
    }
    return out;
}

inline CaptionLoad load_captions(std::string const& path)
{
    auto in = util::open_input(path);
    return parse_captions(in);
}

/// Canonical serialization: per video, one bounds record followed by its captions in order.
/// Reloading the output reproduces the same tracks.
inline void write_captions(std::ostream& os, TrackMap const& tracks)
{
    for (auto const& [video, track] : tracks) {
        nlohmann::ordered_json b;
        b["video_id"] = video;
        b["clip_start_s"] = track.clip_start_s;
        b["clip_end_s"] = track.clip_end_s;
        os << b.dump() << '\n';
        for (auto const& c : track.captions) {
            nlohmann::ordered_json r;
            r["video_id"] = c.video_id;
            r["start_s"] = c.start_s;
            r["end_s"] = c.end_s;
            r["text"] = c.text;
            os << r.dump() << '\n';
        }
    }
}

inline std::vector<Query> parse_queries(std::istream& in)
{
    std::vector<Query> out;
    std::set<std::string> qids;
    util::for_each_line(in, [&](std::string const& text, std::size_t line) {
        auto rec = detail::parse_record(text, line);
        auto const at = " at line " + std::to_string(line);
        Query q;
        q.qid = detail::read_string(rec, "qid", line);
        q.video_id = detail::read_string(rec, "video_id", line);
        auto kind = detail::read_string(rec, "kind", line);
        if (!qids.insert(q.qid).second)
            throw DataError("duplicate qid " + q.qid + at);

        if (kind == "qa") {
            q.kind = QueryKind::qa;
            q.text = util::single_line(detail::read_string(rec, "question", line));
            auto ch = rec.find("choices");
            if (ch == rec.end() || !ch->is_array() || ch->size() != kChoiceCount)
                throw DataError("expected 5 choices" + at);
            for (auto const& c : *ch) {
                if (!c.is_string())
                    throw DataError("non-string choice" + at);
                q.choices.push_back(util::single_line(c.get<std::string>()));
            }
            if (auto a = rec.find("answer_idx"); a != rec.end() && !a->is_null()) {
                if (!a->is_number_integer() || a->get<long long>() < 0
                    || a->get<long long>() >= static_cast<long long>(kChoiceCount))
                    throw DataError("answer_idx out of range" + at);
                q.gt_answer_idx = a->get<int>();
            }
        } else if (kind == "nlq") {
            q.kind = QueryKind::nlq;
            q.text = util::single_line(detail::read_string(rec, "query", line));
            if (rec.contains("choices"))
                throw DataError("NLQ record with choices" + at);
            if (auto g = rec.find("gt"); g != rec.end() && !g->is_null()) {
                if (!g->is_array() || g->size() != 2 || !(*g)[0].is_number() || !(*g)[1].is_number())
                    throw DataError("gt must be [start, end]" + at);
                Interval w{round_to_ms((*g)[0].get<double>()), round_to_ms((*g)[1].get<double>())};
                if (!w.valid() || w.start_s < 0.0)
                    throw DataError("inverted gt window" + at);
                q.gt_window = w;
            }
        } else {
            throw DataError("unknown kind \"" + kind + "\"" + at);
        }
        if (q.text.empty())
            throw DataError("empty query text" + at);
        out.push_back(std::move(q));
    });
    return out;
}

inline std::vector<Query> load_queries(std::string const& path)
{
    auto in = util::open_input(path);
    return parse_queries(in);
}

/// Every query must reference a known track, and its gt window must lie within the clip bounds.
inline void check_queries_against_tracks(std::vector<Query> const& queries, TrackMap const& tracks)
{
    for (auto const& q : queries) {
        auto it = tracks.find(q.video_id);
        if (it == tracks.end())
            throw DataError("query " + q.qid + " references unknown video " + q.video_id);
        if (q.gt_window && !it->second.bounds().contains(*q.gt_window))
            throw DataError("gt window of " + q.qid + " lies outside clip bounds");
    }
}

} // namespace egoqa
