#pragma once

#include <span>
#include <stdexcept>
#include <string>

#include "egoqa/corpus.hpp"
#include "egoqa/llm.hpp"

namespace egoqa {

inline constexpr char kChoiceLetters[] = {'A', 'B', 'C', 'D', 'E'};

inline constexpr char const* kNoCaptionsMarker = "(no captions available)";

inline constexpr char const* kQaSystemText = R"(You are given a caption log of a first-person video. The person wearing the camera is called "C". Each log line is a time range in seconds followed by a caption describing that moment.
Your task is to answer a multiple-choice question about the video.
Follow these steps:
1. Read the whole log and picture the scene it describes. Captions are short and lossy, so combine several lines and use context to infer what is not stated directly.
2. Choose exactly one answer from A, B, C, D, E. Never refuse: if you are unsure, pick the most plausible answer.
3. Explain your choice in one sentence.
4. Rate your confidence in the answer as 1 (low), 2 (medium) or 3 (high).
Reply with one fenced JSON block and nothing else, in this form:
```json
[{"qid": "<question id>", "answer": "<letter A-E>", "explanation": "<one sentence>", "confidence": <1, 2 or 3>}]
```)";

inline constexpr char const* kNlqSystemText = R"(You are given a caption log of a first-person video. The person wearing the camera is called "C". Each log line is a time range in seconds followed by a caption describing that moment.
Your task is to find, for each numbered query, the time windows of the video that answer it.
Follow these steps:
1. Read the whole log and picture the scene it describes. Captions are short and lossy, so combine several lines and use context to infer what is not stated directly.
2. For each query, list one or more candidate windows as [start, end] pairs in seconds, most likely first. Use the timestamps of the log.
3. If the log holds no useful information for a query, answer "NA" for it instead of guessing.
4. Explain each prediction in one sentence.
5. Rate your confidence in each prediction as 1 (low), 2 (medium) or 3 (high).
Reply with one fenced JSON block and nothing else, with one entry per query, in this form:
```json
[{"qid": "<query id>", "intervals": [[<start>, <end>], ...] or "NA", "explanation": "<one sentence>", "confidence": <1, 2 or 3>}]
```)";

/// "start-end: text" lines in time order, or the empty-log marker.
inline std::string caption_log(CaptionTrack const& track)
{
    std::string out = "Captions:\n";
    if (track.empty())
        return out + kNoCaptionsMarker + "\n";
    for (auto const& c : track.captions)
        out += format_seconds(c.start_s) + "-" + format_seconds(c.end_s) + ": " + util::single_line(c.text) + "\n";
    return out;
}

inline Prompt build_qa_prompt(CaptionTrack const& track, Query const& query)
{
    if (query.kind != QueryKind::qa)
        throw std::invalid_argument("build_qa_prompt: query " + query.qid + " is not QA");
    if (query.choices.size() != kChoiceCount)
        throw std::invalid_argument("build_qa_prompt: query " + query.qid + " needs 5 choices");
    Prompt p;
    p.system_text = kQaSystemText;
    p.user_text = caption_log(track);
    p.user_text += "\nQuestion (qid " + util::single_line(query.qid) + "): " + util::single_line(query.text) + "\n";
    p.user_text += "Choices:\n";
    for (std::size_t i = 0; i < kChoiceCount; ++i)
        p.user_text += std::string(1, kChoiceLetters[i]) + ". " + util::single_line(query.choices[i]) + "\n";
    p.query_ids = {query.qid};
    return p;
}

/// One prompt for every NLQ query of a video, so the caption log is sent once.
inline Prompt build_nlq_prompt(CaptionTrack const& track, std::span<Query const> queries)
{
    if (queries.empty())
        throw std::invalid_argument("build_nlq_prompt: empty query list");
    Prompt p;
    p.system_text = kNlqSystemText;
    p.user_text = "Queries:\n";
    for (std::size_t i = 0; i < queries.size(); ++i) {
        auto const& q = queries[i];
        if (q.kind != QueryKind::nlq)
            throw std::invalid_argument("build_nlq_prompt: query " + q.qid + " is not NLQ");
        if (q.video_id != track.video_id)
            throw std::invalid_argument("build_nlq_prompt: mixed video_id (" + q.video_id + " vs " + track.video_id + ")");
        p.user_text += std::to_string(i + 1) + ". (qid " + util::single_line(q.qid) + ") " + util::single_line(q.text) + "\n";
        p.query_ids.push_back(q.qid);
    }
    p.user_text += "\n" + caption_log(track);
    return p;
}

} // namespace egoqa
