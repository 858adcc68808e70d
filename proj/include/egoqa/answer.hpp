#pragma once

#include <optional>
#include <string>
#include <vector>

#include "egoqa/corpus.hpp"
#include "egoqa/interval.hpp"

namespace egoqa {

inline constexpr int kMinConfidence = 1;
inline constexpr int kMaxConfidence = 3;

/// Parsed model output for one query.
struct LlmAnswer
{
    std::string qid;
    QueryKind kind = QueryKind::qa;
    /// QA: chosen option, 0-based. Empty only when the model gave no usable answer.
    std::optional<int> choice_idx;
    /// NLQ: candidate windows, most likely first. Empty means NA.
    std::vector<Interval> intervals;
    std::string explanation;
    int confidence = kMinConfidence;
    std::string raw_text;

    [[nodiscard]] bool is_na() const noexcept { return kind == QueryKind::nlq && intervals.empty(); }

    friend bool operator==(LlmAnswer const&, LlmAnswer const&) = default;
};

inline std::optional<int> letter_to_index(char c)
{
    if (c >= 'a' && c <= 'e')
        return c - 'a';
    if (c >= 'A' && c <= 'E')
        return c - 'A';
    return std::nullopt;
}

inline char index_to_letter(int idx)
{
    if (idx < 0 || idx >= static_cast<int>(kChoiceCount))
        throw std::out_of_range("choice index out of range");
    return static_cast<char>('A' + idx);
}

} // namespace egoqa
