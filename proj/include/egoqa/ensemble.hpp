#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "egoqa/answer.hpp"

namespace egoqa {

/// Answers to one QA question collected over repeated runs.
class AnswerPool
{
public:
    explicit AnswerPool(std::vector<LlmAnswer> answers) : answers_(std::move(answers))
    {
        if (answers_.empty())
            throw std::invalid_argument("AnswerPool: empty pool");
        for (auto const& a : answers_) {
            if (a.qid != answers_.front().qid)
                throw std::invalid_argument("AnswerPool: mixed qids");
            if (a.kind != QueryKind::qa)
                throw std::invalid_argument("AnswerPool: non-QA answer");
        }
    }

    [[nodiscard]] std::string const& qid() const noexcept { return answers_.front().qid; }
    [[nodiscard]] std::span<LlmAnswer const> answers() const noexcept { return answers_; }

private:
    std::vector<LlmAnswer> answers_;
};

/// Returns an answer of maximal confidence; ties are broken uniformly using rng_seed.
inline LlmAnswer vote_by_confidence(AnswerPool const& pool, std::uint64_t rng_seed)
{
    auto const answers = pool.answers();
    int top = kMinConfidence - 1;
    for (auto const& a : answers)
        top = std::max(top, a.confidence);
    std::vector<std::size_t> best;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        if (answers[i].confidence == top)
            best.push_back(i);
    }
    if (best.size() == 1)
        return answers[best.front()];
    std::mt19937_64 rng(rng_seed);
    std::uniform_int_distribution<std::size_t> pick(0, best.size() - 1);
    return answers[best[pick(rng)]];
}

inline std::vector<LlmAnswer> filter_by_confidence(std::span<LlmAnswer const> answers, int min_level)
{
    if (min_level < kMinConfidence || min_level > kMaxConfidence)
        throw std::invalid_argument("filter_by_confidence: level must be 1..3");
    std::vector<LlmAnswer> out;
    std::copy_if(answers.begin(), answers.end(), std::back_inserter(out),
                 [min_level](LlmAnswer const& a) { return a.confidence >= min_level; });
    return out;
}

} // namespace egoqa
