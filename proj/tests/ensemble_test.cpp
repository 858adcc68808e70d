#include <random>

#include <gtest/gtest.h>

#include "egoqa/ensemble.hpp"

using namespace egoqa;

namespace {

LlmAnswer ans(int choice, int confidence, std::string qid = "q")
{
    LlmAnswer a;
    a.qid = std::move(qid);
    a.kind = QueryKind::qa;
    a.choice_idx = choice;
    a.confidence = confidence;
    a.explanation = "run " + std::to_string(choice) + "/" + std::to_string(confidence);
    return a;
}

} // namespace

TEST(Vote, HighestConfidenceWins)
{
    AnswerPool pool({ans(0, 2), ans(1, 3), ans(0, 1)});
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        EXPECT_EQ(vote_by_confidence(pool, seed), ans(1, 3));
}

TEST(Vote, Singleton)
{
    EXPECT_EQ(vote_by_confidence(AnswerPool({ans(3, 1)}), 99), ans(3, 1));
}

TEST(Vote, TwoWayTieSplitsEvenly)
{
    AnswerPool pool({ans(0, 3), ans(1, 3)});
    EXPECT_EQ(vote_by_confidence(pool, 5), vote_by_confidence(pool, 5));
    int first = 0;
    for (std::uint64_t seed = 0; seed < 10000; ++seed)
        first += vote_by_confidence(pool, seed).choice_idx == 0 ? 1 : 0;
    EXPECT_NEAR(first / 10000.0, 0.5, 0.02);
}

TEST(Vote, PoolValidation)
{
    EXPECT_THROW(AnswerPool({}), std::invalid_argument);
    EXPECT_THROW(AnswerPool({ans(0, 1, "a"), ans(0, 1, "b")}), std::invalid_argument);
    auto nlq = ans(0, 1);
    nlq.kind = QueryKind::nlq;
    EXPECT_THROW(AnswerPool({nlq}), std::invalid_argument);
}

// Property: the winner always carries the pool maximum and is one of the pool members.
TEST(VoteProperty, RandomPools)
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<LlmAnswer> v;
        std::size_t n = 1 + rng() % 7;
        int top = 0;
        for (std::size_t i = 0; i < n; ++i) {
            v.push_back(ans(static_cast<int>(rng() % 5), 1 + static_cast<int>(rng() % 3)));
            top = std::max(top, v.back().confidence);
        }
        AnswerPool pool(v);
        auto w = vote_by_confidence(pool, rng());
        EXPECT_EQ(w.confidence, top);
        EXPECT_NE(std::find(v.begin(), v.end(), w), v.end());
    }
}

TEST(Filter, Levels)
{
    std::vector<LlmAnswer> v{ans(0, 1), ans(1, 2), ans(2, 3), ans(3, 3)};
    EXPECT_EQ(filter_by_confidence(v, 1), v);
    auto top = filter_by_confidence(v, 3);
    ASSERT_EQ(top.size(), 2u);
    EXPECT_EQ(top[0], ans(2, 3));
    EXPECT_EQ(top[1], ans(3, 3));
    EXPECT_EQ(filter_by_confidence(v, 2).size(), 3u);
    EXPECT_THROW(filter_by_confidence(v, 0), std::invalid_argument);
    EXPECT_THROW(filter_by_confidence(v, 4), std::invalid_argument);
}
