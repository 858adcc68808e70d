#include <random>

#include <gtest/gtest.h>

#include "egoqa/parse.hpp"
#include "egoqa/prompt.hpp"

using namespace egoqa;

namespace {

CaptionTrack track_of(std::size_t n)
{
    CaptionTrack t;
    t.video_id = "v";
    for (std::size_t i = 0; i < n; ++i)
        t.captions.push_back({"v", 2.0 * i, 2.0 * i + 2.0, "caption " + std::to_string(i)});
    t.clip_start_s = 0;
    t.clip_end_s = 2.0 * n;
    return t;
}

Query qa(std::vector<std::string> choices = {"a", "b", "c", "d", "e"})
{
    Query q;
    q.qid = "q1";
    q.video_id = "v";
    q.kind = QueryKind::qa;
    q.text = "What did C do?";
    q.choices = std::move(choices);
    return q;
}

Query nlq(std::string qid, std::string video = "v")
{
    Query q;
    q.qid = std::move(qid);
    q.video_id = std::move(video);
    q.kind = QueryKind::nlq;
    q.text = "Where is the mug?";
    return q;
}

std::size_t count(std::string const& hay, std::string const& needle)
{
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1))
        ++n;
    return n;
}

std::vector<std::string> const one_qid{"q1"};

} // namespace

TEST(QaPrompt, Structure)
{
    auto p = build_qa_prompt(track_of(2), qa());
    EXPECT_EQ(count(p.user_text, ": caption "), 2u);
    for (char l : std::string("ABCDE"))
        EXPECT_EQ(count(p.user_text, std::string("\n") + l + ". "), 1u);
    EXPECT_NE(p.user_text.find("0-2: caption 0\n2-4: caption 1\n"), std::string::npos);
    EXPECT_EQ(p.query_ids, one_qid);
    EXPECT_NE(p.system_text.find("most plausible"), std::string::npos);
    EXPECT_NE(p.system_text.find("confidence"), std::string::npos);
}

TEST(QaPrompt, NewlinesNormalized)
{
    auto p = build_qa_prompt(track_of(1), qa({"first\nline", "b", "c\r\nd", "d", "e"}));
    EXPECT_NE(p.user_text.find("A. first line\n"), std::string::npos);
    EXPECT_NE(p.user_text.find("C. c d\n"), std::string::npos);
}

TEST(QaPrompt, NinetyCaptionsNotTruncated)
{
    auto p = build_qa_prompt(track_of(90), qa());
    EXPECT_EQ(count(p.user_text, ": caption "), 90u);
}

TEST(QaPrompt, EmptyTrackMarker)
{
    auto p = build_qa_prompt(track_of(0), qa());
    EXPECT_NE(p.user_text.find(kNoCaptionsMarker), std::string::npos);
}

TEST(QaPrompt, Deterministic)
{
    auto a = build_qa_prompt(track_of(5), qa());
    auto b = build_qa_prompt(track_of(5), qa());
    EXPECT_EQ(a.system_text, b.system_text);
    EXPECT_EQ(a.user_text, b.user_text);
    EXPECT_EQ(prompt_digest(a), prompt_digest(b));
}

TEST(NlqPrompt, Batching)
{
    std::vector<Query> qs{nlq("a"), nlq("b"), nlq("c")};
    auto p = build_nlq_prompt(track_of(3), qs);
    EXPECT_EQ(p.query_ids.size(), 3u);
    EXPECT_NE(p.user_text.find("3. (qid c) Where is the mug?"), std::string::npos);
    EXPECT_NE(p.system_text.find("NA"), std::string::npos);

    std::vector<Query> single{nlq("a")};
    EXPECT_EQ(build_nlq_prompt(track_of(3), single).query_ids.size(), 1u);

    std::vector<Query> mixed{nlq("a"), nlq("b", "w")};
    try {
        build_nlq_prompt(track_of(3), mixed);
        FAIL();
    } catch (std::invalid_argument const& e) {
        EXPECT_NE(std::string(e.what()).find("mixed video_id"), std::string::npos);
    }
    EXPECT_THROW(build_nlq_prompt(track_of(3), {}), std::invalid_argument);
}

TEST(Run, ReplayInRunOrder)
{
    Prompt p{"sys", "user", {"q1"}};
    Transcripts t;
    for (int i = 0; i < 5; ++i)
        t[prompt_digest(p)][run_key(i)] = "response " + std::to_string(i);
    ReplayLlm replay(t);
    auto one = run(p, replay, 1, 7, {}, nullptr);
    ASSERT_EQ(one.responses.size(), 1u);
    EXPECT_EQ(one.responses[0].text, "response 0");
    auto five = run(p, replay, 5, 7, {}, nullptr);
    ASSERT_EQ(five.responses.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i)
        EXPECT_EQ(five.responses[i].text, "response " + std::to_string(i));
    EXPECT_THROW(run(p, replay, 0, 7), std::invalid_argument);
}

TEST(Run, PermanentFailureIsRecorded)
{
    Prompt p{"sys", "user", {"q1"}};
    std::vector<std::uint64_t> seeds;
    FunctionLlm llm([&](CompletionRequest const& r) {
        seeds.push_back(*r.seed);
        if (r.run_index == 2)
            throw TransportError("connection reset");
        return std::string("ok");
    });
    std::vector<std::chrono::milliseconds> slept;
    auto out = run(p, llm, 5, 11, {}, [&](std::chrono::milliseconds d) { slept.push_back(d); });
    EXPECT_EQ(out.responses.size(), 4u);
    ASSERT_EQ(out.failures.size(), 1u);
    EXPECT_EQ(out.failures[0].run_index, 2u);
    EXPECT_EQ(out.failures[0].attempts, 3);
    EXPECT_EQ(slept, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(1000), std::chrono::milliseconds(2000)}));
    // Seeds depend only on (seed, run index).
    EXPECT_EQ(seeds.front(), util::derive_seed(11, 0));
    EXPECT_EQ(seeds.back(), util::derive_seed(11, 4));
}

TEST(Run, TransientFailureRecovers)
{
    Prompt p{"sys", "user", {"q1"}};
    int calls = 0;
    FunctionLlm llm([&](CompletionRequest const&) {
        if (++calls == 1)
            throw TransportError("503");
        return std::string("ok");
    });
    auto out = run(p, llm, 1, 0, {}, nullptr);
    ASSERT_EQ(out.responses.size(), 1u);
    EXPECT_TRUE(out.failures.empty());
}

TEST(Retry, BackoffIsCapped)
{
    RetryPolicy r;
    EXPECT_EQ(r.delay_after(1).count(), 1000);
    EXPECT_EQ(r.delay_after(3).count(), 4000);
    EXPECT_EQ(r.delay_after(10).count(), 30000);
    int attempts = 0;
    EXPECT_THROW(with_retry(r, nullptr, []() -> int { throw BackendError("bad request"); }, &attempts), BackendError);
    EXPECT_EQ(attempts, 1);
}

TEST(Parse, NlqIntervalsAndConfidence)
{
    std::string raw = "Sure.\n```json\n[{\"qid\": \"q1\", \"intervals\": [[120,135],[300,312]], "
                      "\"explanation\": \"mug on shelf\", \"confidence\": 3}]\n```\nDone.";
    auto r = parse_response(raw, QueryKind::nlq, one_qid);
    ASSERT_EQ(r.answers.size(), 1u);
    auto const& a = r.answers[0];
    EXPECT_EQ(a.intervals, (std::vector<Interval>{{120, 135}, {300, 312}}));
    EXPECT_EQ(a.confidence, 3);
    EXPECT_TRUE(r.warnings.empty());
}

TEST(Parse, WasherRefusal)
{
    auto r = parse_response("NA \xe2\x80\x94 captions never mention the washer", QueryKind::nlq, one_qid);
    ASSERT_EQ(r.answers.size(), 1u);
    EXPECT_TRUE(r.answers[0].is_na());
    EXPECT_EQ(r.answers[0].confidence, 1);
    EXPECT_EQ(r.answers[0].explanation, "captions never mention the washer");

    auto structured = parse_response(R"([{"qid":"q1","intervals":"NA","explanation":"no washer","confidence":1}])",
                                     QueryKind::nlq, one_qid);
    EXPECT_TRUE(structured.answers[0].is_na());
}

TEST(Parse, QaLetter)
{
    auto r = parse_response(R"({"qid":"q1","answer":"C","explanation":"x","confidence":2})", QueryKind::qa, one_qid);
    EXPECT_EQ(r.answers[0].choice_idx, 2);
    EXPECT_EQ(parse_response(R"j([{"qid":"q1","answer":"Option (d)","confidence":2}])j", QueryKind::qa, one_qid)
                  .answers[0]
                  .choice_idx,
              3);
    EXPECT_FALSE(parse_response(R"([{"qid":"q1","answer":"Cat","confidence":2}])", QueryKind::qa, one_qid)
                     .answers[0]
                     .choice_idx);
}

TEST(Parse, ConfidenceDefaultsAndClamping)
{
    auto missing = parse_response(R"([{"qid":"q1","answer":"A","explanation":"x"}])", QueryKind::qa, one_qid);
    EXPECT_EQ(missing.answers[0].confidence, 1);
    EXPECT_FALSE(missing.warnings.empty());
    EXPECT_EQ(parse_response(R"([{"qid":"q1","answer":"A","confidence":"high"}])", QueryKind::qa, one_qid)
                  .answers[0]
                  .confidence,
              3);
    EXPECT_EQ(parse_response(R"([{"qid":"q1","answer":"A","confidence":"Medium"}])", QueryKind::qa, one_qid)
                  .answers[0]
                  .confidence,
              2);
    auto high = parse_response(R"([{"qid":"q1","answer":"A","confidence":7}])", QueryKind::qa, one_qid);
    EXPECT_EQ(high.answers[0].confidence, 3);
    EXPECT_FALSE(high.warnings.empty());
    EXPECT_EQ(parse_response(R"([{"qid":"q1","answer":"A","confidence":0}])", QueryKind::qa, one_qid)
                  .answers[0]
                  .confidence,
              1);
    EXPECT_EQ(parse_response(R"([{"qid":"q1","answer":"A","confidence":"very"}])", QueryKind::qa, one_qid)
                  .answers[0]
                  .confidence,
              1);
}

TEST(Parse, MissingExplanationIsEmpty)
{
    auto r = parse_response(R"([{"qid":"q1","answer":"B","confidence":2}])", QueryKind::qa, one_qid);
    EXPECT_EQ(r.answers[0].explanation, "");
    EXPECT_FALSE(r.warnings.empty());
}

TEST(Parse, AbsentQidBecomesNa)
{
    std::vector<std::string> qids{"a", "b"};
    auto r = parse_response(R"([{"qid":"a","intervals":[[1,2]],"explanation":"x","confidence":2}])", QueryKind::nlq, qids);
    ASSERT_EQ(r.answers.size(), 2u);
    EXPECT_EQ(r.answers[0].intervals.size(), 1u);
    EXPECT_TRUE(r.answers[1].is_na());
    EXPECT_EQ(r.answers[1].confidence, 1);
    EXPECT_FALSE(r.warnings.empty());
}

TEST(Parse, NoBlockThrowsWithRaw)
{
    try {
        parse_response("I cannot tell.", QueryKind::qa, one_qid);
        FAIL();
    } catch (ParseError const& e) {
        EXPECT_EQ(e.raw(), "I cannot tell.");
    }
}

TEST(Parse, ClampToBounds)
{
    LlmAnswer a;
    a.qid = "q";
    a.kind = QueryKind::nlq;
    a.intervals = {{-5, 10}, {50, 60}, {200, 300}};
    EXPECT_EQ(clamp_to_bounds(a, {0, 100}), 2u);
    EXPECT_EQ(a.intervals, (std::vector<Interval>{{0, 10}, {50, 60}}));
}

// Property: parse_response(format_reference(a)) == a for well-formed answers.
TEST(ParseProperty, RoundTrip)
{
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> t(0, 1000);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<LlmAnswer> answers;
        std::vector<std::string> qids;
        auto kind = trial % 2 == 0 ? QueryKind::qa : QueryKind::nlq;
        std::size_t n = 1 + rng() % 4;
        for (std::size_t i = 0; i < n; ++i) {
            LlmAnswer a;
            a.qid = "q" + std::to_string(i);
            a.kind = kind;
            a.confidence = 1 + static_cast<int>(rng() % 3);
            a.explanation = "because \"" + std::to_string(rng() % 100) + "\"";
            if (kind == QueryKind::qa) {
                a.choice_idx = static_cast<int>(rng() % 5);
            } else {
                std::size_t k = rng() % 4;
                for (std::size_t j = 0; j < k; ++j) {
                    double s = round_to_ms(t(rng));
                    a.intervals.push_back({s, s + 0.5 + round_to_ms(t(rng) / 10)});
                }
            }
            qids.push_back(a.qid);
            answers.push_back(a);
        }
        auto raw = format_reference(answers);
        auto parsed = parse_response(raw, kind, qids);
        ASSERT_EQ(parsed.answers.size(), answers.size());
        for (std::size_t i = 0; i < n; ++i) {
            auto got = parsed.answers[i];
            got.raw_text.clear();
            EXPECT_EQ(got, answers[i]) << raw;
        }
        EXPECT_TRUE(parsed.warnings.empty()) << raw;
    }
}
