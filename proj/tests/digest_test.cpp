#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "egoqa/digest.hpp"
#include "oracles.hpp"

using namespace egoqa;

namespace {

CaptionTrack make_track(std::vector<std::string> const& texts, double step = 2.0)
{
    CaptionTrack t;
    t.video_id = "v";
    for (std::size_t i = 0; i < texts.size(); ++i)
        t.captions.push_back({"v", step * i, step * i + step, texts[i]});
    t.clip_start_s = 0;
    t.clip_end_s = step * texts.size();
    return t;
}

std::vector<std::string> texts_of(CaptionTrack const& t)
{
    std::vector<std::string> out;
    for (auto const& c : t.captions)
        out.push_back(c.text);
    return out;
}

struct Fixture
{
    CaptionTrack track;
    std::vector<Query> queries;
};

Fixture load_fixture()
{
    Fixture f;
    f.track = load_captions(std::string(EGOQA_FIXTURES) + "/digest_captions.jsonl").tracks.at("kitchen_01");
    f.queries = load_queries(std::string(EGOQA_FIXTURES) + "/digest_queries.jsonl");
    return f;
}

Query nlq(std::string text)
{
    Query q;
    q.qid = "q";
    q.video_id = "v";
    q.kind = QueryKind::nlq;
    q.text = std::move(text);
    return q;
}

} // namespace

TEST(DropUninformative, Blocklist)
{
    DigestConfig cfg;
    cfg.blocklist = {"looks around"};
    auto out = drop_uninformative(make_track({"C looks around the room", "C cuts an onion"}), cfg);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out.captions[0].text, "C cuts an onion");
    EXPECT_EQ(out.bounds(), (Interval{0, 4}));

    cfg.blocklist.clear();
    auto same = drop_uninformative(make_track({"C looks around the room", "C cuts an onion"}), cfg);
    EXPECT_EQ(same.size(), 2u);
}

TEST(DropUninformative, CaseInsensitive)
{
    DigestConfig cfg;
    auto out = drop_uninformative(make_track({"C Looks At The Camera", "C eats"}), cfg);
    EXPECT_EQ(texts_of(out), std::vector<std::string>{"C eats"});
}

TEST(FilterByRelevance, TrivialThresholds)
{
    MockEmbedder m;
    DigestConfig cfg;
    auto track = make_track({"C opens the fridge", "zebra xylophone quartz"});
    auto q = nlq("C opens the fridge");
    cfg.relevance_threshold = -1.0;
    EXPECT_EQ(filter_by_relevance(track, std::span(&q, 1), m, cfg).size(), 2u);
    cfg.relevance_threshold = 0.9;
    auto kept = filter_by_relevance(track, std::span(&q, 1), m, cfg);
    ASSERT_GE(kept.size(), 1u);
    EXPECT_EQ(kept.captions[0].text, "C opens the fridge");
    EXPECT_THROW(filter_by_relevance(track, {}, m, cfg), std::invalid_argument);
}

TEST(FilterByRelevance, MatchesBruteForceOracle)
{
    auto f = load_fixture();
    ASSERT_EQ(f.track.size(), 20u);
    ASSERT_EQ(f.queries.size(), 2u);
    MockEmbedder m;
    DigestConfig cfg;
    cfg.relevance_threshold = 0.35;
    auto kept = filter_by_relevance(f.track, f.queries, m, cfg);

    std::vector<std::string> qtexts;
    for (auto const& q : f.queries) {
        qtexts.push_back(q.text);
        for (auto const& c : q.choices)
            qtexts.push_back(c);
    }
    auto const expected = oracle::survivors(texts_of(f.track), qtexts, m, 0.35);
    std::vector<std::string> expected_texts;
    for (auto i : expected)
        expected_texts.push_back(f.track.captions[i].text);
    EXPECT_EQ(texts_of(kept), expected_texts);
    EXPECT_GT(kept.size(), 0u);
    EXPECT_LT(kept.size(), f.track.size());
}

TEST(GroupConsecutive, IdenticalTexts)
{
    MockEmbedder m;
    DigestConfig cfg;
    cfg.adjacency_threshold = 0.99;
    auto g = group_consecutive(make_track({"C stirs the pot", "C stirs the pot", "C stirs the pot"}), m, cfg);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_EQ(g[0].size(), 3u);

    cfg.max_merge_group = 3;
    auto capped = group_consecutive(make_track(std::vector<std::string>(5, "C stirs the pot")), m, cfg);
    ASSERT_EQ(capped.size(), 2u);
    EXPECT_EQ(capped[0].size(), 3u);
    EXPECT_EQ(capped[1].size(), 2u);
}

TEST(GroupConsecutive, AlternatingUnrelatedTexts)
{
    MockEmbedder m;
    DigestConfig cfg;
    cfg.adjacency_threshold = 0.9;
    std::vector<std::string> texts;
    for (int i = 0; i < 10; ++i)
        texts.push_back(i % 2 == 0 ? "C opens the fridge" : "zebra xylophone quartz");
    for (std::size_t i = 1; i < texts.size(); ++i)
        ASSERT_LT(oracle::cosine(m.embed_one(texts[i]), m.embed_one(texts[i - 1])), 0.9L);
    EXPECT_TRUE(group_consecutive(make_track(texts), m, cfg).empty());
}

TEST(GroupConsecutive, MatchesOracleOnRandomTracks)
{
    MockEmbedder m;
    std::mt19937_64 rng(3);
    std::vector<std::string> vocab{"C stirs the pot", "C stirs the pot slowly", "C cuts the onion", "C cuts the onion",
                                   "C walks", "C opens the door", "C opens the doors"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> texts;
        std::size_t n = 2 + rng() % 20;
        for (std::size_t i = 0; i < n; ++i)
            texts.push_back(vocab[rng() % vocab.size()]);
        DigestConfig cfg;
        cfg.adjacency_threshold = 0.5 + 0.1 * static_cast<double>(rng() % 5);
        cfg.max_merge_group = 2 + rng() % 4;
        auto got = group_consecutive(make_track(texts), m, cfg);
        auto want = oracle::groups(texts, m, cfg.adjacency_threshold, cfg.max_merge_group);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t k = 0; k < got.size(); ++k) {
            EXPECT_EQ(got[k].first, want[k].first);
            EXPECT_EQ(got[k].last, want[k].second);
        }
    }
}

TEST(MergeGroups, ConcatDedupAndHull)
{
    auto track = make_track({"C walks", "C stirs the pot", "C stirs the pot", "C sits"});
    MergeGroup g;
    g.first = 1;
    g.last = 3;
    g.merged_interval = {2, 6};
    DigestConfig cfg;
    cfg.merge_mode = MergeMode::concat;
    auto out = merge_groups(track, {g}, nullptr, cfg);
    ASSERT_EQ(out.track.size(), 3u);
    EXPECT_EQ(out.track.captions[1].text, "C stirs the pot");
    EXPECT_EQ(out.track.captions[1].interval(), (Interval{2, 6}));
    EXPECT_EQ(out.track.captions[0].text, "C walks");
    EXPECT_EQ(out.track.captions[2].text, "C sits");
}

TEST(MergeGroups, IntervalHullFromGrouping)
{
    CaptionTrack t;
    t.video_id = "v";
    t.captions = {{"v", 10, 12, "C stirs the pot"}, {"v", 12, 14, "C stirs the pot"}};
    t.clip_start_s = 10;
    t.clip_end_s = 14;
    MockEmbedder m;
    DigestConfig cfg;
    auto groups = group_consecutive(t, m, cfg);
    ASSERT_EQ(groups.size(), 1u);
    EXPECT_EQ(groups[0].merged_interval, (Interval{10, 14}));
}

TEST(MergeGroups, LlmPassthroughAndFallback)
{
    auto track = make_track({"C stirs the pot", "C stirs the soup"});
    MergeGroup g;
    g.first = 0;
    g.last = 2;
    g.merged_interval = {0, 4};
    DigestConfig cfg;
    std::string seen_system, seen_user;
    FunctionLlm ok([&](CompletionRequest const& r) {
        seen_system = r.system_text;
        seen_user = r.user_text;
        return std::string("C stirs the pot continuously");
    });
    auto out = merge_groups(track, {g}, &ok, cfg);
    ASSERT_EQ(out.track.size(), 1u);
    EXPECT_EQ(out.track.captions[0].text, "C stirs the pot continuously");
    EXPECT_EQ(out.fallbacks, 0u);
    EXPECT_EQ(seen_system, kMergeInstruction);
    EXPECT_NE(seen_user.find("- C stirs the soup\n"), std::string::npos);

    FunctionLlm broken([](CompletionRequest const&) -> std::string { throw BackendError("down"); });
    Logger log;
    auto fb = merge_groups(track, {g}, &broken, cfg, {}, &log);
    EXPECT_EQ(fb.track.captions[0].text, "C stirs the pot; C stirs the soup");
    EXPECT_EQ(fb.fallbacks, 1u);
    EXPECT_EQ(log.warnings(), 1u);

    FunctionLlm empty([](CompletionRequest const&) { return std::string("  \n"); });
    EXPECT_EQ(merge_groups(track, {g}, &empty, cfg).fallbacks, 1u);
}

TEST(Digest, IdentityConfigIsNoOp)
{
    auto f = load_fixture();
    MockEmbedder m;
    auto r = digest(f.track, f.queries, m, nullptr, DigestConfig::identity());
    TrackMap a{{"kitchen_01", f.track}}, b{{"kitchen_01", r.track}};
    std::ostringstream x, y;
    write_captions(x, a);
    write_captions(y, b);
    EXPECT_EQ(x.str(), y.str());
    EXPECT_EQ(r.stats.output, r.stats.input);
}

TEST(Digest, StatsAccountForEveryCaption)
{
    auto f = load_fixture();
    MockEmbedder m;
    DigestConfig cfg;
    cfg.merge_mode = MergeMode::concat;
    auto r = digest(f.track, f.queries, m, nullptr, cfg);
    auto const& s = r.stats;
    EXPECT_EQ(s.input, 20u);
    EXPECT_EQ(s.removed_uninformative, 2u);
    EXPECT_EQ(s.removed_uninformative + s.removed_irrelevant + s.merged_away, s.input - s.output);
    EXPECT_LE(s.output, s.input);
    EXPECT_EQ(r.track.size(), s.output);
}

TEST(Digest, NoQueriesSkipsRelevance)
{
    MockEmbedder m;
    Logger log;
    DigestConfig cfg;
    auto r = digest(make_track({"C eats", "zebra"}), {}, m, nullptr, cfg, {}, &log);
    EXPECT_TRUE(r.stats.relevance_skipped);
    EXPECT_EQ(r.stats.removed_irrelevant, 0u);
    EXPECT_EQ(log.warnings(), 1u);
}

// Properties: counts never grow, and every output caption is an input caption or the
// merge of a contiguous run, inside the input hull.
TEST(DigestProperty, OutputTraceableToInput)
{
    MockEmbedder m;
    std::mt19937_64 rng(9);
    std::vector<std::string> vocab{"C stirs the pot", "C stirs the pot slowly", "C cuts the onion", "C looks around",
                                   "C walks to the sink", "C opens the door", "C washes a cup"};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::string> texts;
        std::size_t n = 1 + rng() % 25;
        for (std::size_t i = 0; i < n; ++i)
            texts.push_back(vocab[rng() % vocab.size()]);
        auto track = make_track(texts);
        auto q = nlq(vocab[rng() % vocab.size()]);
        DigestConfig cfg;
        cfg.merge_mode = MergeMode::concat;
        cfg.relevance_threshold = -0.2 + 0.1 * static_cast<double>(rng() % 8);
        cfg.adjacency_threshold = 0.4 + 0.1 * static_cast<double>(rng() % 6);
        auto informative = drop_uninformative(track, cfg);
        auto relevant = filter_by_relevance(informative, std::span(&q, 1), m, cfg);
        auto r = digest(track, std::span(&q, 1), m, nullptr, cfg);
        EXPECT_LE(informative.size(), track.size());
        EXPECT_LE(relevant.size(), informative.size());
        EXPECT_LE(r.track.size(), relevant.size());
        for (auto const& c : r.track.captions) {
            EXPECT_TRUE(track.bounds().contains(c.interval()));
            bool found = std::find(texts.begin(), texts.end(), c.text) != texts.end();
            for (auto const& g : r.groups)
                found = found || (c.text == g.merged_text && c.interval() == g.merged_interval);
            EXPECT_TRUE(found) << c.text;
        }
    }
}
