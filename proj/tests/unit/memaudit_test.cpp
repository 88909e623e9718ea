#include "epb/errors.hpp"
#include "epb/memaudit.hpp"
#include "epb/numfmt.hpp"
#include "epb/rng.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace epb;
using epb::testing::SplitBuilder;

namespace {

TaskSchema geo_schema() {
    return TaskSchema("ner", Arity::one_span, Labeling::single_label, {"GPE", "LOC", "ORG", "PER"});
}

// Train {Google:ORG x2, Paris:LOC, Paris:GPE}; test Google/ORG, Paris/LOC, Obama/PER.
DatasetSplit example_split() {
    SplitBuilder b(geo_schema());
    b.train("Google", "ORG").train("Google", "ORG").train("Paris", "LOC").train("Paris", "GPE");
    b.test("Google", "ORG").test("Paris", "LOC").test("Obama", "PER");
    return b.build();
}

SpanKey key_of(const DatasetSplit& split, const LabeledExample& e) {
    return make_key(*split.sentences, e);
}

std::uint32_t idx(const TaskSchema& s, const char* label) { return *s.index_of(label); }

} // namespace

TEST(Index, CountsLabelsPerKey) {
    DatasetSplit split = example_split();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    EXPECT_EQ(index.size(), 2u);
    EXPECT_EQ(index.total_count(), 4u);
    const auto* google = index.find(SpanKey{"Google", std::nullopt});
    ASSERT_NE(google, nullptr);
    EXPECT_EQ(google->counts.size(), 1u);
    EXPECT_EQ(google->counts.at(LabelSet{idx(split.schema, "ORG")}), 2u);
    const auto* paris = index.find(SpanKey{"Paris", std::nullopt});
    ASSERT_NE(paris, nullptr);
    EXPECT_EQ(paris->counts.at(LabelSet{idx(split.schema, "LOC")}), 1u);
    EXPECT_EQ(paris->counts.at(LabelSet{idx(split.schema, "GPE")}), 1u);
}

TEST(Index, EmptyTrain) {
    SentenceStore store;
    auto index = MemorizationIndex::build({}, store);
    EXPECT_EQ(index.size(), 0u);
    EXPECT_EQ(index.total_count(), 0u);
}

TEST(Index, DanglingSentenceIdThrows) {
    SentenceStore store;
    LabeledExample e;
    e.sentence_id = 42;
    e.span1 = Span{0, 1};
    e.gold = {0};
    std::vector<LabeledExample> train{e};
    EXPECT_THROW(MemorizationIndex::build(train, store), DataError);
}

TEST(Index, TwoSpanKeysAreOrdered) {
    TaskSchema s("coref", Arity::two_span, Labeling::single_label, {"no", "yes"});
    SplitBuilder b(s);
    b.train_pair("he", "Obama", "yes").test_pair("Obama", "he", "yes").test_pair("he", "Obama", "yes");
    DatasetSplit split = b.build();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    const SpanKey reversed = key_of(split, split.test[0]);
    const SpanKey forward = key_of(split, split.test[1]);
    EXPECT_EQ(forward, (SpanKey{"he", std::string("Obama")}));
    EXPECT_NE(forward, reversed);
    EXPECT_EQ(index.find(reversed), nullptr);
    EXPECT_NE(index.find(forward), nullptr);
}

TEST(Index, MultiTokenSurfaceJoinedBySpace) {
    Sentence s{1, {"New", "York", "City"}};
    EXPECT_EQ(span_surface(s, Span{0, 2}), "New York");
    EXPECT_EQ(span_surface(s, Span{2, 3}), "City");
}

TEST(MemExact, PredictsUniqueLabelOrAbstains) {
    DatasetSplit split = example_split();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    auto google = mem_exact(index, key_of(split, split.test[0]), split.test[0].gold);
    EXPECT_TRUE(google.classifiable);
    EXPECT_EQ(*google.predicted, LabelSet{idx(split.schema, "ORG")});
    auto paris = mem_exact(index, key_of(split, split.test[1]), split.test[1].gold);
    EXPECT_TRUE(paris.abstained());
    EXPECT_FALSE(paris.classifiable);
    auto obama = mem_exact(index, key_of(split, split.test[2]), split.test[2].gold);
    EXPECT_TRUE(obama.abstained());
}

TEST(MemFreq, ArgmaxAndGoldProbability) {
    SplitBuilder b(geo_schema());
    b.train("Paris", "LOC").train("Paris", "LOC").train("Paris", "LOC").train("Paris", "GPE");
    b.test("Paris", "LOC");
    DatasetSplit split = b.build();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    auto p = mem_freq(index, key_of(split, split.test[0]), split.test[0].gold);
    EXPECT_TRUE(p.classifiable);
    EXPECT_DOUBLE_EQ(p.expected, 0.75);
}

TEST(MemFreq, TieGoesToCanonicalOrder) {
    SplitBuilder b(geo_schema()); // GPE precedes LOC
    b.train("Paris", "LOC").train("Paris", "GPE").test("Paris", "GPE");
    DatasetSplit split = b.build();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    auto p = mem_freq(index, key_of(split, split.test[0]), split.test[0].gold);
    EXPECT_EQ(*p.predicted, LabelSet{idx(split.schema, "GPE")});
    EXPECT_TRUE(p.classifiable);
}

TEST(MemFreq, UnseenAbstainsWithZeroProbability) {
    DatasetSplit split = example_split();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    auto p = mem_freq(index, key_of(split, split.test[2]), split.test[2].gold);
    EXPECT_TRUE(p.abstained());
    EXPECT_EQ(p.expected, 0.0);
}

TEST(MemUniform, ExpectedAccuracy) {
    DatasetSplit split = example_split();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    UniformOptions opt;
    opt.seed = 5;
    auto paris = mem_uniform(index, key_of(split, split.test[1]), split.test[1], opt);
    EXPECT_DOUBLE_EQ(paris.expected, 0.5);
    EXPECT_FALSE(paris.abstained());
    auto google = mem_uniform(index, key_of(split, split.test[0]), split.test[0], opt);
    EXPECT_DOUBLE_EQ(google.expected, 1.0);
    EXPECT_TRUE(google.classifiable);
    auto obama = mem_uniform(index, key_of(split, split.test[2]), split.test[2], opt);
    EXPECT_TRUE(obama.abstained());
    EXPECT_EQ(obama.expected, 0.0);
}

TEST(MemUniform, FullSpaceSamplesWholeVocabulary) {
    DatasetSplit split = example_split();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    UniformOptions opt;
    opt.space = UniformSpace::full;
    opt.full_space = uniform_label_space(split.schema, index);
    ASSERT_EQ(opt.full_space.size(), 4u);
    auto google = mem_uniform(index, key_of(split, split.test[0]), split.test[0], opt);
    EXPECT_DOUBLE_EQ(google.expected, 0.25);
}

TEST(MemUniform, MonteCarloMatchesExpectation) {
    SplitBuilder b(geo_schema());
    b.train("Paris", "LOC").train("Paris", "GPE").train("Rome", "LOC").train("Rome", "GPE").train(
        "Rome", "ORG");
    for (int i = 0; i < 10; ++i) b.test(i % 2 ? "Paris" : "Rome", "LOC");
    DatasetSplit split = b.build();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    double realized = 0.0, expected = 0.0;
    const int seeds = 2000;
    for (int seed = 0; seed < seeds; ++seed) {
        UniformOptions opt;
        opt.seed = static_cast<std::uint64_t>(seed);
        auto r = audit(index, split.test, *split.sentences, opt);
        realized += r.score(Heuristic::mem_uniform).accuracy();
        expected = r.score(Heuristic::mem_uniform).expected_accuracy();
    }
    EXPECT_NEAR(realized / seeds, expected, 1.0);
}

TEST(Audit, ThreePointExample) {
    DatasetSplit split = example_split();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    auto r = audit(index, split.test, *split.sentences, {});
    EXPECT_NEAR(r.score(Heuristic::mem_exact).accuracy(), 100.0 / 3.0, 1e-12);
    EXPECT_EQ(format_fixed(r.score(Heuristic::mem_exact).accuracy()), "33.33");
    EXPECT_NEAR(r.score(Heuristic::mem_exact).coverage(), 100.0 / 3.0, 1e-12);
    EXPECT_NEAR(r.score(Heuristic::mem_freq).coverage(), 200.0 / 3.0, 1e-12);
}

TEST(Audit, SelfAuditIsPerfect) {
    SplitBuilder b(geo_schema());
    b.train("a", "GPE").train("b", "LOC").train("c", "ORG");
    DatasetSplit split = b.build();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    auto r = audit(index, split.train, *split.sentences, {});
    for (auto h : kAllHeuristics) EXPECT_EQ(r.score(h).accuracy(), 100.0);
}

TEST(Audit, EmptyTestThrows) {
    DatasetSplit split = example_split();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    EXPECT_THROW(audit(index, {}, *split.sentences, {}), DataError);
}

TEST(Audit, ReportsRenderTwoDecimals) {
    DatasetSplit split = example_split();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    auto r = audit(index, split.test, *split.sentences, {});
    EXPECT_NE(audit_to_tsv(r).find("mem-exact\t33.33\t33.33"), std::string::npos) << audit_to_tsv(r);
    EXPECT_NE(audit_to_json(r).find("\"mem-exact\""), std::string::npos);
    EXPECT_NE(audit_to_markdown(r, "toy").find("33.33"), std::string::npos);
}

TEST(Filter, MemExactThreePoint) {
    DatasetSplit split = example_split();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    auto f = filter(split.test, Heuristic::mem_exact, index, *split.sentences, {});
    ASSERT_EQ(f.removed.size(), 1u);
    EXPECT_EQ(f.removed[0], split.test[0]);
    ASSERT_EQ(f.kept.size(), 2u);
    EXPECT_EQ(f.kept[0], split.test[1]);
    EXPECT_EQ(f.kept[1], split.test[2]);
}

TEST(Filter, NothingClassifiableKeepsAll) {
    SplitBuilder b(geo_schema());
    b.train("a", "GPE").test("x", "GPE").test("y", "LOC");
    DatasetSplit split = b.build();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    for (auto h : kAllHeuristics) {
        auto f = filter(split.test, h, index, *split.sentences, {});
        EXPECT_EQ(f.kept, split.test);
        EXPECT_TRUE(f.removed.empty());
    }
}

TEST(Filter, MemUniformPermutationInvariant) {
    SplitBuilder b(geo_schema());
    for (int i = 0; i < 6; ++i) b.train("k" + std::to_string(i % 3), i % 2 ? "LOC" : "GPE");
    for (int i = 0; i < 30; ++i) b.test("k" + std::to_string(i % 4), i % 3 ? "LOC" : "GPE");
    DatasetSplit split = b.build();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    UniformOptions opt;
    opt.seed = 99;
    auto f = filter(split.test, Heuristic::mem_uniform, index, *split.sentences, opt);
    std::vector<LabeledExample> reversed(split.test.rbegin(), split.test.rend());
    auto g = filter(reversed, Heuristic::mem_uniform, index, *split.sentences, opt);
    std::vector<LabeledExample> g_removed(g.removed.rbegin(), g.removed.rend());
    EXPECT_EQ(f.removed, g_removed);
    auto a = audit(index, split.test, *split.sentences, opt);
    auto c = audit(index, reversed, *split.sentences, opt);
    for (auto h : kAllHeuristics) EXPECT_EQ(a.score(h).correct, c.score(h).correct);
}

TEST(Audit, MultiLabelUsesLabelSets) {
    TaskSchema s("spr", Arity::one_span, Labeling::multi_label, {"A", "B", "C"});
    SplitBuilder b(s);
    b.train_set("x", {"A", "B"}).train_set("x", {"A", "B"}).train_set("y", {"A"}).train_set("y", {"A", "C"});
    b.test_set("x", {"A", "B"}).test_set("x", {"A"}).test_set("y", {"A"});
    DatasetSplit split = b.build();
    auto index = MemorizationIndex::build(split.train, *split.sentences);
    auto r = audit(index, split.test, *split.sentences, {});
    EXPECT_EQ(r.score(Heuristic::mem_exact).correct, 1u);
    // y ties between {A} and {A,C}; {A} sorts first.
    EXPECT_EQ(r.score(Heuristic::mem_freq).correct, 2u);
}

TEST(Audit, MatchesBruteForceOracleOnRandomCorpora) {
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        Rng rng(trial + 1000);
        SplitBuilder b(geo_schema());
        const char* labels[] = {"GPE", "LOC", "ORG", "PER"};
        const std::size_t vocab = 2 + rng.below(6);
        const std::size_t n_train = rng.below(25), n_test = 1 + rng.below(24);
        for (std::size_t i = 0; i < n_train; ++i) {
            b.train("w" + std::to_string(rng.below(vocab)), labels[rng.below(3)]);
        }
        for (std::size_t i = 0; i < n_test; ++i) {
            b.test("w" + std::to_string(rng.below(vocab + 2)), labels[rng.below(3)]);
        }
        DatasetSplit split = b.build();
        auto index = MemorizationIndex::build(split.train, *split.sentences);
        UniformOptions opt;
        opt.seed = trial;
        auto r = audit(index, split.test, *split.sentences, opt);
        for (auto h : kAllHeuristics) {
            std::vector<oracle::NaiveScore> s;
            auto flags = oracle::classifiable(*split.sentences, split.train, split.test, h, trial, &s);
            EXPECT_EQ(r.score(h).correct, s[0].correct);
            EXPECT_EQ(r.score(h).covered, s[0].covered);
            EXPECT_EQ(r.score(h).expected_sum, s[0].expected_sum);
            auto f = filter(split.test, h, index, *split.sentences, opt);
            EXPECT_EQ(f.kept.size() + f.removed.size(), split.test.size());
            std::size_t removed = 0;
            for (bool flag : flags) removed += flag;
            EXPECT_EQ(f.removed.size(), removed);
        }
        // Mem-Exact classifiable points are a subset of Mem-Freq ones.
        auto ex = oracle::classifiable(*split.sentences, split.train, split.test, Heuristic::mem_exact, 0);
        auto fr = oracle::classifiable(*split.sentences, split.train, split.test, Heuristic::mem_freq, 0);
        for (std::size_t i = 0; i < ex.size(); ++i) {
            if (ex[i]) EXPECT_TRUE(fr[i]);
        }
    }
}
