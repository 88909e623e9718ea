#include "epb/errors.hpp"
#include "epb/memaudit.hpp"
#include "epb/probes.hpp"
#include "epb/synth.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace epb;

namespace {

AuditReport audit_of(const SynthOutput& out, const SynthConfig& cfg) {
    auto index = MemorizationIndex::build(out.split.train, *out.split.sentences);
    UniformOptions opt;
    opt.seed = cfg.seed;
    return audit(index, out.split.test, *out.split.sentences, opt);
}

void expect_audit_matches_truth(const SynthConfig& cfg) {
    SynthOutput out = generate(cfg);
    auto report = audit_of(out, cfg);
    for (auto h : kAllHeuristics) {
        EXPECT_EQ(report.score(h).correct, out.truth.count(h)) << to_string(h);
        EXPECT_EQ(report.score(h).accuracy(), out.truth.accuracy(h)) << to_string(h);
        EXPECT_EQ(report.score(h).expected_accuracy(), out.truth.expected_accuracy(h)) << to_string(h);
    }
}

} // namespace

TEST(Synth, FullLeak) {
    SynthConfig cfg;
    cfg.rho_exact = 1.0;
    cfg.seed = 1;
    SynthOutput out = generate(cfg);
    EXPECT_EQ(audit_of(out, cfg).score(Heuristic::mem_exact).accuracy(), 100.0);
}

TEST(Synth, NoLeak) {
    SynthConfig cfg;
    cfg.rho_exact = 0.0;
    cfg.seed = 2;
    SynthOutput out = generate(cfg);
    EXPECT_EQ(audit_of(out, cfg).score(Heuristic::mem_exact).accuracy(), 0.0);
}

TEST(Synth, PartialLeakSeed11) {
    SynthConfig cfg;
    cfg.rho_exact = 0.4;
    cfg.n_test = 1000;
    cfg.seed = 11;
    SynthOutput out = generate(cfg);
    auto r = audit_of(out, cfg);
    EXPECT_EQ(r.score(Heuristic::mem_exact).accuracy(), 40.0);
    EXPECT_EQ(r.score(Heuristic::mem_exact).correct, out.truth.count(Heuristic::mem_exact));
}

TEST(Synth, AuditEqualsGroundTruthAcrossConfigs) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.rho_exact = 0.1 * static_cast<double>(seed);
        cfg.rho_ambig = 0.3;
        cfg.arity = seed % 2 ? Arity::two_span : Arity::one_span;
        cfg.n_test = 300;
        expect_audit_matches_truth(cfg);
    }
}

TEST(Synth, AmbiguousKeysCarryTwoLabels) {
    SynthConfig cfg;
    cfg.rho_exact = 0.2;
    cfg.rho_ambig = 0.5;
    cfg.seed = 4;
    SynthOutput out = generate(cfg);
    auto index = MemorizationIndex::build(out.split.train, *out.split.sentences);
    for (const auto& p : out.truth.points) {
        const auto& example = *std::find_if(out.split.test.begin(), out.split.test.end(), [&](const auto& e) {
            return e.sentence_id == p.sentence_id && e.target == p.target;
        });
        const auto* counts = index.find(make_key(*out.split.sentences, example));
        if (p.pool == KeyPool::ambiguous) {
            ASSERT_NE(counts, nullptr);
            EXPECT_GE(counts->counts.size(), 2u);
        } else if (p.pool == KeyPool::exact) {
            ASSERT_NE(counts, nullptr);
            EXPECT_EQ(counts->counts.size(), 1u);
        } else {
            EXPECT_EQ(counts, nullptr);
        }
    }
}

TEST(Synth, CorpusIndependentOfEmbeddingMode) {
    SynthConfig cfg;
    cfg.seed = 3;
    SynthOutput a = generate(cfg);
    cfg.mode = EmbeddingMode::noise;
    SynthOutput b = generate(cfg);
    EXPECT_EQ(a.split.train, b.split.train);
    EXPECT_EQ(a.split.test, b.split.test);
    EXPECT_NE(a.archive.values(), b.archive.values());
    EXPECT_EQ(a.archive.size(), b.archive.size());
    SynthOutput c = generate(cfg);
    EXPECT_EQ(b.archive.values(), c.archive.values());
}

TEST(Synth, InformativeArchiveIsLinearlyDecodable) {
    SynthConfig cfg;
    cfg.seed = 5;
    cfg.dim = 8;
    cfg.classes = 4;
    cfg.n_train = 1000;
    SynthOutput out = generate(cfg);
    PooledSet train_set = pool_examples(out.archive, out.split.train);
    PooledSet test_set = pool_examples(out.archive, out.split.test);
    ProbeConfig pc;
    pc.input_dim = cfg.dim;
    pc.classes = cfg.classes;
    pc.seed = 5;
    pc.lr = 0.1;
    PooledSet no_dev;
    no_dev.dim = train_set.dim;
    ProbeModel m = train(pc, train_set, no_dev);
    EXPECT_GE(selection_score(m, test_set), 95.0);
}

TEST(Synth, Errors) {
    SynthConfig cfg;
    cfg.vocab_size = 10;
    EXPECT_THROW(generate(cfg), DataError);
    cfg = SynthConfig{};
    cfg.rho_exact = 0.7;
    cfg.rho_ambig = 0.5;
    EXPECT_THROW(generate(cfg), std::invalid_argument);
}

TEST(Synth, ConfigJsonRoundTrip) {
    SynthConfig cfg;
    cfg.rho_exact = 0.25;
    cfg.arity = Arity::two_span;
    cfg.mode = EmbeddingMode::noise;
    cfg.seed = 77;
    SynthConfig back = SynthConfig::from_json(cfg.to_json());
    EXPECT_EQ(back.to_json(), cfg.to_json());
}

TEST(Synth, WritesFiles) {
    epb::testing::TempDir dir;
    SynthConfig cfg;
    cfg.seed = 1;
    write_synth(dir.path(), generate(cfg), cfg);
    for (const char* f : {"schema.json", "train.jsonl", "test.jsonl", "informative.epemb",
                          "ground_truth.json", "synth_config.json"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    DatasetSplit back = load_dataset(dir.path());
    EXPECT_EQ(back.train.size(), cfg.n_train);
    EXPECT_EQ(back.test.size(), cfg.n_test);
}
