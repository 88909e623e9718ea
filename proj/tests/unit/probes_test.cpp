#include "epb/embedstore.hpp"
#include "epb/errors.hpp"
#include "epb/optim.hpp"
#include "epb/probes.hpp"
#include "epb/rng.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

using namespace epb;

namespace {

ProbeConfig linear_config(std::size_t d, std::size_t c) {
    ProbeConfig cfg;
    cfg.kind = ProbeKind::linear;
    cfg.input_dim = d;
    cfg.classes = c;
    return cfg;
}

// Two Gaussian blobs at -3 and +3 on every axis.
PooledSet blobs(std::size_t n, std::size_t d, std::uint64_t seed) {
    PooledSet set;
    set.dim = static_cast<std::uint32_t>(d);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t y = static_cast<std::uint32_t>(i % 2);
        std::vector<float> v(d);
        for (auto& x : v) x = static_cast<float>((y ? 3.0 : -3.0) + rng.normal());
        set.push_back(v, {y});
    }
    return set;
}

} // namespace

TEST(ProbeInit, ParameterCounts) {
    EXPECT_EQ(linear_config(4, 3).parameter_count(), 15u);
    ProbeConfig mlp = linear_config(4, 3);
    mlp.kind = ProbeKind::mlp;
    mlp.hidden = 8;
    EXPECT_EQ(mlp.parameter_count(), 67u);
    EXPECT_EQ(init(mlp).params.size(), 67u);
}

TEST(ProbeInit, SeedDeterminedGlorot) {
    ProbeConfig cfg = linear_config(4, 3);
    cfg.seed = 9;
    auto a = init(cfg), b = init(cfg);
    EXPECT_EQ(a.params, b.params);
    EXPECT_NE(init(cfg, 1).params, a.params);
    const double limit = std::sqrt(6.0 / (4 + 3));
    for (std::size_t i = 0; i < 12; ++i) EXPECT_LE(std::abs(a.params[i]), limit);
    for (std::size_t i = 12; i < 15; ++i) EXPECT_EQ(a.params[i], 0.0f);
}

TEST(ProbeConfigCheck, RejectsBadValues) {
    ProbeConfig cfg = linear_config(4, 3);
    EXPECT_NO_THROW(cfg.validate());
    cfg.dropout = 1.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = linear_config(0, 3);
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = linear_config(4, 3);
    cfg.batch = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Forward, ZeroWeightsGiveUniform) {
    ProbeModel m = init(linear_config(4, 3));
    std::fill(m.params.begin(), m.params.end(), 0.0f);
    std::vector<float> x = {1, 2, 3, 4};
    auto p = forward(m, x, Mode::eval);
    for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Forward, MultiLabelSigmoidAtZero) {
    ProbeConfig cfg = linear_config(2, 2);
    cfg.labeling = Labeling::multi_label;
    ProbeModel m = init(cfg);
    std::fill(m.params.begin(), m.params.end(), 0.0f);
    std::vector<float> x = {0.3f, -1.0f};
    auto p = forward(m, x, Mode::eval);
    EXPECT_EQ(p[0], 0.5);
    EXPECT_EQ(p[1], 0.5);
}

TEST(Forward, EvalDeterministicAndSoftmaxSums) {
    ProbeConfig cfg = linear_config(8, 4);
    cfg.kind = ProbeKind::mlp;
    cfg.hidden = 16;
    ProbeModel m = init(cfg);
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        std::vector<float> x(8);
        for (auto& v : x) v = static_cast<float>(rng.normal() * 50.0);
        auto a = forward(m, x, Mode::eval);
        auto b = forward(m, x, Mode::eval);
        EXPECT_EQ(a, b);
        EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-6);
    }
}

TEST(Forward, DropoutOnlyInTrainMode) {
    ProbeConfig cfg = linear_config(8, 2);
    cfg.dropout = 0.5;
    ProbeModel m = init(cfg);
    std::vector<float> x(8, 1.0f);
    Rng rng(4);
    bool differs = false;
    const auto eval = forward(m, x, Mode::eval);
    for (int i = 0; i < 20; ++i) differs |= forward(m, x, Mode::train, &rng) != eval;
    EXPECT_TRUE(differs);
}

TEST(Forward, NonFiniteInputRejected) {
    ProbeModel m = init(linear_config(2, 2));
    std::vector<float> x = {1.0f, std::numeric_limits<float>::quiet_NaN()};
    EXPECT_THROW(forward(m, x, Mode::eval), NumericError);
    std::vector<float> short_x = {1.0f};
    EXPECT_THROW(forward(m, short_x, Mode::eval), DataError);
}

TEST(Decide, ArgmaxTiesAndThreshold) {
    std::vector<double> a = {0.2, 0.5, 0.3};
    EXPECT_EQ(decide(a, Labeling::single_label), LabelSet{1});
    std::vector<double> tie = {0.5, 0.5};
    EXPECT_EQ(decide(tie, Labeling::single_label), LabelSet{0});
    std::vector<double> ml = {0.6, 0.4, 0.9};
    EXPECT_EQ(decide(ml, Labeling::multi_label), (LabelSet{0, 2}));
    std::vector<double> half = {0.5};
    EXPECT_TRUE(decide(half, Labeling::multi_label).empty());
}

TEST(Schedule, WarmupLinear) {
    EXPECT_DOUBLE_EQ(warmup_linear_lr(5, 100, 1e-3, 0.1), 5e-4);
    EXPECT_DOUBLE_EQ(warmup_linear_lr(55, 100, 1e-3, 0.1), 5e-4);
    EXPECT_DOUBLE_EQ(warmup_linear_lr(10, 100, 1e-3, 0.1), 1e-3);
    EXPECT_EQ(warmup_linear_lr(0, 100, 1e-3, 0.1), 0.0);
    EXPECT_EQ(warmup_linear_lr(100, 100, 1e-3, 0.1), 0.0);
}

TEST(Optimizer, AdamWZeroGradScalesByDecay) {
    AdamW opt(3);
    std::vector<double> p = {1.0, -2.0, 0.5};
    const std::vector<double> g(3, 0.0);
    opt.step(p, g, 0.1);
    EXPECT_EQ(p[0], 1.0 * (1.0 - 0.1 * 0.01));
    EXPECT_EQ(p[1], -2.0 * (1.0 - 0.1 * 0.01));
    EXPECT_EQ(p[2], 0.5 * (1.0 - 0.1 * 0.01));
}

TEST(Optimizer, FirstStepMovesByLearningRate) {
    AdamWConfig c;
    c.weight_decay = 0.0;
    AdamW opt(1, c);
    std::vector<double> p = {0.0};
    const std::vector<double> g = {3.0};
    opt.step(p, g, 1e-3);
    EXPECT_NEAR(p[0], -1e-3, 1e-10);
}

TEST(Replica, SelectionTieRule) {
    std::vector<double> s = {0.8, 0.9, 0.9};
    EXPECT_EQ(select_best_replica(s), 1u);
}

TEST(Train, SeparableBlobs) {
    ProbeConfig cfg = linear_config(4, 2);
    cfg.lr = 0.1;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        cfg.seed = seed;
        PooledSet data = blobs(200, 4, seed);
        ProbeModel m = train(cfg, data, data);
        EXPECT_GE(selection_score(m, data), 99.0) << "seed " << seed;
        EXPECT_EQ(m.log.replica_dev_accuracy.size(), 3u);
        EXPECT_EQ(m.log.step_loss.size(), 3u * 13u);
        EXPECT_EQ(m.log.epoch_dev_accuracy.size(), 3u);
    }
}

TEST(Train, DeterministicBitwise) {
    ProbeConfig cfg = linear_config(4, 2);
    cfg.kind = ProbeKind::mlp;
    cfg.hidden = 8;
    cfg.seed = 3;
    PooledSet data = blobs(64, 4, 2);
    ProbeModel a = train(cfg, data, data);
    ProbeModel b = train(cfg, data, data);
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.log.step_loss, b.log.step_loss);
}

TEST(Train, EmptyDevTrainsOneReplica) {
    ProbeConfig cfg = linear_config(4, 2);
    PooledSet data = blobs(20, 4, 2);
    PooledSet dev;
    dev.dim = 4;
    ProbeModel m = train(cfg, data, dev);
    EXPECT_EQ(m.log.selected_replica, 0u);
    EXPECT_EQ(m.params.size(), 10u);
}

TEST(Train, ShapeMismatchAndNaN) {
    ProbeConfig cfg = linear_config(3, 2);
    PooledSet data = blobs(10, 4, 1);
    EXPECT_THROW(train(cfg, data, data), DataError);
    cfg = linear_config(4, 2);
    PooledSet nan_data = blobs(10, 4, 1);
    nan_data.features[5] = std::numeric_limits<float>::quiet_NaN();
    try {
        train(cfg, nan_data, nan_data);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
    }
}

TEST(Train, LeavesArchiveUntouched) {
    epb::testing::TempDir dir;
    PooledSet data = blobs(40, 4, 8);
    write_archive(dir / "p.epemb", pooled_to_archive(data));
    const std::string before = epb::testing::read_file(dir / "p.epemb");
    EmbeddingArchive archive = load_archive(dir / "p.epemb");
    PooledSet again;
    again.dim = archive.dim();
    for (std::size_t i = 0; i < data.size(); ++i) again.push_back(archive.row(i, 0), data.gold[i]);
    train(linear_config(4, 2), again, again);
    EXPECT_EQ(epb::testing::read_file(dir / "p.epemb"), before);
}

TEST(Train, MultiLabel) {
    ProbeConfig cfg = linear_config(4, 3);
    cfg.labeling = Labeling::multi_label;
    cfg.lr = 0.1;
    PooledSet data;
    data.dim = 4;
    Rng rng(2);
    for (int i = 0; i < 300; ++i) {
        std::vector<float> v(4);
        LabelSet gold;
        for (std::uint32_t c = 0; c < 3; ++c) {
            const bool on = rng.uniform() < 0.5;
            v[c] = static_cast<float>((on ? 3.0 : -3.0) + rng.normal() * 0.5);
            if (on) gold.push_back(c);
        }
        v[3] = static_cast<float>(rng.normal());
        data.push_back(v, gold);
    }
    ProbeModel m = train(cfg, data, data);
    EXPECT_GE(selection_score(m, data), 95.0);
}

TEST(ModelFile, RoundTrip) {
    epb::testing::TempDir dir;
    ProbeConfig cfg = linear_config(4, 2);
    cfg.kind = ProbeKind::mlp;
    cfg.hidden = 5;
    PooledSet data = blobs(30, 4, 1);
    ProbeModel m = train(cfg, data, data);
    m.manifest_digest = "abc";
    save_model(dir / "m.epm", m);
    ProbeModel back = load_model(dir / "m.epm");
    EXPECT_EQ(back.params, m.params);
    EXPECT_EQ(back.config.kind, ProbeKind::mlp);
    EXPECT_EQ(back.config.hidden, 5u);
    EXPECT_EQ(back.manifest_digest, "abc");
    EXPECT_EQ(back.log.selected_replica, m.log.selected_replica);
    EXPECT_EQ(predict(back, data), predict(m, data));
    const std::string bytes = epb::testing::read_file(dir / "m.epm");
    EXPECT_EQ(bytes.substr(0, 8), std::string("EPPROBE\0", 8));
    auto raw = serialize_model(m);
    raw.resize(raw.size() - 2);
    EXPECT_THROW(parse_model(raw), DataError);
}

TEST(Gradient, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        for (auto kind : {ProbeKind::linear, ProbeKind::mlp}) {
            for (auto labeling : {Labeling::single_label, Labeling::multi_label}) {
                auto c = oracle::random_case(seed, kind, labeling);
                EXPECT_LT(oracle::max_relative_error(c), 1e-4)
                    << "seed " << seed << " " << to_string(kind);
            }
        }
    }
}
