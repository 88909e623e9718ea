#include "epb/errors.hpp"
#include "epb/pipeline.hpp"
#include "epb/synth.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <map>

using namespace epb;
using epb::testing::TempDir;

namespace {

void write_corpus(const std::filesystem::path& dir, double rho_exact, std::size_t n_train) {
    SynthConfig cfg;
    cfg.seed = 21;
    cfg.rho_exact = rho_exact;
    cfg.n_train = n_train;
    cfg.n_test = 200;
    write_synth(dir / "data", generate(cfg), cfg);
    cfg.mode = EmbeddingMode::noise;
    write_archive(dir / "data" / "noise.epemb", generate(cfg).archive);
}

std::map<std::string, std::string> tree(const std::filesystem::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), root).generic_string();
        if (rel == "timings.json") continue;
        files[rel] = epb::testing::read_file(entry.path());
    }
    return files;
}

const char* kOneArchive = R"({
  "dataset": "data",
  "archives": [{"path": "data/informative.epemb", "name": "inf", "encoder": "synth", "version": "base"}],
  "probes": ["linear"],
  "seed": 4,
  "probe": {"epochs": 2}
})";

const char* kTwoArchives = R"({
  "dataset": "data",
  "archives": [
    {"path": "data/informative.epemb", "name": "inf", "encoder": "synth", "version": "base"},
    {"path": "data/noise.epemb", "name": "noise", "encoder": "synth", "version": "random"}
  ],
  "probes": ["linear"],
  "filters": ["mem-exact"],
  "seed": 4,
  "mdl": {"mode": "two-part"}
})";

} // namespace

TEST(Pipeline, CountingContract) {
    TempDir dir;
    write_corpus(dir.path(), 0.5, 400);
    epb::testing::write_file(dir / "run.json", kOneArchive);
    PipelineResult r = run_pipeline(load_pipeline_config(dir / "run.json"), dir / "out", 1);
    ASSERT_EQ(r.cells.size(), 1u);
    EXPECT_EQ(r.cells[0].filtered.size(), 3u);
    EXPECT_EQ(r.cells[0].drops.size(), 3u);

    std::size_t models = 0, metric_reports = 0, drop_reports = 0;
    for (const auto& [rel, text] : tree(dir / "out")) {
        if (rel.ends_with("model.epm")) ++models;
        if (rel.find("/metrics_") != std::string::npos && rel.ends_with(".json")) ++metric_reports;
        if (rel.ends_with("drops.json")) ++drop_reports;
    }
    EXPECT_EQ(models, 1u);
    EXPECT_EQ(metric_reports, 4u);
    EXPECT_EQ(drop_reports, 1u);
    const std::string drops = epb::testing::read_file(dir / "out/cells/inf__linear/drops.tsv");
    EXPECT_NE(drops.find("mem-exact"), std::string::npos);
    EXPECT_NE(drops.find("mem-uniform"), std::string::npos);
    EXPECT_TRUE(std::filesystem::exists(dir / "out/table.md"));
    EXPECT_TRUE(std::filesystem::exists(dir / "out/manifest.json"));
}

TEST(Pipeline, ArtifactsCarryManifestDigest) {
    TempDir dir;
    write_corpus(dir.path(), 0.5, 400);
    epb::testing::write_file(dir / "run.json", kOneArchive);
    PipelineResult r = run_pipeline(load_pipeline_config(dir / "run.json"), dir / "out", 1);
    ASSERT_EQ(r.manifest_digest.size(), 64u);
    for (const auto& [rel, text] : tree(dir / "out")) {
        if (rel.ends_with(".jsonl")) continue;
        EXPECT_NE(text.find(r.manifest_digest), std::string::npos) << rel;
    }
}

TEST(Pipeline, RerunIsBitwiseIdenticalAcrossThreadCounts) {
    TempDir dir;
    write_corpus(dir.path(), 0.6, 400);
    epb::testing::write_file(dir / "run.json", kTwoArchives);
    auto config = load_pipeline_config(dir / "run.json");
    run_pipeline(config, dir / "a", 1);
    run_pipeline(config, dir / "b", 1);
    run_pipeline(config, dir / "c", 2);
    const auto a = tree(dir / "a");
    EXPECT_EQ(a, tree(dir / "b"));
    EXPECT_EQ(a, tree(dir / "c"));
    EXPECT_TRUE(a.count("cells/noise__linear/mdl.json"));
    EXPECT_TRUE(a.count("pairs.json"));
}

TEST(Pipeline, PairsAndTable) {
    TempDir dir;
    write_corpus(dir.path(), 0.6, 1000);
    epb::testing::write_file(dir / "run.json", kTwoArchives);
    PipelineResult r = run_pipeline(load_pipeline_config(dir / "run.json"), dir / "out", 1);
    ASSERT_EQ(r.pairs.size(), 1u);
    EXPECT_EQ(r.pairs[0].base, "inf");
    EXPECT_EQ(r.pairs[0].random, "noise");
    EXPECT_EQ(r.pairs[0].relation, classify_pair(r.pairs[0].base_drop, r.pairs[0].random_drop));
    EXPECT_NE(r.table_markdown.find("| synth | random |"), std::string::npos);
    const auto& inf = r.cell("inf", ProbeKind::linear);
    ASSERT_TRUE(inf.two_part.has_value());
    EXPECT_EQ(inf.two_part->n, 1000u);
}

TEST(Pipeline, MissingInputsNameStage) {
    TempDir dir;
    epb::testing::write_file(dir / "run.json", kOneArchive);
    EXPECT_THROW(run_pipeline(load_pipeline_config(dir / "run.json"), dir / "out", 1), DataError);
}

TEST(Pipeline, ConfigErrors) {
    EXPECT_THROW(PipelineConfig::from_json("{"), DataError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"dataset": "d", "archives": []})"), DataError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"archives": [{"path": "a"}]})"), DataError);
    auto c = PipelineConfig::from_json(R"({"dataset": "d", "archives": [{"path": "x/a.epemb"}]})");
    EXPECT_EQ(c.archives[0].name, "a");
    EXPECT_EQ(c.probes.size(), 1u);
    EXPECT_EQ(c.filters.size(), 3u);
}
