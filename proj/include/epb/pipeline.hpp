#pragma once

#include "epb/mdl.hpp"
#include "epb/memaudit.hpp"
#include "epb/metrics.hpp"
#include "epb/probes.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace epb {

struct ArchiveSpec {
    std::string name;
    std::string encoder; // table "Encoder" column
    std::string version; // table "Version" column, e.g. base / random
    std::string path;    // as written in the config, relative to it
};

struct PairSpec {
    std::string base;
    std::string random;
};

enum class MdlMode { none, two_part, prequential };

/// Declarative run description. Relative paths resolve against base_dir.
struct PipelineConfig {
    std::string name;
    std::string dataset; // directory in the save_dataset layout
    std::vector<ArchiveSpec> archives;
    std::vector<ProbeKind> probes{ProbeKind::linear};
    std::vector<Heuristic> filters{Heuristic::mem_exact, Heuristic::mem_freq,
                                   Heuristic::mem_uniform};
    std::uint64_t seed = 0;
    ProbeConfig probe; // recipe; kind, dims and labeling are filled per cell
    MdlMode mdl = MdlMode::none;
    std::string mdl_schedule = "default";
    UniformSpace uniform_space = UniformSpace::key;
    double significance_ratio = kDefaultSignificanceRatio;
    // When empty, archives sharing an encoder with versions "base" and
    // "random" are paired.
    std::vector<PairSpec> pairs;
    std::filesystem::path base_dir;

    static PipelineConfig from_json(std::string_view text, std::filesystem::path base_dir = {});
    /// Fully resolved config, keys sorted; recorded in the manifest.
    std::string to_json() const;
    std::vector<PairSpec> resolved_pairs() const;
    std::filesystem::path resolve(const std::string& path) const;
};

PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct CellResult {
    std::string archive;
    ProbeKind probe = ProbeKind::linear;
    MetricReport original;
    std::map<Heuristic, MetricReport> filtered;
    // Absent when the filtered test set is empty.
    std::map<Heuristic, std::optional<DropReport>> drops;
    std::optional<Codelength> two_part;
    std::optional<PrequentialResult> prequential;
};

struct PairResult {
    std::string base;
    std::string random;
    ProbeKind probe = ProbeKind::linear;
    Heuristic filter = Heuristic::mem_exact;
    double base_drop = 0.0;
    double random_drop = 0.0;
    PairClass relation = PairClass::equal;
};

struct PipelineResult {
    std::string manifest_digest;
    AuditReport audit;
    std::vector<CellResult> cells;
    std::vector<PairResult> pairs;
    std::string table_markdown;

    const CellResult& cell(std::string_view archive, ProbeKind probe) const;
};

/// Thread cap for parallel cells: EPB_THREADS when set, else the hardware
/// concurrency. Results do not depend on it.
unsigned pipeline_threads();

/// Runs audit, filtering, pooling, training, evaluation, drops and optional
/// MDL for every (archive, probe) cell and writes all artifacts under
/// out_dir. Errors carry the failing stage and the manifest digest.
PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir,
                            unsigned threads = 0);

/// Drop table with one row per archive and one column per (probe, filter),
/// random-encoder cells marked bold (higher) or italic (lower).
std::string combined_table(const PipelineConfig& config, const PipelineResult& result);

} // namespace epb
