#include "epb/pipeline.hpp"

#include "epb/digest.hpp"
#include "epb/errors.hpp"
#include "epb/numfmt.hpp"

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace epb {

using nlohmann::json;

namespace {

std::string_view mdl_mode_name(MdlMode mode) {
    switch (mode) {
    case MdlMode::none:
        return "none";
    case MdlMode::two_part:
        return "two-part";
    case MdlMode::prequential:
        return "prequential";
    }
    return "?";
}

MdlMode parse_mdl_mode(std::string_view name) {
    if (name == "none") return MdlMode::none;
    if (name == "two-part") return MdlMode::two_part;
    if (name == "prequential") return MdlMode::prequential;
    throw std::invalid_argument("unknown mdl mode '" + std::string(name) + "'");
}

std::string_view short_name(Heuristic h) {
    switch (h) {
    case Heuristic::mem_exact:
        return "Mem-Ex";
    case Heuristic::mem_freq:
        return "Mem-Freq";
    case Heuristic::mem_uniform:
        return "Mem-Unif";
    }
    return "?";
}

std::string probe_title(ProbeKind kind) { return kind == ProbeKind::linear ? "Linear" : "MLP"; }

} // namespace

PipelineConfig PipelineConfig::from_json(std::string_view text, std::filesystem::path base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("pipeline config is not valid JSON: ") + e.what());
    }
    PipelineConfig c;
    c.base_dir = std::move(base_dir);
    try {
        c.dataset = j.at("dataset").get<std::string>();
        c.name = j.value("name", std::filesystem::path(c.dataset).filename().string());
        for (const auto& a : j.at("archives")) {
            ArchiveSpec spec;
            spec.path = a.at("path").get<std::string>();
            spec.name = a.value("name", std::filesystem::path(spec.path).stem().string());
            spec.encoder = a.value("encoder", spec.name);
            spec.version = a.value("version", std::string{});
            c.archives.push_back(spec);
        }
        if (j.contains("probes")) {
            c.probes.clear();
            for (const auto& p : j.at("probes")) c.probes.push_back(parse_probe_kind(p.get<std::string>()));
        }
        if (j.contains("filters")) {
            c.filters.clear();
            for (const auto& f : j.at("filters")) c.filters.push_back(parse_heuristic(f.get<std::string>()));
        }
        c.seed = j.value("seed", c.seed);
        if (j.contains("probe")) {
            const auto& p = j.at("probe");
            c.probe.epochs = p.value("epochs", c.probe.epochs);
            c.probe.batch = p.value("batch", c.probe.batch);
            c.probe.lr = p.value("lr", c.probe.lr);
            c.probe.dropout = p.value("dropout", c.probe.dropout);
            c.probe.hidden = p.value("hidden", c.probe.hidden);
            c.probe.warmup = p.value("warmup", c.probe.warmup);
            c.probe.replicas = p.value("replicas", c.probe.replicas);
        }
        if (j.contains("mdl")) {
            const auto& m = j.at("mdl");
            c.mdl = parse_mdl_mode(m.value("mode", std::string("none")));
            c.mdl_schedule = m.value("schedule", c.mdl_schedule);
        }
        c.uniform_space = parse_uniform_space(j.value("uniform_space", std::string("key")));
        c.significance_ratio = j.value("significance_ratio", c.significance_ratio);
        if (j.contains("pairs")) {
            for (const auto& p : j.at("pairs")) {
                c.pairs.push_back(PairSpec{p.at("base").get<std::string>(),
                                           p.at("random").get<std::string>()});
            }
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad pipeline config field: ") + e.what());
    }
    if (c.archives.empty()) {
        throw DataError("pipeline config lists no archives");
    }
    std::set<std::string> names;
    for (const auto& a : c.archives) {
        if (!names.insert(a.name).second) {
            throw DataError("duplicate archive name '" + a.name + "'");
        }
    }
    for (const auto& p : c.pairs) {
        if (!names.count(p.base) || !names.count(p.random)) {
            throw DataError("pair refers to an unknown archive: " + p.base + " / " + p.random);
        }
    }
    PrequentialSchedule::parse(c.mdl_schedule);
    return c;
}

std::string PipelineConfig::to_json() const {
    json archives_j = json::array();
    for (const auto& a : archives) {
        archives_j.push_back(
            {{"name", a.name}, {"encoder", a.encoder}, {"version", a.version}, {"path", a.path}});
    }
    json probes_j = json::array();
    for (const auto p : probes) probes_j.push_back(std::string(epb::to_string(p)));
    json filters_j = json::array();
    for (const auto f : filters) filters_j.push_back(std::string(epb::to_string(f)));
    json pairs_j = json::array();
    for (const auto& p : resolved_pairs()) pairs_j.push_back({{"base", p.base}, {"random", p.random}});
    return json{{"name", name},
                {"dataset", dataset},
                {"archives", archives_j},
                {"probes", probes_j},
                {"filters", filters_j},
                {"seed", seed},
                {"probe",
                 {{"epochs", probe.epochs},
                  {"batch", probe.batch},
                  {"lr", probe.lr},
                  {"dropout", probe.dropout},
                  {"hidden", probe.hidden},
                  {"warmup", probe.warmup},
                  {"replicas", probe.replicas}}},
                {"mdl", {{"mode", std::string(mdl_mode_name(mdl))}, {"schedule", mdl_schedule}}},
                {"uniform_space", uniform_space == UniformSpace::key ? "key" : "full"},
                {"significance_ratio", significance_ratio},
                {"pairs", pairs_j}}
        .dump(2);
}

std::vector<PairSpec> PipelineConfig::resolved_pairs() const {
    if (!pairs.empty()) {
        return pairs;
    }
    std::vector<PairSpec> out;
    for (const auto& base : archives) {
        if (base.version != "base") continue;
        for (const auto& random : archives) {
            if (random.version == "random" && random.encoder == base.encoder) {
                out.push_back(PairSpec{base.name, random.name});
            }
        }
    }
    return out;
}

std::filesystem::path PipelineConfig::resolve(const std::string& path) const {
    const std::filesystem::path p(path);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return PipelineConfig::from_json(ss.str(), path.parent_path());
}

const CellResult& PipelineResult::cell(std::string_view archive, ProbeKind probe) const {
    for (const auto& c : cells) {
        if (c.archive == archive && c.probe == probe) return c;
    }
    throw std::out_of_range("no cell for archive " + std::string(archive));
}

unsigned pipeline_threads() {
    if (const char* env = std::getenv("EPB_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
        throw std::invalid_argument(std::string("EPB_THREADS must be a positive integer, got '") +
                                    env + "'");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

class ArtifactWriter {
public:
    ArtifactWriter(std::filesystem::path root, std::string digest)
        : root_(std::move(root)), digest_(std::move(digest)) {}

    void json_file(const std::filesystem::path& rel, const std::string& text) const {
        json j = json::parse(text);
        if (j.is_object()) {
            j["manifest_digest"] = digest_;
        } else {
            j = json{{"data", j}, {"manifest_digest", digest_}};
        }
        write(rel, j.dump(2) + "\n");
    }
    void tsv_file(const std::filesystem::path& rel, const std::string& text) const {
        write(rel, "# manifest_digest\t" + digest_ + "\n" + text);
    }
    void md_file(const std::filesystem::path& rel, const std::string& text) const {
        write(rel, text + "\n<!-- manifest_digest: " + digest_ + " -->\n");
    }
    void write(const std::filesystem::path& rel, const std::string& text) const {
        const auto path = root_ / rel;
        std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write " + path.string());
        out << text;
    }
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
    std::string digest_;
};

std::string drops_tsv(const CellResult& cell) {
    std::ostringstream os;
    os << "filter\tacc_original\tacc_filtered\tdrop\n";
    for (const auto& [h, d] : cell.drops) {
        os << to_string(h) << '\t';
        if (d) {
            os << format_fixed(d->acc_original) << '\t' << format_fixed(d->acc_filtered) << '\t'
               << format_fixed(d->drop) << '\n';
        } else {
            os << format_fixed(cell.original.accuracy) << "\tn/a\tn/a\n";
        }
    }
    return os.str();
}

std::string drops_json(const CellResult& cell) {
    json j = json::object();
    for (const auto& [h, d] : cell.drops) {
        if (d) {
            j[std::string(to_string(h))] = {{"acc_original", d->acc_original},
                                            {"acc_filtered", d->acc_filtered},
                                            {"drop", d->drop},
                                            {"drop_rounded", round_half_up(d->drop)}};
        } else {
            j[std::string(to_string(h))] = nullptr;
        }
    }
    return json{{"drops", j}}.dump(2);
}

std::string drops_md(const CellResult& cell) {
    std::ostringstream os;
    os << "| Filter | Acc. original | Acc. filtered | %Δ |\n|---|---:|---:|---:|\n";
    for (const auto& [h, d] : cell.drops) {
        os << "| " << short_name(h) << " | " << format_fixed(cell.original.accuracy) << " | "
           << (d ? format_fixed(d->acc_filtered) : "n/a") << " | "
           << (d ? format_fixed(d->drop) : "n/a") << " |\n";
    }
    return os.str();
}

std::string pairs_json(const std::vector<PairResult>& pairs) {
    json j = json::array();
    for (const auto& p : pairs) {
        j.push_back({{"base", p.base},
                     {"random", p.random},
                     {"probe", std::string(to_string(p.probe))},
                     {"filter", std::string(to_string(p.filter))},
                     {"base_drop", round_half_up(p.base_drop)},
                     {"random_drop", round_half_up(p.random_drop)},
                     {"relation", std::string(to_string(p.relation))}});
    }
    return json{{"pairs", j}}.dump(2);
}

std::string pairs_tsv(const std::vector<PairResult>& pairs) {
    std::ostringstream os;
    os << "base\trandom\tprobe\tfilter\tbase_drop\trandom_drop\trelation\n";
    for (const auto& p : pairs) {
        os << p.base << '\t' << p.random << '\t' << to_string(p.probe) << '\t'
           << to_string(p.filter) << '\t' << format_fixed(p.base_drop) << '\t'
           << format_fixed(p.random_drop) << '\t' << to_string(p.relation) << '\n';
    }
    return os.str();
}

std::string cell_dir(const CellResult& cell) {
    return "cells/" + cell.archive + "__" + std::string(to_string(cell.probe));
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <typename F>
auto stage(const std::string& name, const std::string& digest, F&& body) {
    try {
        return body();
    } catch (const DataError& e) {
        throw DataError("stage '" + name + "' failed (manifest " + digest + "): " + e.what());
    } catch (const NumericError& e) {
        throw NumericError("stage '" + name + "' failed (manifest " + digest + "): " + e.what());
    }
}

} // namespace

std::string combined_table(const PipelineConfig& config, const PipelineResult& result) {
    std::map<std::string, const ArchiveSpec*> by_name;
    for (const auto& a : config.archives) by_name[a.name] = &a;
    // random archive -> base archive
    std::map<std::string, std::string> base_of;
    for (const auto& p : config.resolved_pairs()) base_of[p.random] = p.base;

    std::ostringstream os;
    os << "| Dataset | Encoder | Version";
    for (const auto probe : config.probes) {
        for (const auto f : config.filters) os << " | " << probe_title(probe) << " %Δ " << short_name(f);
    }
    os << " |\n|---|---|---";
    for (std::size_t i = 0; i < config.probes.size() * config.filters.size(); ++i) os << "|---:";
    os << "|\n";
    for (const auto& a : config.archives) {
        os << "| " << config.name << " | " << a.encoder << " | "
           << (a.version.empty() ? a.name : a.version);
        for (const auto probe : config.probes) {
            const CellResult& cell = result.cell(a.name, probe);
            for (const auto f : config.filters) {
                const auto& d = cell.drops.at(f);
                if (!d) {
                    os << " | n/a";
                    continue;
                }
                const auto base = base_of.find(a.name);
                if (base == base_of.end()) {
                    os << " | " << format_fixed(d->drop);
                    continue;
                }
                const auto& base_drop = result.cell(base->second, probe).drops.at(f);
                if (!base_drop) {
                    os << " | " << format_fixed(d->drop);
                    continue;
                }
                os << " | "
                   << markup_cell(d->drop, classify_pair(base_drop->drop, d->drop,
                                                         config.significance_ratio));
            }
        }
        os << " |\n";
    }
    return os.str();
}

PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir,
                            unsigned threads) {
    using clock = std::chrono::steady_clock;
    json timings = json::object();
    const auto t_start = clock::now();

    // Manifest first, so every later error can name it.
    const auto dataset_dir = config.resolve(config.dataset);
    json inputs = json::object();
    for (const char* file : {"schema.json", "train.jsonl", "dev.jsonl", "test.jsonl"}) {
        const auto path = dataset_dir / file;
        if (std::filesystem::exists(path)) {
            inputs[(std::filesystem::path(config.dataset) / file).generic_string()] = sha256_file(path);
        }
    }
    for (const auto& a : config.archives) {
        inputs[a.path] = sha256_file(config.resolve(a.path));
    }
    json manifest = {{"toolkit_version", EPB_VERSION},
                     {"seeds", {{"seed", config.seed}}},
                     {"inputs", inputs},
                     {"config", json::parse(config.to_json())}};
    const std::string digest = sha256_hex(manifest.dump());
    manifest["manifest_digest"] = digest;
    ArtifactWriter writer(out_dir, digest);
    writer.write("manifest.json", manifest.dump(2) + "\n");

    PipelineResult result;
    result.manifest_digest = digest;

    auto t = clock::now();
    const DatasetSplit split = stage("load", digest, [&] { return load_dataset(dataset_dir); });
    if (split.test.empty()) {
        throw DataError("stage 'load' failed (manifest " + digest + "): test set is empty");
    }
    std::vector<EmbeddingArchive> archives;
    for (const auto& a : config.archives) {
        archives.push_back(stage("load:" + a.name, digest,
                                 [&] { return load_archive(config.resolve(a.path)); }));
    }
    timings["load"] = seconds_since(t);

    t = clock::now();
    const auto index = MemorizationIndex::build(split.train, *split.sentences);
    UniformOptions uniform{config.seed, config.uniform_space, {}};
    if (uniform.space == UniformSpace::full) {
        uniform.full_space = uniform_label_space(split.schema, index);
    }
    result.audit = stage("audit", digest,
                         [&] { return audit(index, split.test, *split.sentences, uniform); });
    writer.json_file("audit.json", audit_to_json(result.audit));
    writer.tsv_file("audit.tsv", audit_to_tsv(result.audit));
    writer.md_file("audit.md", audit_to_markdown(result.audit, config.name));

    std::map<Heuristic, FilterResult> filtered;
    for (const auto h : config.filters) {
        filtered[h] = stage("filter:" + std::string(to_string(h)), digest, [&] {
            return filter(split.test, h, index, *split.sentences, uniform);
        });
        std::ostringstream kept, removed;
        write_ep_json(kept, filtered[h].kept, *split.sentences, split.schema);
        write_ep_json(removed, filtered[h].removed, *split.sentences, split.schema);
        writer.write("filtered/" + std::string(to_string(h)) + ".kept.jsonl", kept.str());
        writer.write("filtered/" + std::string(to_string(h)) + ".removed.jsonl", removed.str());
    }
    timings["audit_filter"] = seconds_since(t);

    struct CellJob {
        std::size_t archive;
        ProbeKind probe;
    };
    std::vector<CellJob> jobs;
    for (std::size_t a = 0; a < archives.size(); ++a) {
        for (const auto p : config.probes) jobs.push_back(CellJob{a, p});
    }
    result.cells.resize(jobs.size());
    std::vector<ProbeModel> models(jobs.size());
    std::vector<double> cell_seconds(jobs.size(), 0.0);

    auto run_cell = [&](std::size_t i) {
        const auto cell_start = clock::now();
        const CellJob& job = jobs[i];
        const auto& spec = config.archives[job.archive];
        const auto& archive = archives[job.archive];
        const std::string name = spec.name + "/" + std::string(to_string(job.probe));
        CellResult& cell = result.cells[i];
        cell.archive = spec.name;
        cell.probe = job.probe;

        const auto pooled_train = stage("pool:" + name, digest,
                                        [&] { return pool_examples(archive, split.train); });
        const auto pooled_dev = stage("pool:" + name, digest,
                                      [&] { return pool_examples(archive, split.dev); });
        const auto pooled_test = stage("pool:" + name, digest,
                                       [&] { return pool_examples(archive, split.test); });

        ProbeConfig probe = config.probe;
        probe.kind = job.probe;
        probe.input_dim = archive.dim();
        probe.classes = split.schema.num_classes();
        probe.labeling = split.schema.labeling();
        probe.seed = config.seed;
        ProbeModel model =
            stage("train:" + name, digest, [&] { return train(probe, pooled_train, pooled_dev); });
        model.manifest_digest = digest;

        cell.original = stage("eval:" + name, digest, [&] {
            return compute_metrics(pooled_test.gold, predict(model, pooled_test), split.schema);
        });
        for (const auto h : config.filters) {
            const auto& kept = filtered.at(h).kept;
            const auto pooled = stage("pool:" + name, digest, [&] { return pool_examples(archive, kept); });
            cell.filtered[h] = stage("eval:" + name, digest, [&] {
                return compute_metrics(pooled.gold, predict(model, pooled), split.schema);
            });
            if (kept.empty()) {
                cell.drops[h] = std::nullopt;
            } else {
                cell.drops[h] = stage("drop:" + name, digest, [&] {
                    return make_drop_report(cell.original.accuracy, cell.filtered[h].accuracy);
                });
            }
        }
        if (config.mdl == MdlMode::two_part) {
            cell.two_part = stage("mdl:" + name, digest,
                                  [&] { return two_part_codelength(model, pooled_train); });
        } else if (config.mdl == MdlMode::prequential) {
            cell.prequential = stage("mdl:" + name, digest, [&] {
                return prequential_codelength(probe, pooled_train,
                                              PrequentialSchedule::parse(config.mdl_schedule),
                                              config.seed);
            });
        }
        models[i] = std::move(model);
        cell_seconds[i] = seconds_since(cell_start);
    };

    t = clock::now();
    const unsigned cap = threads == 0 ? pipeline_threads() : threads;
    const unsigned workers = std::max(1u, std::min<unsigned>(cap, static_cast<unsigned>(jobs.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) run_cell(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < jobs.size(); i = next++) {
                    try {
                        run_cell(i);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }
    timings["cells"] = seconds_since(t);

    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const CellResult& cell = result.cells[i];
        const std::string dir = cell_dir(cell);
        const auto model_path = writer.root() / dir / "model.epm";
        std::filesystem::create_directories(model_path.parent_path());
        save_model(model_path, models[i]);
        writer.json_file(dir + "/metrics_original.json", metrics_to_json(cell.original));
        writer.tsv_file(dir + "/metrics_original.tsv", metrics_to_tsv(cell.original));
        writer.md_file(dir + "/metrics_original.md", metrics_to_markdown(cell.original));
        for (const auto& [h, report] : cell.filtered) {
            const std::string stem = dir + "/metrics_" + std::string(to_string(h));
            writer.json_file(stem + ".json", metrics_to_json(report));
            writer.tsv_file(stem + ".tsv", metrics_to_tsv(report));
            writer.md_file(stem + ".md", metrics_to_markdown(report));
        }
        writer.json_file(dir + "/drops.json", drops_json(cell));
        writer.tsv_file(dir + "/drops.tsv", drops_tsv(cell));
        writer.md_file(dir + "/drops.md", drops_md(cell));
        if (cell.two_part) writer.json_file(dir + "/mdl.json", codelength_to_json(*cell.two_part));
        if (cell.prequential) writer.json_file(dir + "/mdl.json", prequential_to_json(*cell.prequential));
        timings["cell:" + cell.archive + "/" + std::string(to_string(cell.probe))] = cell_seconds[i];
    }

    for (const auto& pair : config.resolved_pairs()) {
        for (const auto probe : config.probes) {
            const auto& base = result.cell(pair.base, probe);
            const auto& random = result.cell(pair.random, probe);
            for (const auto h : config.filters) {
                const auto& bd = base.drops.at(h);
                const auto& rd = random.drops.at(h);
                if (!bd || !rd) continue;
                result.pairs.push_back(PairResult{pair.base, pair.random, probe, h, bd->drop, rd->drop,
                                                  classify_pair(bd->drop, rd->drop,
                                                                config.significance_ratio)});
            }
        }
    }
    writer.json_file("pairs.json", pairs_json(result.pairs));
    writer.tsv_file("pairs.tsv", pairs_tsv(result.pairs));

    result.table_markdown = combined_table(config, result);
    writer.md_file("table.md", result.table_markdown);

    timings["total"] = seconds_since(t_start);
    timings["threads"] = workers;
    timings["manifest_digest"] = digest;
    writer.write("timings.json", timings.dump(2) + "\n");
    return result;
}

} // namespace epb
