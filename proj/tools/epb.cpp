// epb: command-line front end for the dataset audit and probing toolkit.

#include "epb/corpus.hpp"
#include "epb/digest.hpp"
#include "epb/embedstore.hpp"
#include "epb/errors.hpp"
#include "epb/mdl.hpp"
#include "epb/memaudit.hpp"
#include "epb/metrics.hpp"
#include "epb/numfmt.hpp"
#include "epb/pipeline.hpp"
#include "epb/probes.hpp"
#include "epb/synth.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw epb::DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw epb::DataError("cannot write " + path.string());
    out << text;
}

// A dataset argument is either a directory in the save_dataset layout or a
// single ep-json file, which then needs a schema.
epb::DatasetSplit open_dataset(const fs::path& path, const std::string& schema_path) {
    if (fs::is_directory(path)) return epb::load_dataset(path);
    if (schema_path.empty()) {
        throw std::invalid_argument("--schema is required when --dataset names a single file");
    }
    epb::IngestOptions options;
    options.format = epb::Format::ep_json;
    return epb::ingest(path, options, epb::load_schema(schema_path));
}

const std::vector<epb::LabeledExample>& pick_split(const epb::DatasetSplit& split,
                                                   const std::string& name) {
    if (name == "train") return split.train;
    if (name == "dev") return split.dev;
    if (name == "test") return split.test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

epb::UniformOptions uniform_options(const epb::DatasetSplit& split,
                                    const epb::MemorizationIndex& index, std::uint64_t seed,
                                    const std::string& space) {
    epb::UniformOptions options{seed, epb::parse_uniform_space(space), {}};
    if (options.space == epb::UniformSpace::full) {
        options.full_space = epb::uniform_label_space(split.schema, index);
    }
    return options;
}

struct RecipeFlags {
    std::string probe = "linear";
    std::size_t epochs = 3;
    std::size_t batch = 16;
    double lr = 1e-3;
    double dropout = 0.1;
    std::size_t hidden = 1024;
    double warmup = 0.1;
    std::size_t replicas = 3;
    std::uint64_t seed = 0;

    void attach(CLI::App* app) {
        app->add_option("--probe", probe, "linear or mlp")->check(CLI::IsMember({"linear", "mlp"}));
        app->add_option("--epochs", epochs)->capture_default_str();
        app->add_option("--batch", batch)->capture_default_str();
        app->add_option("--lr", lr)->capture_default_str();
        app->add_option("--dropout", dropout)->capture_default_str();
        app->add_option("--hidden", hidden)->capture_default_str();
        app->add_option("--warmup", warmup)->capture_default_str();
        app->add_option("--replicas", replicas)->capture_default_str();
        app->add_option("--seed", seed)->capture_default_str();
    }

    epb::ProbeConfig config(const epb::DatasetSplit& split, const epb::EmbeddingArchive& archive) const {
        epb::ProbeConfig c;
        c.kind = epb::parse_probe_kind(probe);
        c.input_dim = archive.dim();
        c.hidden = hidden;
        c.dropout = dropout;
        c.classes = split.schema.num_classes();
        c.labeling = split.schema.labeling();
        c.epochs = epochs;
        c.batch = batch;
        c.lr = lr;
        c.warmup = warmup;
        c.seed = seed;
        c.replicas = replicas;
        return c;
    }
};

std::string render_metrics(const epb::MetricReport& report, const std::string& format) {
    if (format == "json") return epb::metrics_to_json(report) + "\n";
    if (format == "md") return epb::metrics_to_markdown(report);
    return epb::metrics_to_tsv(report);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dataset memorization audits and edge-probing experiments"};
    app.set_version_flag("--version", EPB_VERSION);
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Parse raw corpora into a dataset directory");
    std::string in_format = "ep-json", in_schema, in_out, in_column;
    std::string in_train, in_dev, in_test;
    bool in_extend = false, in_drop_unseen = false;
    ingest->add_option("--format", in_format)->check(CLI::IsMember({"conll2003", "conll2000", "ep-json"}));
    ingest->add_option("--schema", in_schema, "schema.json (optional for CoNLL input)");
    ingest->add_option("--train", in_train);
    ingest->add_option("--dev", in_dev);
    ingest->add_option("--test", in_test);
    ingest->add_option("--column", in_column, "pos, chunk or ner");
    ingest->add_flag("--extend-labels", in_extend, "add unknown labels to the vocabulary");
    ingest->add_flag("--drop-unseen", in_drop_unseen, "drop dev/test examples with labels absent from train");
    ingest->add_option("--out", in_out)->required();

    // split
    auto* split_cmd = app.add_subcommand("split", "Carve a dev split out of train");
    std::string sp_data, sp_out;
    double sp_frac = 0.1;
    std::uint64_t sp_seed = 0;
    split_cmd->add_option("--data", sp_data)->required();
    split_cmd->add_option("--dev-frac", sp_frac)->capture_default_str();
    split_cmd->add_option("--seed", sp_seed)->capture_default_str();
    split_cmd->add_option("--out", sp_out, "defaults to rewriting --data");

    // balance
    auto* balance = app.add_subcommand("balance", "Downsample test classes to the minority count");
    std::string ba_data, ba_out;
    std::uint64_t ba_seed = 0;
    balance->add_option("--data", ba_data)->required();
    balance->add_option("--seed", ba_seed)->capture_default_str();
    balance->add_option("--out", ba_out, "defaults to rewriting --data");

    // audit
    auto* audit_cmd = app.add_subcommand("audit", "Score memorization heuristics on the test split");
    std::string au_data, au_heuristic = "all", au_report = "tsv", au_space = "key", au_out;
    std::uint64_t au_seed = 0;
    audit_cmd->add_option("--data", au_data)->required();
    audit_cmd->add_option("--heuristic", au_heuristic)
        ->check(CLI::IsMember({"mem-exact", "mem-freq", "mem-uniform", "all"}));
    audit_cmd->add_option("--seed", au_seed)->capture_default_str();
    audit_cmd->add_option("--report", au_report)->check(CLI::IsMember({"tsv", "json", "md"}));
    audit_cmd->add_option("--uniform-space", au_space)->check(CLI::IsMember({"key", "full"}));
    audit_cmd->add_option("--out", au_out, "report file (stdout when omitted)");

    // filter
    auto* filter_cmd = app.add_subcommand("filter", "Split the test set by heuristic classifiability");
    std::string fi_data, fi_heuristic, fi_space = "key", fi_kept, fi_removed;
    std::uint64_t fi_seed = 0;
    filter_cmd->add_option("--data", fi_data)->required();
    filter_cmd->add_option("--heuristic", fi_heuristic)
        ->required()
        ->check(CLI::IsMember({"mem-exact", "mem-freq", "mem-uniform"}));
    filter_cmd->add_option("--seed", fi_seed)->capture_default_str();
    filter_cmd->add_option("--uniform-space", fi_space)->check(CLI::IsMember({"key", "full"}));
    filter_cmd->add_option("--out", fi_kept, "kept (filtered) test set, ep-json")->required();
    filter_cmd->add_option("--removed", fi_removed, "removed test points, ep-json");

    // emb
    auto* emb = app.add_subcommand("emb", "Embedding archive utilities");
    emb->require_subcommand(1);
    auto* emb_validate = emb->add_subcommand("validate", "Check an EPEMB1 archive");
    std::string ev_file, ev_dataset, ev_schema;
    emb_validate->add_option("file", ev_file)->required();
    emb_validate->add_option("--dataset", ev_dataset, "also check token counts against a dataset");
    emb_validate->add_option("--schema", ev_schema);
    auto* emb_pool = emb->add_subcommand("pool", "Pool span vectors into a per-example archive");
    std::string ep_dataset, ep_schema, ep_emb, ep_out, ep_split = "test";
    emb_pool->add_option("--dataset", ep_dataset)->required();
    emb_pool->add_option("--schema", ep_schema);
    emb_pool->add_option("--split", ep_split)->capture_default_str();
    emb_pool->add_option("--emb", ep_emb)->required();
    emb_pool->add_option("--out", ep_out)->required();

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with known leakage");
    std::string sy_config, sy_out, sy_mode;
    synth->add_option("--config", sy_config)->required();
    synth->add_option("--out-dir", sy_out)->required();
    synth->add_option("--mode", sy_mode, "informative, noise or both (overrides the config)")
        ->check(CLI::IsMember({"informative", "noise", "both"}));

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a probe on pooled span vectors");
    std::string tr_dataset, tr_schema, tr_emb, tr_out;
    RecipeFlags tr_recipe;
    train_cmd->add_option("--dataset", tr_dataset)->required();
    train_cmd->add_option("--schema", tr_schema);
    train_cmd->add_option("--emb", tr_emb)->required();
    train_cmd->add_option("--out", tr_out)->required();
    tr_recipe.attach(train_cmd);

    // eval
    auto* eval = app.add_subcommand("eval", "Metric suite for predictions or a trained model");
    std::string ev_gold, ev_pred, ev_eschema, ev_model, ev_edataset, ev_emb, ev_split = "test",
                                                                          ev_report = "tsv";
    eval->add_option("--gold", ev_gold, "gold ep-json");
    eval->add_option("--pred", ev_pred, "predicted ep-json, same targets as --gold");
    eval->add_option("--schema", ev_eschema);
    eval->add_option("--model", ev_model);
    eval->add_option("--dataset", ev_edataset);
    eval->add_option("--emb", ev_emb);
    eval->add_option("--split", ev_split)->capture_default_str();
    eval->add_option("--report", ev_report)->check(CLI::IsMember({"tsv", "json", "md"}));

    // drop
    auto* drop = app.add_subcommand("drop", "Accuracy drop and base/random pair classification");
    double dr_orig = 0, dr_filt = 0, dr_base = 0, dr_random = 0, dr_ratio = epb::kDefaultSignificanceRatio;
    auto* o_orig = drop->add_option("--original-acc", dr_orig);
    auto* o_filt = drop->add_option("--filtered-acc", dr_filt);
    auto* o_base = drop->add_option("--base-drop", dr_base);
    auto* o_random = drop->add_option("--random-drop", dr_random);
    drop->add_option("--ratio", dr_ratio, "significance ratio")->capture_default_str();
    o_orig->needs(o_filt);
    o_filt->needs(o_orig);
    o_base->needs(o_random);
    o_random->needs(o_base);

    // mdl
    auto* mdl = app.add_subcommand("mdl", "Two-part or prequential codelength of a probe");
    std::string md_mode = "two-part", md_dataset, md_schema, md_emb, md_schedule = "default",
                md_split = "train", md_report = "json";
    RecipeFlags md_recipe;
    mdl->add_option("--mode", md_mode)->check(CLI::IsMember({"two-part", "prequential"}));
    mdl->add_option("--dataset", md_dataset)->required();
    mdl->add_option("--schema", md_schema);
    mdl->add_option("--emb", md_emb)->required();
    mdl->add_option("--split", md_split)->capture_default_str();
    mdl->add_option("--schedule", md_schedule, "default or comma-separated percentages");
    mdl->add_option("--report", md_report)->check(CLI::IsMember({"json"}));
    md_recipe.attach(mdl);

    // pipeline
    auto* pipeline = app.add_subcommand("pipeline", "Run the full audit and probing workflow");
    std::string pi_config, pi_out;
    std::uint64_t pi_seed = 0;
    pipeline->add_option("--config", pi_config)->required();
    pipeline->add_option("--out", pi_out)->required();
    auto* o_pi_seed = pipeline->add_option("--seed", pi_seed, "overrides the config seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*ingest) {
            epb::IngestOptions options;
            options.format = epb::parse_format(in_format);
            if (!in_column.empty()) options.column = epb::parse_column(in_column);
            options.unknown_labels =
                in_extend ? epb::UnknownLabelPolicy::extend : epb::UnknownLabelPolicy::reject;
            epb::TaskSchema schema;
            if (!in_schema.empty()) {
                schema = epb::load_schema(in_schema);
            } else if (options.format != epb::Format::ep_json) {
                schema = epb::TaskSchema(in_format, epb::Arity::one_span,
                                         epb::Labeling::single_label, {});
                options.unknown_labels = epb::UnknownLabelPolicy::extend;
            } else {
                throw std::invalid_argument("--schema is required for ep-json input");
            }
            epb::IngestSources sources;
            if (!in_train.empty()) sources.train = in_train;
            if (!in_dev.empty()) sources.dev = in_dev;
            if (!in_test.empty()) sources.test = in_test;
            if (!sources.train && !sources.dev && !sources.test) {
                throw std::invalid_argument("give at least one of --train, --dev, --test");
            }
            auto split = epb::ingest(sources, options, std::move(schema));
            if (in_drop_unseen) {
                auto dropped = epb::drop_unseen_labels(split);
                std::cerr << "dropped " << dropped.removed_dev << " dev and " << dropped.removed_test
                          << " test examples with unseen labels\n";
                split = std::move(dropped.split);
            }
            epb::save_dataset(in_out, split);
            std::cout << "train\t" << split.train.size() << "\ndev\t" << split.dev.size()
                      << "\ntest\t" << split.test.size() << "\nlabels\t"
                      << split.schema.num_classes() << '\n';
        } else if (*split_cmd) {
            const auto split = epb::make_dev_split(epb::load_dataset(sp_data), sp_frac, sp_seed);
            epb::save_dataset(sp_out.empty() ? sp_data : sp_out, split);
            std::cout << "train\t" << split.train.size() << "\ndev\t" << split.dev.size() << '\n';
        } else if (*balance) {
            const auto split = epb::rebalance(epb::load_dataset(ba_data), ba_seed);
            epb::save_dataset(ba_out.empty() ? ba_data : ba_out, split);
            std::cout << "test\t" << split.test.size() << '\n';
        } else if (*audit_cmd) {
            const auto split = epb::load_dataset(au_data);
            const auto index = epb::MemorizationIndex::build(split.train, *split.sentences);
            auto report = epb::audit(index, split.test, *split.sentences,
                                     uniform_options(split, index, au_seed, au_space));
            if (au_heuristic != "all") {
                const auto h = epb::parse_heuristic(au_heuristic);
                report.scores = {report.score(h)};
            }
            std::string text;
            if (au_report == "json") text = epb::audit_to_json(report) + "\n";
            else if (au_report == "md") {
                if (au_heuristic != "all") throw std::invalid_argument("--report md needs --heuristic all");
                text = epb::audit_to_markdown(report, split.schema.name());
            } else text = epb::audit_to_tsv(report);
            write_text(au_out, text);
        } else if (*filter_cmd) {
            const auto split = epb::load_dataset(fi_data);
            const auto index = epb::MemorizationIndex::build(split.train, *split.sentences);
            const auto result = epb::filter(split.test, epb::parse_heuristic(fi_heuristic), index,
                                            *split.sentences,
                                            uniform_options(split, index, fi_seed, fi_space));
            std::ostringstream kept;
            epb::write_ep_json(kept, result.kept, *split.sentences, split.schema);
            write_text(fi_kept, kept.str());
            if (!fi_removed.empty()) {
                std::ostringstream removed;
                epb::write_ep_json(removed, result.removed, *split.sentences, split.schema);
                write_text(fi_removed, removed.str());
            }
            std::cerr << "kept " << result.kept.size() << ", removed " << result.removed.size()
                      << '\n';
        } else if (*emb_validate) {
            const auto archive = epb::load_archive(ev_file);
            std::uint64_t tokens = 0;
            for (const auto& e : archive.entries()) tokens += e.n_tokens;
            if (!ev_dataset.empty()) {
                const auto split = open_dataset(ev_dataset, ev_schema);
                for (const auto& s : split.sentences->sentences()) {
                    const auto& e = archive.entry(s.id);
                    if (e.n_tokens != s.tokens.size()) {
                        throw epb::DataError("sentence " + std::to_string(s.id) + " has " +
                                             std::to_string(s.tokens.size()) + " tokens but " +
                                             std::to_string(e.n_tokens) + " archive rows");
                    }
                }
            }
            std::cout << "ok\tdim=" << archive.dim() << "\tsentences=" << archive.size()
                      << "\ttokens=" << tokens << "\tsha256=" << epb::sha256_file(ev_file) << '\n';
        } else if (*emb_pool) {
            const auto split = open_dataset(ep_dataset, ep_schema);
            const auto archive = epb::load_archive(ep_emb);
            const auto& examples = fs::is_directory(ep_dataset) ? pick_split(split, ep_split) : split.train;
            const auto pooled = epb::pool_examples(archive, examples);
            epb::write_archive(ep_out, epb::pooled_to_archive(pooled));
            std::cout << "pooled\t" << pooled.size() << '\n';
        } else if (*synth) {
            auto config = epb::SynthConfig::from_json(read_text(sy_config));
            std::vector<epb::EmbeddingMode> modes{config.mode};
            if (sy_mode == "both") modes = {epb::EmbeddingMode::informative, epb::EmbeddingMode::noise};
            else if (!sy_mode.empty()) modes = {epb::parse_embedding_mode(sy_mode)};
            for (const auto mode : modes) {
                config.mode = mode;
                epb::write_synth(sy_out, epb::generate(config), config);
            }
            std::cout << "wrote " << sy_out << '\n';
        } else if (*train_cmd) {
            const auto split = open_dataset(tr_dataset, tr_schema);
            const auto archive = epb::load_archive(tr_emb);
            const auto before = epb::sha256_file(tr_emb);
            const auto config = tr_recipe.config(split, archive);
            const auto model = epb::train(config, epb::pool_examples(archive, split.train),
                                          epb::pool_examples(archive, split.dev));
            if (epb::sha256_file(tr_emb) != before) {
                throw epb::DataError("embedding archive changed during training");
            }
            epb::save_model(tr_out, model);
            std::cout << "replica\t" << model.log.selected_replica << "\nparameters\t"
                      << model.params.size() << '\n';
            for (std::size_t r = 0; r < model.log.replica_dev_accuracy.size(); ++r) {
                std::cout << "dev_score[" << r << "]\t"
                          << epb::format_fixed(model.log.replica_dev_accuracy[r]) << '\n';
            }
        } else if (*eval) {
            epb::MetricReport report;
            if (!ev_model.empty()) {
                if (ev_edataset.empty() || ev_emb.empty()) {
                    throw std::invalid_argument("--model needs --dataset and --emb");
                }
                const auto split = open_dataset(ev_edataset, ev_eschema);
                const auto model = epb::load_model(ev_model);
                const auto archive = epb::load_archive(ev_emb);
                const auto& examples = fs::is_directory(ev_edataset) ? pick_split(split, ev_split) : split.train;
                const auto pooled = epb::pool_examples(archive, examples);
                report = epb::compute_metrics(pooled.gold, epb::predict(model, pooled), split.schema);
            } else {
                if (ev_gold.empty() || ev_pred.empty() || ev_eschema.empty()) {
                    throw std::invalid_argument("give --gold, --pred and --schema, or --model");
                }
                const auto schema = epb::load_schema(ev_eschema);
                epb::IngestOptions options;
                const auto gold = epb::ingest(fs::path(ev_gold), options, schema);
                const auto pred = epb::ingest(fs::path(ev_pred), options, schema);
                std::map<std::pair<std::uint64_t, std::uint32_t>, epb::LabelSet> predicted;
                for (const auto& e : pred.train) predicted[{e.sentence_id, e.target}] = e.gold;
                std::vector<epb::LabelSet> g, p;
                for (const auto& e : gold.train) {
                    const auto it = predicted.find({e.sentence_id, e.target});
                    if (it == predicted.end()) {
                        throw epb::DataError("no prediction for sentence " +
                                             std::to_string(e.sentence_id) + " target " +
                                             std::to_string(e.target));
                    }
                    g.push_back(e.gold);
                    p.push_back(it->second);
                }
                if (predicted.size() != g.size()) {
                    throw epb::DataError("prediction file has targets absent from the gold file");
                }
                report = epb::compute_metrics(g, p, schema);
            }
            std::cout << render_metrics(report, ev_report);
        } else if (*drop) {
            if (!*o_orig && !*o_base) {
                throw std::invalid_argument("give --original-acc/--filtered-acc or --base-drop/--random-drop");
            }
            if (*o_orig) {
                std::cout << "drop\t" << epb::format_fixed(epb::drop_percent(dr_orig, dr_filt)) << '\n';
            }
            if (*o_base) {
                std::cout << "relation\t"
                          << epb::to_string(epb::classify_pair(dr_base, dr_random, dr_ratio)) << '\n';
            }
        } else if (*mdl) {
            const auto split = open_dataset(md_dataset, md_schema);
            const auto archive = epb::load_archive(md_emb);
            const auto config = md_recipe.config(split, archive);
            const auto& examples = fs::is_directory(md_dataset) ? pick_split(split, md_split) : split.train;
            const auto pooled = epb::pool_examples(archive, examples);
            if (md_mode == "two-part") {
                const auto model = epb::train(config, pooled, epb::pool_examples(archive, split.dev));
                std::cout << epb::codelength_to_json(epb::two_part_codelength(model, pooled)) << '\n';
            } else {
                const auto result = epb::prequential_codelength(
                    config, pooled, epb::PrequentialSchedule::parse(md_schedule), md_recipe.seed);
                std::cout << epb::prequential_to_json(result) << '\n';
            }
        } else if (*pipeline) {
            auto config = epb::load_pipeline_config(pi_config);
            if (*o_pi_seed) config.seed = pi_seed;
            const auto result = epb::run_pipeline(config, pi_out);
            std::cout << result.table_markdown << "\nmanifest\t" << result.manifest_digest << '\n';
        }
    } catch (const epb::NumericError& e) {
        std::cerr << "epb: numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const epb::DataError& e) {
        std::cerr << "epb: data error: " << e.what() << '\n';
        return kData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "epb: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "epb: error: " << e.what() << '\n';
        return kData;
    }
    return kOk;
}
