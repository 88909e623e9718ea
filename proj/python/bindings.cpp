#include "epb/corpus.hpp"
#include "epb/embedstore.hpp"
#include "epb/errors.hpp"
#include "epb/mdl.hpp"
#include "epb/memaudit.hpp"
#include "epb/metrics.hpp"
#include "epb/pipeline.hpp"
#include "epb/probes.hpp"
#include "epb/synth.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace epb;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

const std::vector<LabeledExample>& pick(const DatasetSplit& split, const std::string& name) {
    if (name == "train") return split.train;
    if (name == "dev") return split.dev;
    if (name == "test") return split.test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

// Gold labels given as ints or as iterables of ints.
std::vector<LabelSet> to_label_sets(const py::sequence& gold) {
    std::vector<LabelSet> out;
    out.reserve(gold.size());
    for (const auto& item : gold) {
        LabelSet set;
        if (py::isinstance<py::int_>(item)) {
            set.push_back(item.cast<std::uint32_t>());
        } else {
            for (const auto& v : item) set.push_back(v.cast<std::uint32_t>());
            std::sort(set.begin(), set.end());
        }
        out.push_back(std::move(set));
    }
    return out;
}

PooledSet to_pooled(const FloatArray& features, const py::sequence& gold) {
    if (features.ndim() != 2) {
        throw std::invalid_argument("features must be a 2-D array");
    }
    const auto n = static_cast<std::size_t>(features.shape(0));
    const auto d = static_cast<std::size_t>(features.shape(1));
    auto labels = to_label_sets(gold);
    if (labels.size() != n) {
        throw std::invalid_argument("features and gold differ in length");
    }
    PooledSet set;
    set.dim = static_cast<std::uint32_t>(d);
    const float* data = features.data();
    for (std::size_t i = 0; i < n; ++i) {
        set.push_back(std::span<const float>(data + i * d, d), std::move(labels[i]));
    }
    return set;
}

FloatArray features_array(const PooledSet& set) {
    FloatArray out({static_cast<py::ssize_t>(set.size()), static_cast<py::ssize_t>(set.dim)});
    std::copy(set.features.begin(), set.features.end(), out.mutable_data());
    return out;
}

py::dict score_dict(const HeuristicScore& s) {
    py::dict d;
    d["accuracy"] = s.accuracy();
    d["coverage"] = s.coverage();
    d["expected_accuracy"] = s.expected_accuracy();
    d["correct"] = s.correct;
    d["covered"] = s.covered;
    d["total"] = s.total;
    return d;
}

py::dict metrics_dict(const MetricReport& r) {
    py::dict d;
    d["n"] = r.n;
    d["accuracy"] = r.accuracy;
    d["weighted_precision"] = r.weighted_precision;
    d["weighted_recall"] = r.weighted_recall;
    d["weighted_f1"] = r.weighted_f1;
    d["macro_precision"] = r.macro_precision;
    d["macro_recall"] = r.macro_recall;
    d["macro_f1"] = r.macro_f1;
    d["mcc"] = r.mcc;
    if (r.multi_label) d["micro_f1"] = r.micro_f1;
    return d;
}

py::dict codelength_dict(const Codelength& c) {
    py::dict d;
    d["data_bits"] = c.data_bits;
    d["complexity_bits"] = c.complexity_bits;
    d["total_bits"] = c.total_bits;
    d["n"] = c.n;
    d["p"] = c.p;
    return d;
}

UniformOptions uniform_options(const DatasetSplit& split, const MemorizationIndex& index,
                               std::uint64_t seed, const std::string& space) {
    UniformOptions options{seed, parse_uniform_space(space), {}};
    if (options.space == UniformSpace::full) {
        options.full_space = uniform_label_space(split.schema, index);
    }
    return options;
}

ProbeConfig make_config(std::size_t input_dim, std::size_t classes, bool multi_label,
                        const std::string& kind, std::size_t hidden, double dropout,
                        std::size_t epochs, std::size_t batch, double lr, double warmup,
                        std::size_t replicas, std::uint64_t seed) {
    ProbeConfig c;
    c.kind = parse_probe_kind(kind);
    c.input_dim = input_dim;
    c.classes = classes;
    c.labeling = multi_label ? Labeling::multi_label : Labeling::single_label;
    c.hidden = hidden;
    c.dropout = dropout;
    c.epochs = epochs;
    c.batch = batch;
    c.lr = lr;
    c.warmup = warmup;
    c.replicas = replicas;
    c.seed = seed;
    return c;
}

} // namespace

PYBIND11_MODULE(_epb, m) {
    m.doc() = "Dataset audit, span probing and codelength toolkit";
    m.attr("__version__") = EPB_VERSION;

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<DatasetSplit>(m, "Dataset")
        .def_static("load", &load_dataset, py::arg("path"))
        .def("save", [](const DatasetSplit& s, const std::filesystem::path& p) { save_dataset(p, s); },
             py::arg("path"))
        .def_property_readonly("labels", [](const DatasetSplit& s) { return s.schema.labels(); })
        .def_property_readonly("task", [](const DatasetSplit& s) { return s.schema.name(); })
        .def_property_readonly("multi_label",
                               [](const DatasetSplit& s) { return s.schema.labeling() == Labeling::multi_label; })
        .def_property_readonly("two_span",
                               [](const DatasetSplit& s) { return s.schema.arity() == Arity::two_span; })
        .def("size", [](const DatasetSplit& s, const std::string& split) { return pick(s, split).size(); },
             py::arg("split"))
        .def("examples",
             [](const DatasetSplit& s, const std::string& split) {
                 py::list out;
                 for (const auto& e : pick(s, split)) {
                     py::dict d;
                     d["sentence_id"] = e.sentence_id;
                     d["target"] = e.target;
                     d["span1"] = py::make_tuple(e.span1.start, e.span1.end);
                     if (e.span2) d["span2"] = py::make_tuple(e.span2->start, e.span2->end);
                     py::list labels;
                     for (auto c : e.gold) labels.append(s.schema.label(c));
                     d["labels"] = labels;
                     out.append(d);
                 }
                 return out;
             },
             py::arg("split"))
        .def("make_dev_split", &make_dev_split, py::arg("fraction"), py::arg("seed"))
        .def("rebalance", &rebalance, py::arg("seed"))
        .def("drop_unseen_labels",
             [](const DatasetSplit& s) {
                 auto r = drop_unseen_labels(s);
                 return py::make_tuple(r.split, r.removed_dev, r.removed_test);
             });

    m.def(
        "ingest",
        [](const std::string& format, const std::optional<std::filesystem::path>& schema,
           const std::optional<std::filesystem::path>& train, const std::optional<std::filesystem::path>& dev,
           const std::optional<std::filesystem::path>& test, const std::optional<std::string>& column,
           bool extend_labels) {
            IngestOptions options;
            options.format = parse_format(format);
            if (column) options.column = parse_column(*column);
            options.unknown_labels = extend_labels ? UnknownLabelPolicy::extend : UnknownLabelPolicy::reject;
            TaskSchema s = schema ? load_schema(*schema) : TaskSchema("task", Arity::one_span, Labeling::single_label, {});
            return ingest(IngestSources{train, dev, test}, options, std::move(s));
        },
        py::arg("format"), py::arg("schema") = py::none(), py::arg("train") = py::none(),
        py::arg("dev") = py::none(), py::arg("test") = py::none(), py::arg("column") = py::none(),
        py::arg("extend_labels") = false, "Parse CoNLL or ep-json files into a Dataset.");

    m.def(
        "audit",
        [](const DatasetSplit& split, std::uint64_t seed, const std::string& uniform_space) {
            auto index = MemorizationIndex::build(split.train, *split.sentences);
            auto report = audit(index, split.test, *split.sentences, uniform_options(split, index, seed, uniform_space));
            py::dict out;
            for (const auto& s : report.scores) out[py::str(std::string(to_string(s.kind)))] = score_dict(s);
            return out;
        },
        py::arg("dataset"), py::arg("seed") = 0, py::arg("uniform_space") = "key",
        "Accuracy, coverage and expected accuracy of each memorization heuristic on the test split.");

    m.def(
        "filter_test",
        [](const DatasetSplit& split, const std::string& heuristic, std::uint64_t seed,
           const std::string& uniform_space) {
            auto index = MemorizationIndex::build(split.train, *split.sentences);
            auto result = filter(split.test, parse_heuristic(heuristic), index, *split.sentences,
                                 uniform_options(split, index, seed, uniform_space));
            auto ids = [](const std::vector<LabeledExample>& v) {
                std::vector<std::pair<std::uint64_t, std::uint32_t>> out;
                for (const auto& e : v) out.emplace_back(e.sentence_id, e.target);
                return out;
            };
            return py::make_tuple(ids(result.kept), ids(result.removed));
        },
        py::arg("dataset"), py::arg("heuristic"), py::arg("seed") = 0, py::arg("uniform_space") = "key",
        "(kept, removed) test example ids as (sentence_id, target) pairs.");

    py::class_<EmbeddingArchive>(m, "Archive")
        .def_static("load", &load_archive, py::arg("path"))
        .def("save", [](const EmbeddingArchive& a, const std::filesystem::path& p) { write_archive(p, a); },
             py::arg("path"))
        .def_property_readonly("dim", &EmbeddingArchive::dim)
        .def("__len__", &EmbeddingArchive::size)
        .def("__contains__", &EmbeddingArchive::contains)
        .def("sentence_ids",
             [](const EmbeddingArchive& a) {
                 std::vector<std::uint64_t> ids;
                 for (const auto& e : a.entries()) ids.push_back(e.sentence_id);
                 return ids;
             })
        .def("matrix",
             [](const EmbeddingArchive& a, std::uint64_t id) {
                 auto values = a.matrix(id);
                 FloatArray out({static_cast<py::ssize_t>(a.entry(id).n_tokens), static_cast<py::ssize_t>(a.dim())});
                 std::copy(values.begin(), values.end(), out.mutable_data());
                 return out;
             },
             py::arg("sentence_id"))
        .def(
            "pool",
            [](const EmbeddingArchive& a, std::uint64_t id, std::pair<std::uint32_t, std::uint32_t> span1,
               std::optional<std::pair<std::uint32_t, std::uint32_t>> span2) {
                std::optional<Span> s2;
                if (span2) s2 = Span{span2->first, span2->second};
                auto v = pool(a, id, Span{span1.first, span1.second}, s2);
                FloatArray out(static_cast<py::ssize_t>(v.size()));
                std::copy(v.begin(), v.end(), out.mutable_data());
                return out;
            },
            py::arg("sentence_id"), py::arg("span1"), py::arg("span2") = py::none());

    m.def(
        "validate_archive",
        [](const std::filesystem::path& path) {
            auto a = load_archive(path);
            std::size_t tokens = 0;
            for (const auto& e : a.entries()) tokens += e.n_tokens;
            py::dict d;
            d["dim"] = a.dim();
            d["sentences"] = a.size();
            d["tokens"] = tokens;
            return d;
        },
        py::arg("path"), "Parse an EPEMB1 file; raises DataError on corruption.");

    m.def(
        "pool_examples",
        [](const EmbeddingArchive& archive, const DatasetSplit& split, const std::string& which) {
            auto pooled = pool_examples(archive, pick(split, which));
            return py::make_tuple(features_array(pooled), pooled.gold);
        },
        py::arg("archive"), py::arg("dataset"), py::arg("split"),
        "Span-pooled (features, gold) for one split.");

    m.def(
        "synth_generate",
        [](const std::string& config_json) {
            SynthConfig config = SynthConfig::from_json(config_json);
            auto out = generate(config);
            py::dict truth;
            for (auto h : kAllHeuristics) {
                truth[py::str(std::string(to_string(h)))] = out.truth.accuracy(h);
            }
            return py::make_tuple(out.split, out.archive, truth);
        },
        py::arg("config_json"),
        "(dataset, archive, ground-truth accuracies) for a JSON synth config.");

    py::class_<ProbeModel>(m, "ProbeModel")
        .def_static("load", &load_model, py::arg("path"))
        .def("save", [](const ProbeModel& model, const std::filesystem::path& p) { save_model(p, model); },
             py::arg("path"))
        .def_property_readonly("kind", [](const ProbeModel& model) { return std::string(to_string(model.config.kind)); })
        .def_property_readonly("parameter_count", [](const ProbeModel& model) { return model.params.size(); })
        .def_property_readonly("selected_replica", [](const ProbeModel& model) { return model.log.selected_replica; })
        .def_property_readonly("step_loss", [](const ProbeModel& model) { return model.log.step_loss; })
        .def("params",
             [](const ProbeModel& model) {
                 FloatArray out(static_cast<py::ssize_t>(model.params.size()));
                 std::copy(model.params.begin(), model.params.end(), out.mutable_data());
                 return out;
             })
        .def("predict",
             [](const ProbeModel& model, const FloatArray& features) {
                 py::list none;
                 for (py::ssize_t i = 0; i < features.shape(0); ++i) none.append(0);
                 return predict(model, to_pooled(features, none));
             },
             py::arg("features"))
        .def("predict_proba",
             [](const ProbeModel& model, const FloatArray& features) {
                 py::list none;
                 for (py::ssize_t i = 0; i < features.shape(0); ++i) none.append(0);
                 return predict_proba(model, to_pooled(features, none));
             },
             py::arg("features"));

    m.def(
        "train_probe",
        [](const FloatArray& features, const py::sequence& gold, std::size_t classes, const std::string& kind,
           bool multi_label, std::optional<FloatArray> dev_features, std::optional<py::sequence> dev_gold,
           std::size_t hidden, double dropout, std::size_t epochs, std::size_t batch, double lr, double warmup,
           std::size_t replicas, std::uint64_t seed) {
            PooledSet train_set = to_pooled(features, gold);
            PooledSet dev;
            dev.dim = train_set.dim;
            if (dev_features && dev_gold) dev = to_pooled(*dev_features, *dev_gold);
            auto config = make_config(train_set.dim, classes, multi_label, kind, hidden, dropout, epochs,
                                      batch, lr, warmup, replicas, seed);
            py::gil_scoped_release release;
            return train(config, train_set, dev);
        },
        py::arg("features"), py::arg("gold"), py::arg("classes"), py::arg("kind") = "linear",
        py::arg("multi_label") = false, py::arg("dev_features") = py::none(), py::arg("dev_gold") = py::none(),
        py::arg("hidden") = 1024, py::arg("dropout") = 0.1, py::arg("epochs") = 3, py::arg("batch") = 16,
        py::arg("lr") = 1e-3, py::arg("warmup") = 0.1, py::arg("replicas") = 3, py::arg("seed") = 0);

    m.def(
        "compute_metrics",
        [](const py::sequence& gold, const py::sequence& predicted, std::size_t classes, bool multi_label) {
            std::vector<std::string> labels;
            for (std::size_t c = 0; c < classes; ++c) labels.push_back(std::to_string(c));
            TaskSchema schema("metrics", Arity::one_span,
                              multi_label ? Labeling::multi_label : Labeling::single_label, labels);
            return metrics_dict(compute_metrics(to_label_sets(gold), to_label_sets(predicted), schema));
        },
        py::arg("gold"), py::arg("predicted"), py::arg("classes"), py::arg("multi_label") = false);

    m.def("drop_percent", &drop_percent, py::arg("acc_original"), py::arg("acc_filtered"));
    m.def(
        "classify_pair",
        [](double base, double random, double ratio) { return std::string(to_string(classify_pair(base, random, ratio))); },
        py::arg("base_drop"), py::arg("random_drop"), py::arg("ratio") = kDefaultSignificanceRatio);

    m.def("complexity_bits", &complexity_bits, py::arg("p"), py::arg("n"));
    m.def(
        "two_part_codelength",
        [](const ProbeModel& model, const FloatArray& features, const py::sequence& gold) {
            return codelength_dict(two_part_codelength(model, to_pooled(features, gold)));
        },
        py::arg("model"), py::arg("features"), py::arg("gold"));
    m.def(
        "prequential_codelength",
        [](const FloatArray& features, const py::sequence& gold, std::size_t classes, const std::string& schedule,
           const std::string& kind, double lr, std::size_t epochs, std::uint64_t seed) {
            PooledSet stream = to_pooled(features, gold);
            ProbeConfig config = make_config(stream.dim, classes, false, kind, 1024, 0.1, epochs, 16, lr, 0.1, 1, seed);
            const auto sched = PrequentialSchedule::parse(schedule);
            PrequentialResult r;
            {
                py::gil_scoped_release release;
                r = prequential_codelength(config, stream, sched, seed);
            }
            py::dict d;
            d["total_bits"] = r.total_bits;
            d["uniform_bits"] = r.uniform_bits;
            d["n"] = r.n;
            d["block_ends"] = r.block_ends;
            d["block_bits"] = r.block_bits;
            return d;
        },
        py::arg("features"), py::arg("gold"), py::arg("classes"), py::arg("schedule") = "default",
        py::arg("kind") = "linear", py::arg("lr") = 1e-3, py::arg("epochs") = 3, py::arg("seed") = 0);

    m.def(
        "run_pipeline",
        [](const std::filesystem::path& config_path, const std::filesystem::path& out_dir, unsigned threads) {
            auto config = load_pipeline_config(config_path);
            PipelineResult r;
            {
                py::gil_scoped_release release;
                r = run_pipeline(config, out_dir, threads);
            }
            py::dict d;
            d["manifest_digest"] = r.manifest_digest;
            d["table"] = r.table_markdown;
            py::list cells;
            for (const auto& c : r.cells) {
                py::dict cell;
                cell["archive"] = c.archive;
                cell["probe"] = std::string(to_string(c.probe));
                cell["original"] = metrics_dict(c.original);
                py::dict drops;
                for (const auto& [h, drop] : c.drops) {
                    drops[py::str(std::string(to_string(h)))] = drop ? py::cast(drop->drop) : py::none();
                }
                cell["drops"] = drops;
                cells.append(cell);
            }
            d["cells"] = cells;
            return d;
        },
        py::arg("config"), py::arg("out_dir"), py::arg("threads") = 1,
        "Run the full workflow described by a pipeline config file.");
}
