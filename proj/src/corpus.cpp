#include "epb/corpus.hpp"

#include "epb/errors.hpp"
#include "epb/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace epb {

using nlohmann::json;

namespace {

std::string where(std::string_view source, std::size_t line) {
    std::ostringstream os;
    os << source << ":" << line << ": ";
    return os.str();
}

std::string rtrim_cr(std::string line) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
        line.pop_back();
    }
    return line;
}

bool is_blank(std::string_view line) {
    return std::all_of(line.begin(), line.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string field;
    while (is >> field) {
        out.push_back(std::move(field));
    }
    return out;
}

std::uint32_t resolve_label(TaskSchema& schema, const std::string& label,
                            UnknownLabelPolicy policy, const std::string& at) {
    if (auto index = schema.index_of(label)) {
        return *index;
    }
    if (policy == UnknownLabelPolicy::extend) {
        return schema.extend(label);
    }
    throw DataError(at + "label '" + label + "' is not in the schema vocabulary");
}

Span parse_span(const json& value, std::size_t n_tokens, const std::string& at,
                const char* field) {
    if (!value.is_array() || value.size() != 2 || !value[0].is_number_integer() ||
        !value[1].is_number_integer()) {
        throw DataError(at + field + " must be a [start, end] integer pair");
    }
    const auto start = value[0].get<std::int64_t>();
    const auto end = value[1].get<std::int64_t>();
    if (start < 0 || start >= end || end > static_cast<std::int64_t>(n_tokens)) {
        std::ostringstream os;
        os << at << field << " [" << start << ", " << end << ") is out of bounds for "
           << n_tokens << " tokens";
        throw DataError(os.str());
    }
    return Span{static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(end)};
}

using TargetCounters = std::unordered_map<std::uint64_t, std::uint32_t>;

Partition parse_ep_json_impl(std::istream& in, TaskSchema& schema, UnknownLabelPolicy policy,
                             std::string_view source, TargetCounters& counters) {
    Partition out;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = rtrim_cr(std::move(raw));
        if (is_blank(line)) {
            continue;
        }
        const std::string at = where(source, line_no);
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(at + "malformed JSON: " + e.what());
        }
        if (!record.is_object()) {
            throw DataError(at + "record must be a JSON object");
        }
        if (!record.contains("id") || !record["id"].is_number_unsigned()) {
            throw DataError(at + "record needs an unsigned integer \"id\"");
        }
        if (!record.contains("tokens") || !record["tokens"].is_array()) {
            throw DataError(at + "record needs a \"tokens\" array");
        }
        Sentence sentence;
        sentence.id = record["id"].get<std::uint64_t>();
        for (const auto& token : record["tokens"]) {
            if (!token.is_string()) {
                throw DataError(at + "tokens must be strings");
            }
            sentence.tokens.push_back(token.get<std::string>());
        }
        if (sentence.tokens.empty()) {
            throw DataError(at + "sentence has no tokens");
        }
        const json targets = record.value("targets", json::array());
        if (!targets.is_array()) {
            throw DataError(at + "\"targets\" must be an array");
        }
        const std::size_t n = sentence.tokens.size();
        for (const auto& target : targets) {
            if (!target.is_object() || !target.contains("span1") || !target.contains("label")) {
                throw DataError(at + "each target needs \"span1\" and \"label\"");
            }
            LabeledExample example;
            example.sentence_id = sentence.id;
            example.target = counters[sentence.id]++;
            example.span1 = parse_span(target["span1"], n, at, "span1");
            if (target.contains("span2")) {
                if (schema.arity() != Arity::two_span) {
                    throw DataError(at + "span2 given for a one-span task");
                }
                example.span2 = parse_span(target["span2"], n, at, "span2");
            } else if (schema.arity() == Arity::two_span) {
                throw DataError(at + "two-span task target is missing span2");
            }
            const json& label = target["label"];
            if (label.is_string()) {
                example.gold.push_back(
                    resolve_label(schema, label.get<std::string>(), policy, at));
            } else if (label.is_array()) {
                for (const auto& item : label) {
                    if (!item.is_string()) {
                        throw DataError(at + "labels must be strings");
                    }
                    example.gold.push_back(
                        resolve_label(schema, item.get<std::string>(), policy, at));
                }
            } else {
                throw DataError(at + "\"label\" must be a string or an array of strings");
            }
            std::sort(example.gold.begin(), example.gold.end());
            if (std::adjacent_find(example.gold.begin(), example.gold.end()) !=
                example.gold.end()) {
                throw DataError(at + "duplicate label in target");
            }
            if (example.gold.empty()) {
                throw DataError(at + "target has no gold label");
            }
            if (schema.labeling() == Labeling::single_label && example.gold.size() != 1) {
                throw DataError(at + "single-label task target carries several labels");
            }
            out.examples.push_back(std::move(example));
        }
        out.sentences.push_back(std::move(sentence));
    }
    return out;
}

struct ConllToken {
    std::string token;
    std::string tag;
    std::size_t line = 0;
};

void flush_conll_sentence(std::vector<ConllToken>& pending, ConllColumn column,
                          TaskSchema& schema, UnknownLabelPolicy policy,
                          std::string_view source, std::uint64_t id, Partition& out) {
    if (pending.empty()) {
        return;
    }
    if (pending.size() >= std::numeric_limits<std::uint32_t>::max()) {
        throw DataError(where(source, pending.front().line) + "sentence too long");
    }
    Sentence sentence;
    sentence.id = id;
    for (const auto& t : pending) {
        sentence.tokens.push_back(t.token);
    }

    std::uint32_t next_target = 0;
    auto emit = [&](std::uint32_t start, std::uint32_t end, const std::string& label,
                    std::size_t line) {
        LabeledExample example;
        example.sentence_id = id;
        example.target = next_target++;
        example.span1 = Span{start, end};
        example.gold = {resolve_label(schema, label, policy, where(source, line))};
        out.examples.push_back(std::move(example));
    };

    if (column == ConllColumn::pos) {
        for (std::uint32_t i = 0; i < pending.size(); ++i) {
            emit(i, i + 1, pending[i].tag, pending[i].line);
        }
    } else {
        // BIO merge. I-X continues only a run of the same type, so both IOB1
        // (I- opens a chunk) and IOB2 (B- opens a chunk) are accepted.
        bool open = false;
        std::uint32_t open_start = 0;
        std::string open_type;
        std::size_t open_line = 0;
        auto close = [&](std::uint32_t end) {
            if (open) {
                emit(open_start, end, open_type, open_line);
                open = false;
            }
        };
        for (std::uint32_t i = 0; i < pending.size(); ++i) {
            const std::string& tag = pending[i].tag;
            if (tag == "O") {
                close(i);
                emit(i, i + 1, "O", pending[i].line);
                continue;
            }
            if (tag.size() < 3 || tag[1] != '-' || (tag[0] != 'B' && tag[0] != 'I')) {
                throw DataError(where(source, pending[i].line) + "malformed BIO tag '" + tag +
                                "'");
            }
            const std::string type = tag.substr(2);
            if (tag[0] == 'I' && open && open_type == type) {
                continue;
            }
            close(i);
            open = true;
            open_start = i;
            open_type = type;
            open_line = pending[i].line;
        }
        close(static_cast<std::uint32_t>(pending.size()));
    }
    out.sentences.push_back(std::move(sentence));
    pending.clear();
}

ConllColumn default_column(Format format) {
    return format == Format::conll2000 ? ConllColumn::chunk : ConllColumn::ner;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return in;
}

} // namespace

std::string_view to_string(Arity arity) {
    return arity == Arity::one_span ? "one-span" : "two-span";
}

std::string_view to_string(Labeling labeling) {
    return labeling == Labeling::single_label ? "single-label" : "multi-label";
}

TaskSchema::TaskSchema(std::string name, Arity arity, Labeling labeling,
                       std::vector<std::string> labels)
    : name_(std::move(name)), arity_(arity), labeling_(labeling) {
    for (auto& label : labels) {
        if (lookup_.count(label) != 0) {
            throw DataError("duplicate label '" + label + "' in schema");
        }
        extend(std::move(label));
    }
}

std::optional<std::uint32_t> TaskSchema::index_of(std::string_view label) const {
    const auto it = lookup_.find(std::string(label));
    if (it == lookup_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::uint32_t TaskSchema::extend(std::string label) {
    const auto index = static_cast<std::uint32_t>(labels_.size());
    lookup_.emplace(label, index);
    labels_.push_back(std::move(label));
    return index;
}

void TaskSchema::validate() const {
    if (labels_.size() < 2) {
        throw DataError("schema '" + name_ + "' needs at least two labels");
    }
}

std::string TaskSchema::to_json() const {
    json j;
    j["name"] = name_;
    j["arity"] = std::string(to_string(arity_));
    j["labeling"] = std::string(to_string(labeling_));
    j["labels"] = labels_;
    return j.dump(2);
}

TaskSchema TaskSchema::from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("malformed schema: ") + e.what());
    }
    if (!j.is_object() || !j.contains("labels") || !j["labels"].is_array()) {
        throw DataError("schema needs a \"labels\" array");
    }
    Arity arity = Arity::one_span;
    const std::string arity_name = j.value("arity", "one-span");
    if (arity_name == "two-span") {
        arity = Arity::two_span;
    } else if (arity_name != "one-span") {
        throw DataError("unknown arity '" + arity_name + "'");
    }
    Labeling labeling = Labeling::single_label;
    const std::string labeling_name = j.value("labeling", "single-label");
    if (labeling_name == "multi-label") {
        labeling = Labeling::multi_label;
    } else if (labeling_name != "single-label") {
        throw DataError("unknown labeling '" + labeling_name + "'");
    }
    std::vector<std::string> labels;
    for (const auto& label : j["labels"]) {
        if (!label.is_string()) {
            throw DataError("schema labels must be strings");
        }
        labels.push_back(label.get<std::string>());
    }
    return TaskSchema(j.value("name", "task"), arity, labeling, std::move(labels));
}

TaskSchema load_schema(const std::filesystem::path& path) {
    auto in = open_input(path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return TaskSchema::from_json(buffer.str());
}

void save_schema(const std::filesystem::path& path, const TaskSchema& schema) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << schema.to_json() << "\n";
}

void SentenceStore::insert(Sentence sentence) {
    if (sentence.tokens.empty()) {
        throw DataError("sentence " + std::to_string(sentence.id) + " has no tokens");
    }
    if (const auto it = index_.find(sentence.id); it != index_.end()) {
        // The same sentence may be listed by several files of one dataset.
        if (sentences_[it->second].tokens != sentence.tokens) {
            throw DataError("sentence id " + std::to_string(sentence.id) +
                            " is used for two different sentences");
        }
        return;
    }
    index_.emplace(sentence.id, sentences_.size());
    sentences_.push_back(std::move(sentence));
}

const Sentence* SentenceStore::find(std::uint64_t id) const {
    const auto it = index_.find(id);
    return it == index_.end() ? nullptr : &sentences_[it->second];
}

const Sentence& SentenceStore::at(std::uint64_t id) const {
    if (const Sentence* s = find(id)) {
        return *s;
    }
    throw DataError("dangling sentence id " + std::to_string(id));
}

Format parse_format(std::string_view name) {
    if (name == "conll2003") return Format::conll2003;
    if (name == "conll2000") return Format::conll2000;
    if (name == "ep-json") return Format::ep_json;
    throw std::invalid_argument("unknown format '" + std::string(name) + "'");
}

ConllColumn parse_column(std::string_view name) {
    if (name == "pos") return ConllColumn::pos;
    if (name == "chunk") return ConllColumn::chunk;
    if (name == "ner") return ConllColumn::ner;
    throw std::invalid_argument("unknown column '" + std::string(name) + "'");
}

Partition parse_ep_json(std::istream& in, TaskSchema& schema, UnknownLabelPolicy policy,
                        std::string_view source) {
    TargetCounters counters;
    return parse_ep_json_impl(in, schema, policy, source, counters);
}

Partition parse_conll(std::istream& in, Format format, ConllColumn column, TaskSchema& schema,
                      UnknownLabelPolicy policy, std::uint64_t first_id,
                      std::string_view source) {
    if (format == Format::ep_json) {
        throw std::invalid_argument("parse_conll called with ep-json format");
    }
    if (format == Format::conll2000 && column == ConllColumn::ner) {
        throw std::invalid_argument("CoNLL-2000 has no NER column");
    }
    const std::size_t n_columns = format == Format::conll2003 ? 4 : 3;
    const std::size_t tag_column = column == ConllColumn::pos     ? 1
                                   : column == ConllColumn::chunk ? 2
                                                                  : 3;
    Partition out;
    std::vector<ConllToken> pending;
    std::uint64_t next_id = first_id;
    std::string raw;
    std::size_t line_no = 0;
    auto flush = [&] {
        if (!pending.empty()) {
            flush_conll_sentence(pending, column, schema, policy, source, next_id++, out);
        }
    };
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = rtrim_cr(std::move(raw));
        if (is_blank(line)) {
            flush();
            continue;
        }
        auto fields = split_ws(line);
        if (fields.front() == "-DOCSTART-") {
            flush();
            continue;
        }
        if (fields.size() != n_columns) {
            std::ostringstream os;
            os << where(source, line_no) << "expected " << n_columns << " columns, got "
               << fields.size();
            throw DataError(os.str());
        }
        pending.push_back(ConllToken{fields[0], fields[tag_column], line_no});
    }
    flush();
    return out;
}

DatasetSplit ingest(const std::filesystem::path& path, const IngestOptions& options,
                    TaskSchema schema) {
    IngestSources sources;
    sources.train = path;
    return ingest(sources, options, std::move(schema));
}

DatasetSplit ingest(const IngestSources& sources, const IngestOptions& options,
                    TaskSchema schema) {
    DatasetSplit split;
    auto store = std::make_shared<SentenceStore>();
    TargetCounters counters;
    std::uint64_t next_id = 0;
    const ConllColumn column = options.column.value_or(default_column(options.format));

    auto load = [&](const std::optional<std::filesystem::path>& path) {
        if (!path) {
            return std::vector<LabeledExample>{};
        }
        auto in = open_input(*path);
        Partition part;
        if (options.format == Format::ep_json) {
            part = parse_ep_json_impl(in, schema, options.unknown_labels, path->string(),
                                      counters);
        } else {
            part = parse_conll(in, options.format, column, schema, options.unknown_labels,
                               next_id, path->string());
            next_id += part.sentences.size();
        }
        for (auto& sentence : part.sentences) {
            store->insert(std::move(sentence));
        }
        return std::move(part.examples);
    };
    split.train = load(sources.train);
    split.dev = load(sources.dev);
    split.test = load(sources.test);
    if (!split.train.empty() || !split.dev.empty() || !split.test.empty()) {
        schema.validate();
    }
    split.schema = std::move(schema);
    split.sentences = std::move(store);
    return split;
}

void write_ep_json(std::ostream& out, std::span<const LabeledExample> examples,
                   const SentenceStore& sentences, const TaskSchema& schema) {
    std::vector<std::uint64_t> order;
    std::unordered_map<std::uint64_t, std::vector<const LabeledExample*>> grouped;
    for (const auto& example : examples) {
        auto [it, inserted] = grouped.try_emplace(example.sentence_id);
        if (inserted) {
            order.push_back(example.sentence_id);
        }
        it->second.push_back(&example);
    }
    for (const std::uint64_t id : order) {
        const Sentence& sentence = sentences.at(id);
        json record;
        record["id"] = id;
        record["tokens"] = sentence.tokens;
        json targets = json::array();
        for (const LabeledExample* example : grouped[id]) {
            json target;
            target["span1"] = {example->span1.start, example->span1.end};
            if (example->span2) {
                target["span2"] = {example->span2->start, example->span2->end};
            }
            if (schema.labeling() == Labeling::single_label) {
                target["label"] = schema.label(example->gold.front());
            } else {
                json labels = json::array();
                for (const auto index : example->gold) {
                    labels.push_back(schema.label(index));
                }
                target["label"] = std::move(labels);
            }
            targets.push_back(std::move(target));
        }
        record["targets"] = std::move(targets);
        out << record.dump() << "\n";
    }
}

DatasetSplit make_dev_split(const DatasetSplit& split, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("dev fraction must lie strictly between 0 and 1");
    }
    if (!split.dev.empty()) {
        throw DataError("dataset already has a dev split");
    }
    const std::size_t n = split.train.size();
    const auto rounded = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
    const std::size_t dev_size = std::max<std::size_t>(1, rounded);
    if (dev_size >= n) {
        throw DataError("too few training examples (" + std::to_string(n) +
                        ") to reserve a dev split");
    }
    std::vector<std::size_t> indices(n);
    for (std::size_t i = 0; i < n; ++i) {
        indices[i] = i;
    }
    Rng rng(derive_seed(seed, Stream::dev_split));
    rng.shuffle(std::span<std::size_t>(indices));
    std::vector<bool> to_dev(n, false);
    for (std::size_t i = 0; i < dev_size; ++i) {
        to_dev[indices[i]] = true;
    }
    DatasetSplit out;
    out.schema = split.schema;
    out.sentences = split.sentences;
    out.test = split.test;
    for (std::size_t i = 0; i < n; ++i) {
        (to_dev[i] ? out.dev : out.train).push_back(split.train[i]);
    }
    return out;
}

UnseenLabelDrop drop_unseen_labels(const DatasetSplit& split) {
    std::vector<bool> seen(split.schema.num_classes(), false);
    for (const auto& example : split.train) {
        for (const auto label : example.gold) {
            seen[label] = true;
        }
    }
    auto keep = [&](const LabeledExample& example) {
        return std::all_of(example.gold.begin(), example.gold.end(),
                           [&](std::uint32_t label) { return seen[label]; });
    };
    UnseenLabelDrop result;
    result.split.schema = split.schema;
    result.split.sentences = split.sentences;
    result.split.train = split.train;
    for (const auto& example : split.dev) {
        if (keep(example)) {
            result.split.dev.push_back(example);
        } else {
            ++result.removed_dev;
        }
    }
    for (const auto& example : split.test) {
        if (keep(example)) {
            result.split.test.push_back(example);
        } else {
            ++result.removed_test;
        }
    }
    return result;
}

std::vector<std::size_t> class_counts(std::span<const LabeledExample> examples,
                                      std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& example : examples) {
        for (const auto label : example.gold) {
            ++counts.at(label);
        }
    }
    return counts;
}

DatasetSplit rebalance(const DatasetSplit& split, std::uint64_t seed) {
    if (split.schema.labeling() != Labeling::single_label) {
        throw DataError("rebalance needs a single-label task");
    }
    const std::size_t classes = split.schema.num_classes();
    std::vector<std::vector<std::size_t>> members(classes);
    for (std::size_t i = 0; i < split.test.size(); ++i) {
        members[split.test[i].gold.front()].push_back(i);
    }
    std::size_t minority = std::numeric_limits<std::size_t>::max();
    for (std::size_t c = 0; c < classes; ++c) {
        if (members[c].empty()) {
            throw DataError("class '" + split.schema.label(static_cast<std::uint32_t>(c)) +
                            "' has no test examples");
        }
        minority = std::min(minority, members[c].size());
    }
    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < classes; ++c) {
        Rng rng(derive_seed(seed, Stream::rebalance, c));
        rng.shuffle(std::span<std::size_t>(members[c]));
        chosen.insert(chosen.end(), members[c].begin(),
                      members[c].begin() + static_cast<std::ptrdiff_t>(minority));
    }
    std::sort(chosen.begin(), chosen.end());
    DatasetSplit out;
    out.schema = split.schema;
    out.sentences = split.sentences;
    out.train = split.train;
    out.dev = split.dev;
    for (const auto i : chosen) {
        out.test.push_back(split.test[i]);
    }
    return out;
}

void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split) {
    std::filesystem::create_directories(dir);
    save_schema(dir / "schema.json", split.schema);
    auto write = [&](const char* name, const std::vector<LabeledExample>& examples) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) {
            throw DataError("cannot write " + (dir / name).string());
        }
        write_ep_json(out, examples, *split.sentences, split.schema);
    };
    write("train.jsonl", split.train);
    write("dev.jsonl", split.dev);
    write("test.jsonl", split.test);
}

DatasetSplit load_dataset(const std::filesystem::path& dir) {
    IngestSources sources;
    auto optional_file = [&](const char* name) -> std::optional<std::filesystem::path> {
        const auto path = dir / name;
        if (std::filesystem::exists(path)) {
            return path;
        }
        return std::nullopt;
    };
    sources.train = optional_file("train.jsonl");
    sources.dev = optional_file("dev.jsonl");
    sources.test = optional_file("test.jsonl");
    IngestOptions options;
    options.format = Format::ep_json;
    return ingest(sources, options, load_schema(dir / "schema.json"));
}

} // namespace epb
