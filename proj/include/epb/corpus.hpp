#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace epb {

/// Half-open token range [start, end).
struct Span {
    std::uint32_t start = 0;
    std::uint32_t end = 0;

    std::uint32_t size() const noexcept { return end - start; }
    bool operator==(const Span&) const = default;
};

struct Sentence {
    std::uint64_t id = 0;
    std::vector<std::string> tokens;
};

/// Gold labels as sorted, duplicate-free class indices into the schema
/// vocabulary. Single-label tasks always hold exactly one entry.
using LabelSet = std::vector<std::uint32_t>;

struct LabeledExample {
    std::uint64_t sentence_id = 0;
    // Position of the target within its source record. Together with the
    // sentence id this is a stable identity for the example.
    std::uint32_t target = 0;
    Span span1;
    std::optional<Span> span2;
    LabelSet gold;

    bool operator==(const LabeledExample&) const = default;
};

enum class Arity { one_span, two_span };
enum class Labeling { single_label, multi_label };

std::string_view to_string(Arity arity);
std::string_view to_string(Labeling labeling);

class TaskSchema {
public:
    TaskSchema() = default;
    TaskSchema(std::string name, Arity arity, Labeling labeling,
               std::vector<std::string> labels);

    const std::string& name() const noexcept { return name_; }
    Arity arity() const noexcept { return arity_; }
    Labeling labeling() const noexcept { return labeling_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    std::size_t num_classes() const noexcept { return labels_.size(); }

    std::optional<std::uint32_t> index_of(std::string_view label) const;
    const std::string& label(std::uint32_t index) const { return labels_.at(index); }

    /// Appends a label to the vocabulary and returns its index.
    std::uint32_t extend(std::string label);

    /// Throws DataError unless the vocabulary has at least two distinct labels.
    void validate() const;

    std::string to_json() const;
    static TaskSchema from_json(std::string_view text);

private:
    std::string name_;
    Arity arity_ = Arity::one_span;
    Labeling labeling_ = Labeling::single_label;
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::uint32_t> lookup_;
};

TaskSchema load_schema(const std::filesystem::path& path);
void save_schema(const std::filesystem::path& path, const TaskSchema& schema);

/// Sentences by id, remembering insertion order.
class SentenceStore {
public:
    /// Throws DataError on a duplicate id or an empty token list.
    void insert(Sentence sentence);

    const Sentence* find(std::uint64_t id) const;
    /// Throws DataError naming the dangling id.
    const Sentence& at(std::uint64_t id) const;

    std::size_t size() const noexcept { return sentences_.size(); }
    const std::vector<Sentence>& sentences() const noexcept { return sentences_; }

private:
    std::vector<Sentence> sentences_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
};

/// Train/dev/test examples over one shared, immutable sentence store.
struct DatasetSplit {
    TaskSchema schema;
    std::shared_ptr<const SentenceStore> sentences = std::make_shared<SentenceStore>();
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> dev;
    std::vector<LabeledExample> test;
};

enum class Format { conll2003, conll2000, ep_json };
enum class ConllColumn { pos, chunk, ner };
enum class UnknownLabelPolicy { reject, extend };

Format parse_format(std::string_view name);
ConllColumn parse_column(std::string_view name);

struct IngestOptions {
    Format format = Format::ep_json;
    // Column holding the labels for CoNLL input. Defaults to NER for
    // CoNLL-2003 and chunk for CoNLL-2000.
    std::optional<ConllColumn> column;
    UnknownLabelPolicy unknown_labels = UnknownLabelPolicy::reject;
};

struct IngestSources {
    std::optional<std::filesystem::path> train;
    std::optional<std::filesystem::path> dev;
    std::optional<std::filesystem::path> test;
};

/// Sentences and examples parsed from one file.
struct Partition {
    std::vector<Sentence> sentences;
    std::vector<LabeledExample> examples;
};

/// Parses ep-json records. `source` only labels error messages.
Partition parse_ep_json(std::istream& in, TaskSchema& schema,
                        UnknownLabelPolicy policy, std::string_view source = "<input>");

/// Parses CoNLL column data. Sentence ids are assigned from `first_id` upward.
Partition parse_conll(std::istream& in, Format format, ConllColumn column,
                      TaskSchema& schema, UnknownLabelPolicy policy,
                      std::uint64_t first_id, std::string_view source = "<input>");

/// Ingests a single file; every example lands in `train`.
DatasetSplit ingest(const std::filesystem::path& path, const IngestOptions& options,
                    TaskSchema schema);

/// Ingests up to three files into one split over a shared sentence store.
DatasetSplit ingest(const IngestSources& sources, const IngestOptions& options,
                    TaskSchema schema);

/// Writes examples as ep-json, one record per sentence in order of first
/// appearance. Keys are emitted in sorted order.
void write_ep_json(std::ostream& out, std::span<const LabeledExample> examples,
                   const SentenceStore& sentences, const TaskSchema& schema);

/// Reserves round(fraction * |train|) examples (at least one) for dev.
DatasetSplit make_dev_split(const DatasetSplit& split, double fraction, std::uint64_t seed);

struct UnseenLabelDrop {
    DatasetSplit split;
    std::size_t removed_dev = 0;
    std::size_t removed_test = 0;
};

/// Removes dev/test examples whose gold contains any label absent from train.
UnseenLabelDrop drop_unseen_labels(const DatasetSplit& split);

/// Downsamples every test class to the minority count; train and dev untouched.
DatasetSplit rebalance(const DatasetSplit& split, std::uint64_t seed);

/// Dataset directory layout: schema.json plus train/dev/test.jsonl.
void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split);
DatasetSplit load_dataset(const std::filesystem::path& dir);

/// Class counts of a single-label example list, indexed by class.
std::vector<std::size_t> class_counts(std::span<const LabeledExample> examples,
                                      std::size_t num_classes);

} // namespace epb
