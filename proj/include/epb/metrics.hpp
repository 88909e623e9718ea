#pragma once

#include "epb/corpus.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace epb {

/// Counts for the metric suite. Single-label tasks fill a C x C matrix
/// (rows gold, columns predicted); multi-label tasks fill per-class
/// TP/FP/FN/TN counters and an exact-match tally. Merging is entrywise
/// addition, so shards can be accumulated independently.
class ConfusionAccumulator {
public:
    ConfusionAccumulator(std::size_t num_classes, Labeling labeling);

    void add(const LabelSet& gold, const LabelSet& predicted);
    void merge(const ConfusionAccumulator& other);

    std::size_t num_classes() const noexcept { return classes_; }
    Labeling labeling() const noexcept { return labeling_; }
    std::uint64_t total() const noexcept { return total_; }
    std::uint64_t exact_matches() const noexcept { return exact_; }

    /// Single-label only.
    std::uint64_t cell(std::size_t gold, std::size_t predicted) const {
        return matrix_[gold * classes_ + predicted];
    }

    std::uint64_t true_positives(std::size_t c) const;
    std::uint64_t false_positives(std::size_t c) const;
    std::uint64_t false_negatives(std::size_t c) const;
    std::uint64_t true_negatives(std::size_t c) const;

    bool operator==(const ConfusionAccumulator&) const = default;

private:
    std::size_t classes_;
    Labeling labeling_;
    std::uint64_t total_ = 0;
    std::uint64_t exact_ = 0;
    std::vector<std::uint64_t> matrix_; // single-label
    std::vector<std::uint64_t> tp_, fp_, fn_, tn_; // multi-label
};

/// Percentages in [0, 100]; MCC in [-1, 1].
struct MetricReport {
    std::uint64_t n = 0;
    double accuracy = 0.0;
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
    double weighted_f1 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double mcc = 0.0;
    // Multi-label only; 0 otherwise.
    double micro_f1 = 0.0;
    bool multi_label = false;

    bool operator==(const MetricReport&) const = default;
};

MetricReport compute_metrics(const ConfusionAccumulator& confusion);

/// Throws std::invalid_argument on a length mismatch and DataError on a
/// label outside the vocabulary.
MetricReport compute_metrics(std::span<const LabelSet> gold, std::span<const LabelSet> predicted,
                             const TaskSchema& schema);

std::string metrics_to_tsv(const MetricReport& report);
std::string metrics_to_json(const MetricReport& report);
std::string metrics_to_markdown(const MetricReport& report);

/// Relative accuracy reduction in percent. Throws DataError when the
/// original accuracy is zero.
double drop_percent(double acc_original, double acc_filtered);

enum class PairClass { higher, higher_significant, lower, equal };

std::string_view to_string(PairClass value);

inline constexpr double kDefaultSignificanceRatio = 2.0;

/// Compares two drops as reported (rounded to two decimals). The random
/// encoder's drop is "significantly" higher when it exceeds ratio times a
/// positive base drop.
PairClass classify_pair(double base_drop, double random_drop,
                        double ratio = kDefaultSignificanceRatio);

/// Table cell text: the drop with **bold** for higher and *italics* for lower.
std::string markup_cell(double drop, PairClass relation);

struct DropReport {
    double acc_original = 0.0;
    double acc_filtered = 0.0;
    double drop = 0.0;
};

DropReport make_drop_report(double acc_original, double acc_filtered);

} // namespace epb
