#pragma once

#include "epb/corpus.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace epb {

/// Surface form of a span (or ordered span pair): tokens joined by U+0020,
/// case-sensitive.
struct SpanKey {
    std::string first;
    std::optional<std::string> second;

    bool operator==(const SpanKey&) const = default;
};

struct SpanKeyHash {
    std::size_t operator()(const SpanKey& key) const noexcept;
};

std::string span_surface(const Sentence& sentence, Span span);
SpanKey make_key(const Sentence& sentence, const LabeledExample& example);
/// Throws DataError when the sentence id is dangling or a span overflows.
SpanKey make_key(const SentenceStore& sentences, const LabeledExample& example);

/// Multiset of label sets observed for one key. Map order is the canonical
/// class-index order, which doubles as the tie-break order.
struct LabelCounts {
    std::map<LabelSet, std::uint64_t> counts;
    std::uint64_t total = 0;
};

class MemorizationIndex {
public:
    static MemorizationIndex build(std::span<const LabeledExample> train,
                                   const SentenceStore& sentences);

    const LabelCounts* find(const SpanKey& key) const;

    std::size_t size() const noexcept { return entries_.size(); }
    std::uint64_t total_count() const noexcept { return total_; }

    /// Distinct label sets seen anywhere in training, in canonical order.
    const std::vector<LabelSet>& label_sets() const noexcept { return label_sets_; }

    const std::unordered_map<SpanKey, LabelCounts, SpanKeyHash>& entries() const noexcept {
        return entries_;
    }

private:
    std::unordered_map<SpanKey, LabelCounts, SpanKeyHash> entries_;
    std::vector<LabelSet> label_sets_;
    std::uint64_t total_ = 0;
};

enum class Heuristic { mem_exact, mem_freq, mem_uniform };

inline constexpr Heuristic kAllHeuristics[] = {Heuristic::mem_exact, Heuristic::mem_freq,
                                               Heuristic::mem_uniform};

std::string_view to_string(Heuristic heuristic);
Heuristic parse_heuristic(std::string_view name);

/// Support Mem-Uniform samples from: the key's observed labels, or the
/// whole label space.
enum class UniformSpace { key, full };
UniformSpace parse_uniform_space(std::string_view name);

struct HeuristicPrediction {
    Heuristic kind = Heuristic::mem_exact;
    std::optional<LabelSet> predicted;
    bool classifiable = false;
    // Mem-Exact: 1 when classifiable. Mem-Freq: p(gold | key).
    // Mem-Uniform: expected accuracy of a uniform draw.
    double expected = 0.0;

    bool abstained() const noexcept { return !predicted.has_value(); }
};

HeuristicPrediction mem_exact(const MemorizationIndex& index, const SpanKey& key,
                              const LabelSet& gold);

HeuristicPrediction mem_freq(const MemorizationIndex& index, const SpanKey& key,
                             const LabelSet& gold);

struct UniformOptions {
    std::uint64_t seed = 0;
    UniformSpace space = UniformSpace::key;
    // Candidates for UniformSpace::full; see uniform_label_space().
    std::vector<LabelSet> full_space;
};

/// Label space for `--uniform-space full`: every vocabulary class for
/// single-label tasks, every label set seen in training for multi-label ones.
std::vector<LabelSet> uniform_label_space(const TaskSchema& schema,
                                          const MemorizationIndex& index);

/// The draw is keyed by (seed, sentence id, target), so it does not depend
/// on where the example sits in the test list.
HeuristicPrediction mem_uniform(const MemorizationIndex& index, const SpanKey& key,
                                const LabeledExample& example, const UniformOptions& options);

HeuristicPrediction predict(Heuristic heuristic, const MemorizationIndex& index,
                            const SpanKey& key, const LabeledExample& example,
                            const UniformOptions& options);

struct HeuristicScore {
    Heuristic kind = Heuristic::mem_exact;
    std::uint64_t total = 0;
    std::uint64_t correct = 0;
    std::uint64_t covered = 0;
    double expected_sum = 0.0;

    double accuracy() const noexcept;
    double coverage() const noexcept;
    double expected_accuracy() const noexcept;

    bool operator==(const HeuristicScore&) const = default;
};

struct AuditReport {
    std::vector<HeuristicScore> scores;

    const HeuristicScore& score(Heuristic heuristic) const;
    bool operator==(const AuditReport&) const = default;
};

/// Throws DataError on an empty test set.
AuditReport audit(const MemorizationIndex& index, std::span<const LabeledExample> test,
                  const SentenceStore& sentences, const UniformOptions& options);

struct FilterResult {
    std::vector<LabeledExample> kept;
    std::vector<LabeledExample> removed;
};

/// Splits the test set into heuristically classifiable points (removed) and
/// the rest (kept), preserving order in both.
FilterResult filter(std::span<const LabeledExample> test, Heuristic heuristic,
                    const MemorizationIndex& index, const SentenceStore& sentences,
                    const UniformOptions& options);

std::string audit_to_tsv(const AuditReport& report);
std::string audit_to_json(const AuditReport& report);
std::string audit_to_markdown(const AuditReport& report, std::string_view dataset);

} // namespace epb
