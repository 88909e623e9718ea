#include "epb/memaudit.hpp"

#include "epb/errors.hpp"
#include "epb/numfmt.hpp"
#include "epb/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace epb {

std::size_t SpanKeyHash::operator()(const SpanKey& key) const noexcept {
    std::size_t h = std::hash<std::string>{}(key.first);
    if (key.second) {
        h ^= std::hash<std::string>{}(*key.second) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
}

std::string span_surface(const Sentence& sentence, Span span) {
    std::string out;
    for (std::uint32_t i = span.start; i < span.end; ++i) {
        if (i != span.start) {
            out.push_back(' ');
        }
        out += sentence.tokens[i];
    }
    return out;
}

SpanKey make_key(const Sentence& sentence, const LabeledExample& example) {
    auto check = [&](Span span) {
        if (span.start >= span.end || span.end > sentence.tokens.size()) {
            throw DataError("span [" + std::to_string(span.start) + ", " +
                            std::to_string(span.end) + ") overflows sentence " +
                            std::to_string(sentence.id));
        }
    };
    check(example.span1);
    SpanKey key;
    key.first = span_surface(sentence, example.span1);
    if (example.span2) {
        check(*example.span2);
        key.second = span_surface(sentence, *example.span2);
    }
    return key;
}

SpanKey make_key(const SentenceStore& sentences, const LabeledExample& example) {
    return make_key(sentences.at(example.sentence_id), example);
}

MemorizationIndex MemorizationIndex::build(std::span<const LabeledExample> train,
                                           const SentenceStore& sentences) {
    MemorizationIndex index;
    std::set<LabelSet> seen;
    for (const auto& example : train) {
        LabelCounts& counts = index.entries_[make_key(sentences, example)];
        ++counts.counts[example.gold];
        ++counts.total;
        ++index.total_;
        seen.insert(example.gold);
    }
    index.label_sets_.assign(seen.begin(), seen.end());
    return index;
}

const LabelCounts* MemorizationIndex::find(const SpanKey& key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

std::string_view to_string(Heuristic heuristic) {
    switch (heuristic) {
    case Heuristic::mem_exact:
        return "mem-exact";
    case Heuristic::mem_freq:
        return "mem-freq";
    case Heuristic::mem_uniform:
        return "mem-uniform";
    }
    return "?";
}

Heuristic parse_heuristic(std::string_view name) {
    for (const auto h : kAllHeuristics) {
        if (to_string(h) == name) {
            return h;
        }
    }
    throw std::invalid_argument("unknown heuristic '" + std::string(name) + "'");
}

UniformSpace parse_uniform_space(std::string_view name) {
    if (name == "key") return UniformSpace::key;
    if (name == "full") return UniformSpace::full;
    throw std::invalid_argument("unknown uniform space '" + std::string(name) + "'");
}

HeuristicPrediction mem_exact(const MemorizationIndex& index, const SpanKey& key,
                              const LabelSet& gold) {
    HeuristicPrediction out;
    out.kind = Heuristic::mem_exact;
    const LabelCounts* counts = index.find(key);
    if (counts == nullptr || counts->counts.size() != 1) {
        return out;
    }
    out.predicted = counts->counts.begin()->first;
    out.classifiable = *out.predicted == gold;
    out.expected = out.classifiable ? 1.0 : 0.0;
    return out;
}

HeuristicPrediction mem_freq(const MemorizationIndex& index, const SpanKey& key,
                             const LabelSet& gold) {
    HeuristicPrediction out;
    out.kind = Heuristic::mem_freq;
    const LabelCounts* counts = index.find(key);
    if (counts == nullptr) {
        return out;
    }
    const LabelSet* best = nullptr;
    std::uint64_t best_count = 0;
    for (const auto& [labels, count] : counts->counts) {
        if (count > best_count) { // strict: earlier canonical order wins ties
            best = &labels;
            best_count = count;
        }
    }
    out.predicted = *best;
    out.classifiable = *best == gold;
    const auto it = counts->counts.find(gold);
    const std::uint64_t gold_count = it == counts->counts.end() ? 0 : it->second;
    out.expected = static_cast<double>(gold_count) / static_cast<double>(counts->total);
    return out;
}

std::vector<LabelSet> uniform_label_space(const TaskSchema& schema,
                                          const MemorizationIndex& index) {
    if (schema.labeling() == Labeling::multi_label) {
        return index.label_sets();
    }
    std::vector<LabelSet> space;
    for (std::uint32_t c = 0; c < schema.num_classes(); ++c) {
        space.push_back({c});
    }
    return space;
}

HeuristicPrediction mem_uniform(const MemorizationIndex& index, const SpanKey& key,
                                const LabeledExample& example, const UniformOptions& options) {
    HeuristicPrediction out;
    out.kind = Heuristic::mem_uniform;
    const LabelCounts* counts = index.find(key);
    if (counts == nullptr) {
        return out;
    }
    std::vector<const LabelSet*> candidates;
    if (options.space == UniformSpace::key) {
        for (const auto& entry : counts->counts) {
            candidates.push_back(&entry.first);
        }
    } else {
        for (const auto& labels : options.full_space) {
            candidates.push_back(&labels);
        }
    }
    if (candidates.empty()) {
        return out;
    }
    const bool gold_possible =
        std::any_of(candidates.begin(), candidates.end(),
                    [&](const LabelSet* labels) { return *labels == example.gold; });
    out.expected = gold_possible ? 1.0 / static_cast<double>(candidates.size()) : 0.0;
    Rng rng(derive_seed(options.seed, Stream::mem_uniform, example.sentence_id, example.target));
    out.predicted = *candidates[rng.below(candidates.size())];
    out.classifiable = *out.predicted == example.gold;
    return out;
}

HeuristicPrediction predict(Heuristic heuristic, const MemorizationIndex& index,
                            const SpanKey& key, const LabeledExample& example,
                            const UniformOptions& options) {
    switch (heuristic) {
    case Heuristic::mem_exact:
        return mem_exact(index, key, example.gold);
    case Heuristic::mem_freq:
        return mem_freq(index, key, example.gold);
    case Heuristic::mem_uniform:
        return mem_uniform(index, key, example, options);
    }
    throw std::invalid_argument("unknown heuristic");
}

double HeuristicScore::accuracy() const noexcept {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double HeuristicScore::coverage() const noexcept {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(covered) / static_cast<double>(total);
}

double HeuristicScore::expected_accuracy() const noexcept {
    return total == 0 ? 0.0 : 100.0 * expected_sum / static_cast<double>(total);
}

const HeuristicScore& AuditReport::score(Heuristic heuristic) const {
    for (const auto& s : scores) {
        if (s.kind == heuristic) {
            return s;
        }
    }
    throw std::out_of_range("heuristic missing from audit report");
}

AuditReport audit(const MemorizationIndex& index, std::span<const LabeledExample> test,
                  const SentenceStore& sentences, const UniformOptions& options) {
    if (test.empty()) {
        throw DataError("cannot audit an empty test set");
    }
    AuditReport report;
    for (const auto h : kAllHeuristics) {
        report.scores.push_back(HeuristicScore{h});
    }
    for (const auto& example : test) {
        const SpanKey key = make_key(sentences, example);
        for (auto& score : report.scores) {
            const auto prediction = predict(score.kind, index, key, example, options);
            ++score.total;
            score.correct += prediction.classifiable ? 1 : 0;
            score.covered += prediction.abstained() ? 0 : 1;
            score.expected_sum += prediction.expected;
        }
    }
    return report;
}

FilterResult filter(std::span<const LabeledExample> test, Heuristic heuristic,
                    const MemorizationIndex& index, const SentenceStore& sentences,
                    const UniformOptions& options) {
    FilterResult out;
    for (const auto& example : test) {
        const auto prediction =
            predict(heuristic, index, make_key(sentences, example), example, options);
        (prediction.classifiable ? out.removed : out.kept).push_back(example);
    }
    return out;
}

std::string audit_to_tsv(const AuditReport& report) {
    std::ostringstream os;
    os << "heuristic\taccuracy\tcoverage\texpected_accuracy\tclassifiable\tcovered\ttotal\n";
    for (const auto& s : report.scores) {
        os << to_string(s.kind) << '\t' << format_fixed(s.accuracy()) << '\t'
           << format_fixed(s.coverage()) << '\t' << format_fixed(s.expected_accuracy()) << '\t'
           << s.correct << '\t' << s.covered << '\t' << s.total << '\n';
    }
    return os.str();
}

std::string audit_to_json(const AuditReport& report) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : report.scores) {
        j.push_back({{"heuristic", std::string(to_string(s.kind))},
                     {"accuracy", s.accuracy()},
                     {"coverage", s.coverage()},
                     {"expected_accuracy", s.expected_accuracy()},
                     {"classifiable", s.correct},
                     {"covered", s.covered},
                     {"total", s.total}});
    }
    return nlohmann::json{{"heuristics", j}}.dump(2);
}

std::string audit_to_markdown(const AuditReport& report, std::string_view dataset) {
    std::ostringstream os;
    os << "| Dataset | Mem-Exact | Mem-Freq | Mem-Uniform |\n";
    os << "|---|---:|---:|---:|\n";
    os << "| " << dataset;
    for (const auto h : kAllHeuristics) {
        os << " | " << format_fixed(report.score(h).accuracy());
    }
    os << " |\n| coverage";
    for (const auto h : kAllHeuristics) {
        os << " | " << format_fixed(report.score(h).coverage());
    }
    os << " |\n| expected";
    for (const auto h : kAllHeuristics) {
        os << " | " << format_fixed(report.score(h).expected_accuracy());
    }
    os << " |\n";
    return os.str();
}

} // namespace epb
