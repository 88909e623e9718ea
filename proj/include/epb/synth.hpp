#pragma once

#include "epb/corpus.hpp"
#include "epb/embedstore.hpp"
#include "epb/memaudit.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace epb {

enum class EmbeddingMode { informative, noise };

std::string_view to_string(EmbeddingMode mode);
EmbeddingMode parse_embedding_mode(std::string_view name);

/// Synthetic probing corpus. Key types are split into four disjoint pools:
///   exact      seen in train with one fixed label
///   ambiguous  seen in train with two distinct labels
///   unseen     test only
///   filler     train only, one fixed label each
/// The test set draws round(rho_exact * n_test) points from the exact pool,
/// round(rho_ambig * n_test) from the ambiguous pool and the rest from the
/// unseen pool.
struct SynthConfig {
    std::size_t vocab_size = 256;
    std::size_t classes = 4;
    std::size_t n_train = 1000;
    std::size_t n_test = 200;
    double rho_exact = 0.5;
    double rho_ambig = 0.0;
    std::size_t exact_keys = 16;
    std::size_t ambiguous_keys = 16;
    std::size_t unseen_keys = 16;
    std::size_t filler_keys = 16;
    Arity arity = Arity::one_span;
    EmbeddingMode mode = EmbeddingMode::informative;
    std::size_t dim = 16;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on out-of-range values and DataError when
    /// the vocabulary cannot hold the requested key pools.
    void validate() const;

    std::string to_json() const;
    static SynthConfig from_json(std::string_view text);
};

enum class KeyPool { exact, ambiguous, unseen, filler };
std::string_view to_string(KeyPool pool);

/// Per test point classifiability, enumerated from the generator's own key
/// ids and label counts (not from surfaces).
struct GroundTruthPoint {
    std::uint64_t sentence_id = 0;
    std::uint32_t target = 0;
    std::size_t key = 0;
    KeyPool pool = KeyPool::unseen;
    bool mem_exact = false;
    bool mem_freq = false;
    bool mem_uniform = false;      // draw under UniformSpace::key with the config seed
    double mem_freq_expected = 0.0;
    double mem_uniform_expected = 0.0;
};

struct GroundTruth {
    std::vector<GroundTruthPoint> points;

    std::size_t count(Heuristic heuristic) const;
    double accuracy(Heuristic heuristic) const; // percent
    double expected_accuracy(Heuristic heuristic) const;
    std::string to_json() const;
};

struct SynthOutput {
    DatasetSplit split;
    EmbeddingArchive archive{1};
    GroundTruth truth;
};

/// Pure function of the config. The corpus does not depend on the embedding
/// mode, so informative and noise archives for one seed describe the same
/// sentences.
SynthOutput generate(const SynthConfig& config);

/// Writes schema/train/dev/test files, `<mode>.epemb` and ground_truth.json.
void write_synth(const std::filesystem::path& dir, const SynthOutput& output,
                 const SynthConfig& config);

} // namespace epb
