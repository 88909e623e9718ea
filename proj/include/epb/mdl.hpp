#pragma once

#include "epb/probes.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace epb {

inline constexpr double kProbabilityFloor = 1e-12;

/// Two-part code: data bits under the fitted model plus (p/2) log2 n.
struct Codelength {
    double data_bits = 0.0;
    double complexity_bits = 0.0;
    double total_bits = 0.0;
    std::uint64_t n = 0;
    std::uint64_t p = 0;
    double c_k = 0.0; // residual constant, taken as 0
};

/// Sum of -log2 max(p, 1e-12) over the given gold probabilities. Throws
/// NumericError on a non-finite or out-of-range probability.
double codelength_bits(std::span<const double> gold_probabilities);

/// Probability the model assigns to the gold label (single-label) or to the
/// exact gold label set under independent per-class sigmoids (multi-label).
double gold_probability(std::span<const double> probabilities, const LabelSet& gold,
                        Labeling labeling);

/// -log2 P(gold | vector) summed over the data, dropout off.
double data_codelength(const ProbeModel& model, const PooledSet& data);

/// (p / 2) * log2 n; 0 when p or n is 0.
double complexity_bits(std::uint64_t p, std::uint64_t n);

Codelength two_part_codelength(const ProbeModel& model, const PooledSet& data);

/// Bits per example of the uniform code: log2 C for single-label tasks,
/// C bits (one per class decision) for multi-label ones.
double uniform_bits_per_example(std::size_t classes, Labeling labeling);

/// Cumulative block boundaries as fractions of the stream, strictly
/// increasing in (0, 1] and ending at 1.
struct PrequentialSchedule {
    std::vector<double> fractions;

    static PrequentialSchedule standard();
    /// "default" or a comma-separated list of percentages, e.g. "10,50,100".
    static PrequentialSchedule parse(std::string_view text);

    void validate() const;
    /// Block end indices for a stream of n examples. Throws DataError when a
    /// block would be empty.
    std::vector<std::size_t> block_ends(std::size_t n) const;
};

struct PrequentialResult {
    double total_bits = 0.0;
    double uniform_bits = 0.0; // n * bits of the uniform code
    std::size_t n = 0;
    std::vector<std::size_t> block_ends;
    std::vector<double> block_bits;
};

/// Online code: the first block is sent with the uniform code; every later
/// block is coded by a fresh probe (one replica, same recipe) trained on all
/// preceding examples. The stream order is shuffled by `seed`.
PrequentialResult prequential_codelength(const ProbeConfig& config, const PooledSet& stream,
                                         const PrequentialSchedule& schedule, std::uint64_t seed);

struct EncoderComparison {
    double reference_bits = 0.0;
    double candidate_bits = 0.0;
    double difference = 0.0; // reference - candidate; positive when the candidate is shorter
    double ratio = 0.0;      // candidate / reference
};

/// Throws DataError when the two codes cover different dataset sizes.
EncoderComparison compare_encoders(const Codelength& reference, const Codelength& candidate);
EncoderComparison compare_encoders(const PrequentialResult& reference,
                                   const PrequentialResult& candidate);

std::string codelength_to_json(const Codelength& code);
std::string prequential_to_json(const PrequentialResult& result);
std::string comparison_to_json(const EncoderComparison& comparison);

} // namespace epb
