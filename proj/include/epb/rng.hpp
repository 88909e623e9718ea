#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace epb {

// Every seeded operation draws from its own stream so results do not depend
// on the order in which unrelated operations consume randomness.
enum class Stream : std::uint64_t {
    dev_split = 1,
    rebalance = 2,
    mem_uniform = 3,
    probe_init = 4,
    batch_order = 5,
    dropout = 6,
    replica = 7,
    synth_corpus = 8,
    synth_embedding = 9,
    prequential_order = 10,
    prequential_block = 11,
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Counter-based seed derivation: a pure function of (seed, stream, a, b).
std::uint64_t derive_seed(std::uint64_t seed, Stream stream,
                          std::uint64_t a = 0, std::uint64_t b = 0) noexcept;

/// Small deterministic generator (SplitMix64). The distributions are
/// implemented here rather than taken from <random>, whose distribution
/// algorithms differ between standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next() noexcept;

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept;

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept;

    /// Standard normal via Box-Muller.
    double normal() noexcept;

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace epb
