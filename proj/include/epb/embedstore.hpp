#pragma once

#include "epb/corpus.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace epb {

// EPEMB1 layout, all integers and floats little-endian:
//   magic "EPEMB1\0\0" | u32 dim | u64 sentence count |
//   per sentence: u64 id | u32 n_tokens | n_tokens * dim f32
inline constexpr std::array<std::uint8_t, 8> kArchiveMagic = {0x45, 0x50, 0x45, 0x4D,
                                                             0x42, 0x31, 0x00, 0x00};

/// Read-only per-token embedding matrices keyed by sentence id.
class EmbeddingArchive {
public:
    struct Entry {
        std::uint64_t sentence_id = 0;
        std::uint32_t n_tokens = 0;
        std::size_t offset = 0; // into values()
    };

    explicit EmbeddingArchive(std::uint32_t dim);

    /// Appends one sentence matrix (row-major, n_tokens x dim).
    void add(std::uint64_t sentence_id, std::uint32_t n_tokens, std::span<const float> values);

    std::uint32_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool contains(std::uint64_t sentence_id) const { return index_.count(sentence_id) != 0; }

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    const std::vector<float>& values() const noexcept { return values_; }

    /// Throws DataError when the sentence is missing.
    const Entry& entry(std::uint64_t sentence_id) const;
    std::span<const float> matrix(std::uint64_t sentence_id) const;
    std::span<const float> row(std::uint64_t sentence_id, std::uint32_t token) const;

private:
    std::uint32_t dim_;
    std::vector<Entry> entries_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
    std::vector<float> values_;
};

std::vector<std::uint8_t> serialize_archive(const EmbeddingArchive& archive);
/// Errors name the byte offset at which parsing failed.
EmbeddingArchive parse_archive(std::span<const std::uint8_t> bytes);

EmbeddingArchive load_archive(const std::filesystem::path& path);
void write_archive(const std::filesystem::path& path, const EmbeddingArchive& archive);

/// Mean of the span's token rows; for two spans the mean of the two span
/// means. Accumulates in double and rounds once to float.
std::vector<float> pool(const EmbeddingArchive& archive, std::uint64_t sentence_id, Span span1,
                        std::optional<Span> span2 = std::nullopt);

/// Probe inputs: one pooled vector and gold label set per example.
struct PooledSet {
    std::uint32_t dim = 0;
    std::vector<float> features; // size() x dim, row-major
    std::vector<LabelSet> gold;

    std::size_t size() const noexcept { return gold.size(); }
    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(features).subspan(i * dim, dim);
    }
    void push_back(std::span<const float> vector, LabelSet labels);
    PooledSet subset(std::span<const std::size_t> indices) const;
};

PooledSet pool_examples(const EmbeddingArchive& archive,
                        std::span<const LabeledExample> examples);

/// Pooled vectors as an EPEMB1 archive with one single-row entry per
/// example, keyed by example ordinal.
EmbeddingArchive pooled_to_archive(const PooledSet& pooled);

} // namespace epb
