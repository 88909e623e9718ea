#include "epb/embedstore.hpp"

#include "epb/errors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace epb {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw DataError("truncated archive at byte offset " + std::to_string(pos_) +
                            ": expected " + std::to_string(n) + " bytes of " + what + ", found " +
                            std::to_string(remaining()));
        }
    }

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
        }
        pos_ += sizeof(T);
        return value;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace

EmbeddingArchive::EmbeddingArchive(std::uint32_t dim) : dim_(dim) {
    if (dim == 0) {
        throw DataError("embedding dimension must be positive");
    }
}

void EmbeddingArchive::add(std::uint64_t sentence_id, std::uint32_t n_tokens,
                           std::span<const float> values) {
    if (values.size() != static_cast<std::size_t>(n_tokens) * dim_) {
        throw DataError("dimension mismatch for sentence " + std::to_string(sentence_id) +
                        ": got " + std::to_string(values.size()) + " values for " +
                        std::to_string(n_tokens) + " tokens of width " + std::to_string(dim_));
    }
    if (!index_.emplace(sentence_id, entries_.size()).second) {
        throw DataError("duplicate sentence id " + std::to_string(sentence_id) + " in archive");
    }
    entries_.push_back(Entry{sentence_id, n_tokens, values_.size()});
    values_.insert(values_.end(), values.begin(), values.end());
}

const EmbeddingArchive::Entry& EmbeddingArchive::entry(std::uint64_t sentence_id) const {
    const auto it = index_.find(sentence_id);
    if (it == index_.end()) {
        throw DataError("sentence " + std::to_string(sentence_id) + " missing from archive");
    }
    return entries_[it->second];
}

std::span<const float> EmbeddingArchive::matrix(std::uint64_t sentence_id) const {
    const Entry& e = entry(sentence_id);
    return std::span<const float>(values_).subspan(e.offset,
                                                   static_cast<std::size_t>(e.n_tokens) * dim_);
}

std::span<const float> EmbeddingArchive::row(std::uint64_t sentence_id,
                                             std::uint32_t token) const {
    const Entry& e = entry(sentence_id);
    if (token >= e.n_tokens) {
        throw DataError("token " + std::to_string(token) + " out of bounds for sentence " +
                        std::to_string(sentence_id));
    }
    return std::span<const float>(values_).subspan(e.offset + static_cast<std::size_t>(token) * dim_,
                                                   dim_);
}

std::vector<std::uint8_t> serialize_archive(const EmbeddingArchive& archive) {
    std::vector<std::uint8_t> out(kArchiveMagic.begin(), kArchiveMagic.end());
    out.reserve(16 + archive.values().size() * 4 + archive.size() * 12);
    put_le<std::uint32_t>(out, archive.dim());
    put_le<std::uint64_t>(out, archive.size());
    for (const auto& e : archive.entries()) {
        put_le<std::uint64_t>(out, e.sentence_id);
        put_le<std::uint32_t>(out, e.n_tokens);
        for (const float v : archive.matrix(e.sentence_id)) {
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

EmbeddingArchive parse_archive(std::span<const std::uint8_t> bytes) {
    Reader reader(bytes);
    const auto magic = reader.take(kArchiveMagic.size(), "magic header");
    if (!std::equal(magic.begin(), magic.end(), kArchiveMagic.begin())) {
        throw DataError("bad magic at byte offset 0: not an EPEMB1 archive");
    }
    const std::size_t dim_offset = reader.offset();
    const auto dim = reader.get<std::uint32_t>("dimension");
    if (dim == 0) {
        throw DataError("dimension mismatch at byte offset " + std::to_string(dim_offset) +
                        ": dimension is zero");
    }
    EmbeddingArchive archive(dim);
    const auto count = reader.get<std::uint64_t>("sentence count");
    std::vector<float> row_buffer;
    for (std::uint64_t s = 0; s < count; ++s) {
        const std::size_t record_offset = reader.offset();
        const auto id = reader.get<std::uint64_t>("sentence id");
        const auto n_tokens = reader.get<std::uint32_t>("token count");
        const std::size_t n_values = static_cast<std::size_t>(n_tokens) * dim;
        const auto raw = reader.take(n_values * 4, "embedding values");
        row_buffer.resize(n_values);
        for (std::size_t i = 0; i < n_values; ++i) {
            std::uint32_t word = 0;
            for (std::size_t b = 0; b < 4; ++b) {
                word |= static_cast<std::uint32_t>(raw[4 * i + b]) << (8 * b);
            }
            row_buffer[i] = std::bit_cast<float>(word);
        }
        try {
            archive.add(id, n_tokens, row_buffer);
        } catch (const DataError& e) {
            throw DataError(std::string(e.what()) + " (record at byte offset " +
                            std::to_string(record_offset) + ")");
        }
    }
    if (reader.remaining() != 0) {
        throw DataError("trailing bytes at byte offset " + std::to_string(reader.offset()) +
                        " after " + std::to_string(count) + " sentences");
    }
    return archive;
}

EmbeddingArchive load_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());
    try {
        return parse_archive(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_archive(const std::filesystem::path& path, const EmbeddingArchive& archive) {
    const auto bytes = serialize_archive(archive);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

namespace {

void accumulate_span_mean(const EmbeddingArchive& archive, const EmbeddingArchive::Entry& entry,
                          Span span, std::vector<double>& out) {
    if (span.start >= span.end || span.end > entry.n_tokens) {
        throw DataError("span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                        ") out of bounds for sentence " + std::to_string(entry.sentence_id) +
                        " with " + std::to_string(entry.n_tokens) + " tokens");
    }
    const std::uint32_t dim = archive.dim();
    std::vector<double> sum(dim, 0.0);
    for (std::uint32_t t = span.start; t < span.end; ++t) {
        const float* row = archive.values().data() + entry.offset + static_cast<std::size_t>(t) * dim;
        for (std::uint32_t k = 0; k < dim; ++k) {
            sum[k] += static_cast<double>(row[k]);
        }
    }
    const double count = static_cast<double>(span.size());
    for (std::uint32_t k = 0; k < dim; ++k) {
        out[k] += sum[k] / count;
    }
}

} // namespace

std::vector<float> pool(const EmbeddingArchive& archive, std::uint64_t sentence_id, Span span1,
                        std::optional<Span> span2) {
    const auto& entry = archive.entry(sentence_id);
    std::vector<double> acc(archive.dim(), 0.0);
    accumulate_span_mean(archive, entry, span1, acc);
    double spans = 1.0;
    if (span2) {
        accumulate_span_mean(archive, entry, *span2, acc);
        spans = 2.0;
    }
    std::vector<float> out(archive.dim());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = static_cast<float>(acc[k] / spans);
    }
    return out;
}

void PooledSet::push_back(std::span<const float> vector, LabelSet labels) {
    if (dim == 0) {
        dim = static_cast<std::uint32_t>(vector.size());
    }
    if (vector.size() != dim) {
        throw DataError("pooled vector width mismatch");
    }
    features.insert(features.end(), vector.begin(), vector.end());
    gold.push_back(std::move(labels));
}

PooledSet PooledSet::subset(std::span<const std::size_t> indices) const {
    PooledSet out;
    out.dim = dim;
    out.features.reserve(indices.size() * dim);
    for (const auto i : indices) {
        const auto r = row(i);
        out.features.insert(out.features.end(), r.begin(), r.end());
        out.gold.push_back(gold[i]);
    }
    return out;
}

PooledSet pool_examples(const EmbeddingArchive& archive,
                        std::span<const LabeledExample> examples) {
    PooledSet out;
    out.dim = archive.dim();
    out.features.reserve(examples.size() * archive.dim());
    for (const auto& example : examples) {
        out.push_back(pool(archive, example.sentence_id, example.span1, example.span2),
                      example.gold);
    }
    return out;
}

EmbeddingArchive pooled_to_archive(const PooledSet& pooled) {
    EmbeddingArchive archive(pooled.dim);
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        archive.add(i, 1, pooled.row(i));
    }
    return archive;
}

} // namespace epb
