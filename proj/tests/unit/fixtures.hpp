#pragma once

#include "epb/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace epb::testing {

// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("epb_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

// Builds a split one sentence per example; surfaces become single tokens
// wrapped in context so keys equal `surface`.
class SplitBuilder {
public:
    explicit SplitBuilder(TaskSchema schema) : store_(std::make_shared<SentenceStore>()) {
        split_.schema = std::move(schema);
    }

    SplitBuilder& add(std::vector<LabeledExample>& where, const std::string& surface,
                      const std::vector<std::string>& labels) {
        Sentence s;
        s.id = next_id_++;
        s.tokens = {"<", surface, ">"};
        store_->insert(s);
        LabeledExample e;
        e.sentence_id = s.id;
        e.span1 = Span{1, 2};
        for (const auto& l : labels) e.gold.push_back(*split_.schema.index_of(l));
        std::sort(e.gold.begin(), e.gold.end());
        where.push_back(e);
        return *this;
    }

    SplitBuilder& add_pair(std::vector<LabeledExample>& where, const std::string& a,
                           const std::string& b, const std::string& label) {
        Sentence s;
        s.id = next_id_++;
        s.tokens = {a, "x", b};
        store_->insert(s);
        LabeledExample e;
        e.sentence_id = s.id;
        e.span1 = Span{0, 1};
        e.span2 = Span{2, 3};
        e.gold = {*split_.schema.index_of(label)};
        where.push_back(e);
        return *this;
    }

    SplitBuilder& train(const std::string& surface, const std::string& label) {
        return add(split_.train, surface, {label});
    }
    SplitBuilder& test(const std::string& surface, const std::string& label) {
        return add(split_.test, surface, {label});
    }

    SplitBuilder& train_set(const std::string& surface, const std::vector<std::string>& labels) {
        return add(split_.train, surface, labels);
    }
    SplitBuilder& test_set(const std::string& surface, const std::vector<std::string>& labels) {
        return add(split_.test, surface, labels);
    }
    SplitBuilder& train_pair(const std::string& a, const std::string& b, const std::string& label) {
        return add_pair(split_.train, a, b, label);
    }
    SplitBuilder& test_pair(const std::string& a, const std::string& b, const std::string& label) {
        return add_pair(split_.test, a, b, label);
    }

    DatasetSplit build() {
        split_.sentences = store_;
        return split_;
    }

private:
    DatasetSplit split_;
    std::shared_ptr<SentenceStore> store_;
    std::uint64_t next_id_ = 0;
};

} // namespace epb::testing
