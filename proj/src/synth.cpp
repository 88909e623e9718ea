#include "epb/synth.hpp"

#include "epb/errors.hpp"
#include "epb/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>

namespace epb {

std::string_view to_string(EmbeddingMode mode) {
    return mode == EmbeddingMode::informative ? "informative" : "noise";
}

EmbeddingMode parse_embedding_mode(std::string_view name) {
    if (name == "informative") return EmbeddingMode::informative;
    if (name == "noise") return EmbeddingMode::noise;
    throw std::invalid_argument("unknown embedding mode '" + std::string(name) + "'");
}

std::string_view to_string(KeyPool pool) {
    switch (pool) {
    case KeyPool::exact:
        return "exact";
    case KeyPool::ambiguous:
        return "ambiguous";
    case KeyPool::unseen:
        return "unseen";
    case KeyPool::filler:
        return "filler";
    }
    return "?";
}

namespace {

constexpr std::size_t kContextWords = 8;
constexpr double kClassSeparation = 4.0;

struct TestCounts {
    std::size_t exact = 0;
    std::size_t ambiguous = 0;
    std::size_t unseen = 0;
};

TestCounts test_counts(const SynthConfig& c) {
    TestCounts t;
    const double n = static_cast<double>(c.n_test);
    t.exact = static_cast<std::size_t>(std::llround(c.rho_exact * n));
    t.ambiguous = static_cast<std::size_t>(std::llround(c.rho_ambig * n));
    if (t.exact + t.ambiguous > c.n_test) {
        t.ambiguous = c.n_test - t.exact;
    }
    t.unseen = c.n_test - t.exact - t.ambiguous;
    return t;
}

std::size_t words_per_key(const SynthConfig& c) { return c.arity == Arity::two_span ? 2 : 1; }

} // namespace

void SynthConfig::validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("synth config: " + what); };
    if (classes < 2) bad("at least two classes are required");
    if (n_train < 1 || n_test < 1) bad("train and test sizes must be at least 1");
    if (!(rho_exact >= 0.0 && rho_exact <= 1.0)) bad("rho_exact must lie in [0, 1]");
    if (!(rho_ambig >= 0.0 && rho_ambig <= 1.0)) bad("rho_ambig must lie in [0, 1]");
    if (rho_exact + rho_ambig > 1.0 + 1e-12) bad("rho_exact + rho_ambig must not exceed 1");
    if (dim < classes) bad("dim must be at least the number of classes");

    const auto t = test_counts(*this);
    auto need = [&](std::size_t points, std::size_t keys, const char* pool) {
        if (points > 0 && keys == 0) {
            throw DataError(std::string("vocabulary too small: the ") + pool +
                            " pool needs at least one key");
        }
    };
    need(t.exact, exact_keys, "exact");
    need(t.ambiguous, ambiguous_keys, "ambiguous");
    need(t.unseen, unseen_keys, "unseen");
    const std::size_t keys = exact_keys + ambiguous_keys + unseen_keys + filler_keys;
    if (keys * words_per_key(*this) > vocab_size) {
        throw DataError("vocabulary too small: " + std::to_string(keys) + " distinct keys need " +
                        std::to_string(keys * words_per_key(*this)) + " word types, vocabulary has " +
                        std::to_string(vocab_size));
    }
    const std::size_t coverage = exact_keys + 2 * ambiguous_keys;
    if (coverage > n_train) {
        throw DataError("n_train = " + std::to_string(n_train) + " cannot cover " +
                        std::to_string(coverage) + " exact and ambiguous key occurrences");
    }
    if (exact_keys + ambiguous_keys + filler_keys == 0) {
        throw DataError("no key pool is available for training examples");
    }
}

std::string SynthConfig::to_json() const {
    return nlohmann::json{{"vocab_size", vocab_size},
                          {"classes", classes},
                          {"n_train", n_train},
                          {"n_test", n_test},
                          {"rho_exact", rho_exact},
                          {"rho_ambig", rho_ambig},
                          {"exact_keys", exact_keys},
                          {"ambiguous_keys", ambiguous_keys},
                          {"unseen_keys", unseen_keys},
                          {"filler_keys", filler_keys},
                          {"arity", std::string(epb::to_string(arity))},
                          {"mode", std::string(epb::to_string(mode))},
                          {"dim", dim},
                          {"seed", seed}}
        .dump(2);
}

SynthConfig SynthConfig::from_json(std::string_view text) {
    SynthConfig c;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("synth config is not valid JSON: ") + e.what());
    }
    try {
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.classes = j.value("classes", c.classes);
        c.n_train = j.value("n_train", c.n_train);
        c.n_test = j.value("n_test", c.n_test);
        c.rho_exact = j.value("rho_exact", c.rho_exact);
        c.rho_ambig = j.value("rho_ambig", c.rho_ambig);
        c.exact_keys = j.value("exact_keys", c.exact_keys);
        c.ambiguous_keys = j.value("ambiguous_keys", c.ambiguous_keys);
        c.unseen_keys = j.value("unseen_keys", c.unseen_keys);
        c.filler_keys = j.value("filler_keys", c.filler_keys);
        if (j.contains("arity")) {
            const auto arity = j.at("arity").get<std::string>();
            if (arity == "one-span") c.arity = Arity::one_span;
            else if (arity == "two-span") c.arity = Arity::two_span;
            else throw std::invalid_argument("unknown arity '" + arity + "'");
        }
        if (j.contains("mode")) c.mode = parse_embedding_mode(j.at("mode").get<std::string>());
        c.dim = j.value("dim", c.dim);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad synth config field: ") + e.what());
    }
    return c;
}

std::size_t GroundTruth::count(Heuristic heuristic) const {
    std::size_t n = 0;
    for (const auto& p : points) {
        switch (heuristic) {
        case Heuristic::mem_exact:
            n += p.mem_exact ? 1 : 0;
            break;
        case Heuristic::mem_freq:
            n += p.mem_freq ? 1 : 0;
            break;
        case Heuristic::mem_uniform:
            n += p.mem_uniform ? 1 : 0;
            break;
        }
    }
    return n;
}

double GroundTruth::accuracy(Heuristic heuristic) const {
    return points.empty() ? 0.0
                          : 100.0 * static_cast<double>(count(heuristic)) /
                                static_cast<double>(points.size());
}

double GroundTruth::expected_accuracy(Heuristic heuristic) const {
    if (points.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& p : points) {
        switch (heuristic) {
        case Heuristic::mem_exact:
            sum += p.mem_exact ? 1.0 : 0.0;
            break;
        case Heuristic::mem_freq:
            sum += p.mem_freq_expected;
            break;
        case Heuristic::mem_uniform:
            sum += p.mem_uniform_expected;
            break;
        }
    }
    return 100.0 * sum / static_cast<double>(points.size());
}

std::string GroundTruth::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& p : points) {
        rows.push_back({{"sentence_id", p.sentence_id},
                        {"target", p.target},
                        {"key", p.key},
                        {"pool", std::string(to_string(p.pool))},
                        {"mem_exact", p.mem_exact},
                        {"mem_freq", p.mem_freq},
                        {"mem_uniform", p.mem_uniform},
                        {"mem_freq_expected", p.mem_freq_expected},
                        {"mem_uniform_expected", p.mem_uniform_expected}});
    }
    nlohmann::json summary;
    for (const auto h : kAllHeuristics) {
        summary[std::string(to_string(h))] = {{"accuracy", accuracy(h)},
                                              {"classifiable", count(h)}};
    }
    return nlohmann::json{{"summary", summary}, {"points", rows}}.dump(2);
}

namespace {

struct Draw {
    std::size_t key = 0; // global key id
    KeyPool pool = KeyPool::unseen;
    std::uint32_t label = 0;
};

struct Pools {
    std::size_t exact_begin, ambiguous_begin, unseen_begin, filler_begin, end;

    explicit Pools(const SynthConfig& c)
        : exact_begin(0),
          ambiguous_begin(c.exact_keys),
          unseen_begin(ambiguous_begin + c.ambiguous_keys),
          filler_begin(unseen_begin + c.unseen_keys),
          end(filler_begin + c.filler_keys) {}
};

std::vector<std::string> key_words(const SynthConfig& c, std::size_t key) {
    if (c.arity == Arity::two_span) {
        return {"w" + std::to_string(2 * key), "w" + std::to_string(2 * key + 1)};
    }
    return {"w" + std::to_string(key)};
}

} // namespace

SynthOutput generate(const SynthConfig& config) {
    config.validate();
    const Pools pools(config);
    const auto counts = test_counts(config);
    const auto C = static_cast<std::uint32_t>(config.classes);
    Rng rng(derive_seed(config.seed, Stream::synth_corpus));

    // Fixed labels per key.
    std::vector<std::uint32_t> exact_label(config.exact_keys), filler_label(config.filler_keys);
    std::vector<std::array<std::uint32_t, 2>> ambiguous_labels(config.ambiguous_keys);
    for (auto& l : exact_label) l = static_cast<std::uint32_t>(rng.below(C));
    for (auto& pair : ambiguous_labels) {
        const auto a = static_cast<std::uint32_t>(rng.below(C));
        const auto b = static_cast<std::uint32_t>((a + 1 + rng.below(C - 1)) % C);
        pair = {std::min(a, b), std::max(a, b)};
    }
    for (auto& l : filler_label) l = static_cast<std::uint32_t>(rng.below(C));

    auto exact_draw = [&](std::size_t local) {
        return Draw{pools.exact_begin + local, KeyPool::exact, exact_label[local]};
    };
    auto ambiguous_draw = [&](std::size_t local, std::uint32_t label) {
        return Draw{pools.ambiguous_begin + local, KeyPool::ambiguous, label};
    };

    // Test points.
    std::vector<KeyPool> test_pools;
    test_pools.insert(test_pools.end(), counts.exact, KeyPool::exact);
    test_pools.insert(test_pools.end(), counts.ambiguous, KeyPool::ambiguous);
    test_pools.insert(test_pools.end(), counts.unseen, KeyPool::unseen);
    rng.shuffle(std::span<KeyPool>(test_pools));
    std::vector<Draw> test;
    for (const auto pool : test_pools) {
        switch (pool) {
        case KeyPool::exact:
            test.push_back(exact_draw(rng.below(config.exact_keys)));
            break;
        case KeyPool::ambiguous: {
            const auto local = rng.below(config.ambiguous_keys);
            test.push_back(ambiguous_draw(local, ambiguous_labels[local][rng.below(2)]));
            break;
        }
        default:
            test.push_back(Draw{pools.unseen_begin + rng.below(config.unseen_keys),
                                KeyPool::unseen, static_cast<std::uint32_t>(rng.below(C))});
            break;
        }
    }

    // Train: every exact key once, every ambiguous key once per label, then
    // uniform draws over all train-visible key types.
    std::vector<Draw> train;
    for (std::size_t k = 0; k < config.exact_keys; ++k) train.push_back(exact_draw(k));
    for (std::size_t k = 0; k < config.ambiguous_keys; ++k) {
        train.push_back(ambiguous_draw(k, ambiguous_labels[k][0]));
        train.push_back(ambiguous_draw(k, ambiguous_labels[k][1]));
    }
    const std::size_t visible = config.exact_keys + config.ambiguous_keys + config.filler_keys;
    while (train.size() < config.n_train) {
        auto t = rng.below(visible);
        if (t < config.exact_keys) {
            train.push_back(exact_draw(t));
            continue;
        }
        t -= config.exact_keys;
        if (t < config.ambiguous_keys) {
            train.push_back(ambiguous_draw(t, ambiguous_labels[t][rng.below(2)]));
            continue;
        }
        t -= config.ambiguous_keys;
        train.push_back(Draw{pools.filler_begin + t, KeyPool::filler, filler_label[t]});
    }
    rng.shuffle(std::span<Draw>(train));

    // Sentences: context words around each key word.
    std::vector<std::string> labels;
    for (std::uint32_t c = 0; c < C; ++c) labels.push_back("L" + std::to_string(c));
    SynthOutput out;
    out.split.schema = TaskSchema("synth", config.arity, Labeling::single_label, labels);
    auto store = std::make_shared<SentenceStore>();

    struct Placed {
        std::uint64_t sentence_id;
        std::vector<std::uint32_t> key_positions;
    };
    std::vector<Placed> placed;
    auto place = [&](const Draw& draw, std::uint64_t sid, std::vector<LabeledExample>& into) {
        Sentence s;
        s.id = sid;
        std::vector<std::uint32_t> positions;
        auto context = [&] { s.tokens.push_back("c" + std::to_string(rng.below(kContextWords))); };
        context();
        for (const auto& word : key_words(config, draw.key)) {
            positions.push_back(static_cast<std::uint32_t>(s.tokens.size()));
            s.tokens.push_back(word);
            context();
        }
        LabeledExample ex;
        ex.sentence_id = sid;
        ex.target = 0;
        ex.span1 = Span{positions[0], positions[0] + 1};
        if (positions.size() > 1) ex.span2 = Span{positions[1], positions[1] + 1};
        ex.gold = {draw.label};
        into.push_back(ex);
        store->insert(std::move(s));
        placed.push_back(Placed{sid, positions});
    };
    std::uint64_t sid = 0;
    for (const auto& d : train) place(d, sid++, out.split.train);
    for (const auto& d : test) place(d, sid++, out.split.test);
    out.split.sentences = store;

    // Ground truth from the key ids.
    std::map<std::size_t, std::map<std::uint32_t, std::uint64_t>> train_counts;
    for (const auto& d : train) ++train_counts[d.key][d.label];
    for (std::size_t i = 0; i < test.size(); ++i) {
        const Draw& d = test[i];
        const LabeledExample& ex = out.split.test[i];
        GroundTruthPoint p;
        p.sentence_id = ex.sentence_id;
        p.target = ex.target;
        p.key = d.key;
        p.pool = d.pool;
        const auto it = train_counts.find(d.key);
        if (it != train_counts.end()) {
            const auto& by_label = it->second;
            std::uint64_t total = 0, best_count = 0;
            std::uint32_t best = 0;
            for (const auto& [label, n] : by_label) {
                total += n;
                if (n > best_count) {
                    best = label;
                    best_count = n;
                }
            }
            const auto gold_it = by_label.find(d.label);
            const std::uint64_t gold_n = gold_it == by_label.end() ? 0 : gold_it->second;
            p.mem_exact = by_label.size() == 1 && by_label.begin()->first == d.label;
            p.mem_freq = best == d.label;
            p.mem_freq_expected = static_cast<double>(gold_n) / static_cast<double>(total);
            std::vector<std::uint32_t> candidates;
            for (const auto& entry : by_label) candidates.push_back(entry.first);
            Rng draw(derive_seed(config.seed, Stream::mem_uniform, ex.sentence_id, ex.target));
            p.mem_uniform = candidates[draw.below(candidates.size())] == d.label;
            p.mem_uniform_expected = gold_n > 0 ? 1.0 / static_cast<double>(candidates.size()) : 0.0;
        }
        out.truth.points.push_back(p);
    }

    // Embeddings.
    const auto dim = static_cast<std::uint32_t>(config.dim);
    out.archive = EmbeddingArchive(dim);
    std::vector<float> matrix;
    auto type_vector = [&](std::size_t word, std::vector<double>& v) {
        Rng type_rng(derive_seed(config.seed, Stream::synth_embedding, word, 1));
        v.resize(dim);
        for (auto& x : v) x = type_rng.normal();
    };
    std::vector<double> type_row;
    auto emit = [&](const Sentence& s, const Placed& where, std::uint32_t label,
                    std::size_t key) {
        Rng noise(derive_seed(config.seed, Stream::synth_embedding, s.id, 0));
        matrix.assign(s.tokens.size() * dim, 0.0f);
        for (std::uint32_t t = 0; t < s.tokens.size(); ++t) {
            float* row = matrix.data() + static_cast<std::size_t>(t) * dim;
            const auto pos = std::find(where.key_positions.begin(), where.key_positions.end(), t);
            const bool is_key = pos != where.key_positions.end();
            if (is_key && config.mode == EmbeddingMode::noise) {
                const std::size_t word =
                    key * words_per_key(config) +
                    static_cast<std::size_t>(pos - where.key_positions.begin());
                type_vector(word, type_row);
                for (std::uint32_t k = 0; k < dim; ++k) row[k] = static_cast<float>(type_row[k]);
                continue;
            }
            for (std::uint32_t k = 0; k < dim; ++k) {
                double v = noise.normal();
                if (is_key && k == label) v += kClassSeparation;
                row[k] = static_cast<float>(v);
            }
        }
        out.archive.add(s.id, static_cast<std::uint32_t>(s.tokens.size()), matrix);
    };
    for (std::size_t i = 0; i < placed.size(); ++i) {
        const bool is_train = i < train.size();
        const Draw& d = is_train ? train[i] : test[i - train.size()];
        emit(store->at(placed[i].sentence_id), placed[i], d.label, d.key);
    }
    return out;
}

void write_synth(const std::filesystem::path& dir, const SynthOutput& output,
                 const SynthConfig& config) {
    std::filesystem::create_directories(dir);
    save_dataset(dir, output.split);
    write_archive(dir / (std::string(to_string(config.mode)) + ".epemb"), output.archive);
    std::ofstream truth(dir / "ground_truth.json");
    if (!truth) {
        throw DataError("cannot write " + (dir / "ground_truth.json").string());
    }
    truth << output.truth.to_json() << '\n';
    std::ofstream cfg(dir / "synth_config.json");
    cfg << config.to_json() << '\n';
}

} // namespace epb
