#include "epb/probes.hpp"

#include "epb/errors.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace epb {

std::string_view to_string(ProbeKind kind) {
    return kind == ProbeKind::linear ? "linear" : "mlp";
}

ProbeKind parse_probe_kind(std::string_view name) {
    if (name == "linear") return ProbeKind::linear;
    if (name == "mlp") return ProbeKind::mlp;
    throw std::invalid_argument("unknown probe kind '" + std::string(name) + "'");
}

void ProbeConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("probe config: " + what); };
    if (input_dim == 0) fail("input dimension must be positive");
    if (classes == 0) fail("class count must be positive");
    if (kind == ProbeKind::mlp && hidden == 0) fail("hidden dimension must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (epochs == 0) fail("epochs must be at least 1");
    if (batch == 0) fail("batch size must be at least 1");
    if (replicas == 0) fail("replicas must be at least 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail("learning rate must be finite and non-negative");
    if (!(warmup >= 0.0 && warmup <= 1.0)) fail("warmup fraction must lie in [0, 1]");
}

probe_math::Shape ProbeConfig::shape() const {
    return probe_math::Shape{kind, input_dim, kind == ProbeKind::mlp ? hidden : 0, classes,
                             labeling};
}

namespace {

void glorot_fill(Rng& rng, float* out, std::size_t fan_out, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < fan_out * fan_in; ++i) {
        out[i] = static_cast<float>((2.0 * rng.uniform() - 1.0) * limit);
    }
}

} // namespace

ProbeModel init(const ProbeConfig& config, std::size_t replica) {
    config.validate();
    const auto s = config.shape();
    ProbeModel model;
    model.config = config;
    model.params.assign(s.param_count(), 0.0f);
    Rng rng(derive_seed(config.seed, Stream::probe_init, replica));
    if (s.kind == ProbeKind::linear) {
        glorot_fill(rng, model.params.data(), s.c, s.d);
    } else {
        glorot_fill(rng, model.params.data(), s.h, s.d);
        glorot_fill(rng, model.params.data() + s.h * s.d + s.h, s.c, s.h);
    }
    return model;
}

namespace {

void fill_mask(Rng& rng, double rate, double* mask, std::size_t width) {
    const double keep = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < width; ++i) {
        mask[i] = rng.uniform() < rate ? 0.0 : keep;
    }
}

void check_finite(std::span<const float> vector) {
    for (const float v : vector) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite value in probe input");
        }
    }
}

} // namespace

std::vector<double> forward(const ProbeModel& model, std::span<const float> vector, Mode mode,
                            Rng* rng) {
    const auto s = model.config.shape();
    if (vector.size() != s.d) {
        throw DataError("probe input has width " + std::to_string(vector.size()) + ", expected " +
                        std::to_string(s.d));
    }
    check_finite(vector);
    std::vector<double> mask;
    if (mode == Mode::train && model.config.dropout > 0.0) {
        if (rng == nullptr) {
            throw std::invalid_argument("train-mode forward needs a generator for dropout");
        }
        mask.resize(s.mask_width());
        fill_mask(*rng, model.config.dropout, mask.data(), mask.size());
    }
    probe_math::Workspace ws;
    probe_math::forward_logits(s, model.params.data(), vector.data(),
                               mask.empty() ? nullptr : mask.data(), ws);
    std::vector<double> out;
    probe_math::probabilities(s, ws.logits, out);
    return out;
}

LabelSet decide(std::span<const double> probabilities, Labeling labeling) {
    LabelSet out;
    if (labeling == Labeling::multi_label) {
        for (std::size_t j = 0; j < probabilities.size(); ++j) {
            if (probabilities[j] > 0.5) out.push_back(static_cast<std::uint32_t>(j));
        }
        return out;
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < probabilities.size(); ++j) {
        if (probabilities[j] > probabilities[best]) best = j;
    }
    out.push_back(static_cast<std::uint32_t>(best));
    return out;
}

std::vector<std::vector<double>> predict_proba(const ProbeModel& model, const PooledSet& data) {
    std::vector<std::vector<double>> out;
    out.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        out.push_back(forward(model, data.row(i), Mode::eval));
    }
    return out;
}

std::vector<LabelSet> predict(const ProbeModel& model, const PooledSet& data) {
    std::vector<LabelSet> out;
    out.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        out.push_back(decide(forward(model, data.row(i), Mode::eval), model.config.labeling));
    }
    return out;
}

double selection_score(const ProbeModel& model, const PooledSet& data) {
    if (data.size() == 0) {
        return 0.0;
    }
    const auto predicted = predict(model, data);
    if (model.config.labeling == Labeling::single_label) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            correct += predicted[i] == data.gold[i] ? 1 : 0;
        }
        return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
    }
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& g = data.gold[i];
        const auto& p = predicted[i];
        std::size_t both = 0;
        for (const auto c : p) {
            both += std::binary_search(g.begin(), g.end(), c) ? 1 : 0;
        }
        tp += both;
        fp += p.size() - both;
        fn += g.size() - both;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    return denom == 0.0 ? 0.0 : 100.0 * 2.0 * static_cast<double>(tp) / denom;
}

std::size_t select_best_replica(std::span<const double> scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

namespace {

struct ReplicaResult {
    ProbeModel model;
    double dev_score = 0.0;
};

ReplicaResult train_replica(const ProbeConfig& config, std::size_t replica, const PooledSet& train,
                            const PooledSet& dev) {
    const auto s = config.shape();
    ProbeModel model = init(config, replica);
    std::vector<double> master(model.params.begin(), model.params.end());
    std::vector<double> grad(master.size());
    AdamW optimizer(master.size());

    const std::size_t n = train.size();
    const std::size_t steps_per_epoch = (n + config.batch - 1) / config.batch;
    const std::size_t total_steps = steps_per_epoch * config.epochs;
    const std::size_t mw = s.mask_width();

    std::vector<std::size_t> order(n);
    std::vector<float> x(config.batch * s.d);
    std::vector<LabelSet> gold(config.batch);
    std::vector<double> masks(config.dropout > 0.0 ? config.batch * mw : 0);
    Rng dropout_rng(derive_seed(config.seed, Stream::dropout, replica));
    probe_math::Workspace ws;
    model.log.step_loss.reserve(total_steps);

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng(derive_seed(config.seed, Stream::batch_order, replica, epoch))
            .shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < n; start += config.batch, ++step) {
            const std::size_t b = std::min(config.batch, n - start);
            for (std::size_t e = 0; e < b; ++e) {
                const auto row = train.row(order[start + e]);
                std::copy(row.begin(), row.end(), x.begin() + static_cast<long>(e * s.d));
                gold[e] = train.gold[order[start + e]];
            }
            if (!masks.empty()) {
                fill_mask(dropout_rng, config.dropout, masks.data(), b * mw);
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            const double loss =
                probe_math::batch_loss(s, master.data(), x.data(), gold.data(), b,
                                       masks.empty() ? nullptr : masks.data(), grad.data(), ws);
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite training loss at step " + std::to_string(step) +
                                   " (replica " + std::to_string(replica) + ")");
            }
            model.log.step_loss.push_back(loss);
            optimizer.step(master, grad,
                           warmup_linear_lr(step, total_steps, config.lr, config.warmup));
        }
        if (dev.size() > 0) {
            std::transform(master.begin(), master.end(), model.params.begin(),
                           [](double v) { return static_cast<float>(v); });
            model.log.epoch_dev_accuracy.push_back(selection_score(model, dev));
        }
    }
    std::transform(master.begin(), master.end(), model.params.begin(),
                   [](double v) { return static_cast<float>(v); });
    for (const float p : model.params) {
        if (!std::isfinite(p)) {
            throw NumericError("training produced non-finite parameters (replica " +
                               std::to_string(replica) + ")");
        }
    }
    ReplicaResult out;
    out.dev_score = dev.size() > 0 ? selection_score(model, dev) : 0.0;
    out.model = std::move(model);
    return out;
}

} // namespace

ProbeModel train(const ProbeConfig& config, const PooledSet& train, const PooledSet& dev) {
    config.validate();
    if (train.size() == 0) {
        throw DataError("cannot train a probe on an empty training set");
    }
    if (train.dim != config.input_dim || (dev.size() > 0 && dev.dim != config.input_dim)) {
        throw DataError("pooled vectors have width " + std::to_string(train.dim) +
                        " but the probe expects " + std::to_string(config.input_dim));
    }
    auto check_labels = [&](const PooledSet& set) {
        for (const auto& g : set.gold) {
            if (config.labeling == Labeling::single_label && g.size() != 1) {
                throw DataError("single-label probe given an example with " +
                                std::to_string(g.size()) + " labels");
            }
            for (const auto c : g) {
                if (c >= config.classes) {
                    throw DataError("label index " + std::to_string(c) + " exceeds class count");
                }
            }
        }
    };
    check_labels(train);
    check_labels(dev);

    const std::size_t replicas = dev.size() > 0 ? config.replicas : 1;
    std::vector<ReplicaResult> results;
    std::vector<double> scores;
    for (std::size_t r = 0; r < replicas; ++r) {
        results.push_back(train_replica(config, r, train, dev));
        scores.push_back(results.back().dev_score);
    }
    const std::size_t best = select_best_replica(scores);
    ProbeModel model = std::move(results[best].model);
    model.log.replica_dev_accuracy = scores;
    model.log.selected_replica = best;
    model.log.threads = 1;
    return model;
}

namespace {

constexpr std::array<std::uint8_t, 8> kModelMagic = {'E', 'P', 'P', 'R', 'O', 'B', 'E', 0};
constexpr std::uint32_t kModelVersion = 1;

nlohmann::json config_to_json(const ProbeModel& model) {
    const auto& c = model.config;
    nlohmann::json j = {
        {"kind", std::string(to_string(c.kind))},
        {"input_dim", c.input_dim},
        {"hidden", c.hidden},
        {"dropout", c.dropout},
        {"classes", c.classes},
        {"labeling", std::string(to_string(c.labeling))},
        {"epochs", c.epochs},
        {"batch", c.batch},
        {"lr", c.lr},
        {"warmup", c.warmup},
        {"seed", c.seed},
        {"replicas", c.replicas},
        {"selected_replica", model.log.selected_replica},
        {"replica_dev_accuracy", model.log.replica_dev_accuracy},
    };
    if (!model.manifest_digest.empty()) {
        j["manifest_digest"] = model.manifest_digest;
    }
    return j;
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t& pos, const char* what) {
    if (bytes.size() - pos < sizeof(T)) {
        throw DataError(std::string("truncated model file reading ") + what + " at byte offset " +
                        std::to_string(pos));
    }
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(static_cast<T>(bytes[pos + i]) << (8 * i));
    }
    pos += sizeof(T);
    return value;
}

} // namespace

std::vector<std::uint8_t> serialize_model(const ProbeModel& model) {
    std::vector<std::uint8_t> out(kModelMagic.begin(), kModelMagic.end());
    put_le<std::uint32_t>(out, kModelVersion);
    const std::string header = config_to_json(model).dump();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    put_le<std::uint64_t>(out, model.params.size());
    for (const float p : model.params) {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(p));
    }
    return out;
}

ProbeModel parse_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kModelMagic.size() ||
        !std::equal(kModelMagic.begin(), kModelMagic.end(), bytes.begin())) {
        throw DataError("bad magic: not a probe model file");
    }
    std::size_t pos = kModelMagic.size();
    const auto version = get_le<std::uint32_t>(bytes, pos, "version");
    if (version != kModelVersion) {
        throw DataError("unsupported model file version " + std::to_string(version));
    }
    const auto header_len = get_le<std::uint32_t>(bytes, pos, "header length");
    if (bytes.size() - pos < header_len) {
        throw DataError("truncated model header");
    }
    const std::string header(bytes.begin() + static_cast<long>(pos),
                             bytes.begin() + static_cast<long>(pos + header_len));
    pos += header_len;
    ProbeModel model;
    try {
        const auto j = nlohmann::json::parse(header);
        auto& c = model.config;
        c.kind = parse_probe_kind(j.at("kind").get<std::string>());
        c.input_dim = j.at("input_dim").get<std::size_t>();
        c.hidden = j.at("hidden").get<std::size_t>();
        c.dropout = j.at("dropout").get<double>();
        c.classes = j.at("classes").get<std::size_t>();
        const auto labeling = j.at("labeling").get<std::string>();
        c.labeling = labeling == "multi-label" ? Labeling::multi_label : Labeling::single_label;
        c.epochs = j.at("epochs").get<std::size_t>();
        c.batch = j.at("batch").get<std::size_t>();
        c.lr = j.at("lr").get<double>();
        c.warmup = j.at("warmup").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.replicas = j.at("replicas").get<std::size_t>();
        model.log.selected_replica = j.value("selected_replica", std::size_t{0});
        model.log.replica_dev_accuracy =
            j.value("replica_dev_accuracy", std::vector<double>{});
        model.manifest_digest = j.value("manifest_digest", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model header: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("malformed model header: ") + e.what());
    }
    const auto count = get_le<std::uint64_t>(bytes, pos, "parameter count");
    if (count != model.config.parameter_count()) {
        throw DataError("model holds " + std::to_string(count) + " parameters, config implies " +
                        std::to_string(model.config.parameter_count()));
    }
    model.params.resize(count);
    for (auto& p : model.params) {
        p = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos, "parameters"));
    }
    if (pos != bytes.size()) {
        throw DataError("trailing bytes at byte offset " + std::to_string(pos) + " in model file");
    }
    return model;
}

void save_model(const std::filesystem::path& path, const ProbeModel& model) {
    const auto bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

ProbeModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());
    return parse_model(bytes);
}

} // namespace epb
